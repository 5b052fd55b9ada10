#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgdm/attention_control.hpp"
#include "sgdm/diffusion.hpp"
#include "sgdm/model.hpp"

namespace sgdm {

// Latent codec seam. The toy engine diffuses directly in pixel space, so the
// default codec is the identity; a learned autoencoder can slot in behind the
// same interface.
class Codec {
 public:
  virtual ~Codec() = default;
  virtual Tensor encode(const Tensor& image) const = 0;
  virtual Tensor decode(const Tensor& latent) const = 0;
};

class IdentityCodec : public Codec {
 public:
  Tensor encode(const Tensor& image) const override { return image; }
  Tensor decode(const Tensor& latent) const override { return latent; }
};

struct EditRequest {
  Tensor x_src;                    // [C, H, W] in [0, 1]
  PromptPair p_src;
  PromptPair p_edit;
  std::optional<ObjectMask> mask;  // inferred from p_src when absent
  GuidanceConfig guidance;
  int steps = 50;
  ConstraintMode mode = ConstraintMode::hard;
  ConstraintOptions constraint_opts;
  // Clamp the implied clean-image prediction to the data range before every
  // DDIM move (the usual clip_denoised sampler option). Keeps the ascent and
  // descent trajectories in-distribution for the toy model.
  bool clip_denoised = true;
  uint64_t seed = 0;
  bool collect_step_diagnostics = false;
  bool collect_attention_maps = false;  // per-token mean cross maps
};

// Ordered latents recorded while ascending to noise; latents[0] is the
// encoded source, latents[S] the inverted noise.
struct InversionTrajectory {
  std::vector<Tensor> latents;

  int steps() const { return static_cast<int>(latents.size()) - 1; }
};

struct StepDiagnostics {
  int index = 0;  // grid position, counting down from S
  int t = 0;
  // Cross-attention mass of inside-token columns landing outside the mask,
  // summed over layers/heads after the transform.
  double inside_mass_outside_mask = 0.0;
  double blend_delta = 0.0;  // L2 norm of what blending replaced
};

struct EditDiagnostics {
  int64_t hook_invocations = 0;  // generation phase, both model passes
  std::vector<StepDiagnostics> steps;
  std::vector<std::string> warnings;
  // When requested: per token column, the mean cross-attention map at image
  // resolution (averaged over heads, layers at full res, and steps).
  std::vector<std::vector<float>> mean_cross_attention;
};

struct EditResult {
  Tensor x_edit;
  ObjectMask mask;  // the mask actually used
  InversionTrajectory trajectory;
  EditDiagnostics diagnostics;
};

// out = z where mask is 1, z_bar elsewhere; bit-exact copies on both sides.
Tensor blend_background(const Tensor& z, const Tensor& z_bar,
                        const ObjectMask& mask);

// Runs the shape-guided editing loop against a fixed model/codec pair.
class Editor {
 public:
  Editor(const Denoiser& model, const Vocabulary& vocab,
         const NoiseSchedule& schedule, const Codec& codec);

  // Mask lookup via the synthetic oracle segmenter; the object class is the
  // class word appearing in p_src's inside text.
  ObjectMask infer_shape(const Tensor& x_src, const PromptPair& p_src,
                         std::vector<std::string>* warnings = nullptr) const;

  // Masked DDIM ascent under the constraint transform; conditional model
  // only, no guidance.
  InversionTrajectory invert(const Tensor& x_src, const PromptPair& p_src,
                             const ObjectMask& mask, ConstraintMode mode,
                             int steps, const ConstraintOptions& opts = {},
                             bool clip_denoised = true) const;

  // Inversion followed by guided generation with per-step background
  // blending; the result differs from x_src only inside the mask.
  EditResult edit(const EditRequest& request) const;

  // Same loop with blending disabled: both regions are generated, with the
  // constraint keeping inside and outside token responsibilities separate.
  // Requires nonempty inside and outside edit text.
  EditResult simultaneous_edit(const EditRequest& request) const;

  // Generation stage against a caller-supplied trajectory; validates that the
  // trajectory belongs to this request.
  EditResult generate(const EditRequest& request,
                      const InversionTrajectory& trajectory,
                      bool blend = true) const;

  const Denoiser& model() const { return model_; }
  const Vocabulary& vocab() const { return vocab_; }
  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  const Denoiser& model_;
  const Vocabulary& vocab_;
  const NoiseSchedule& schedule_;
  const Codec& codec_;
};

}  // namespace sgdm
