#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sgdm/model.hpp"
#include "sgdm/text.hpp"

namespace sgdm {

// Full-resolution binary object mask; 1 marks pixels inside the object.
struct ObjectMask {
  int h = 0;
  int w = 0;
  std::vector<float> values;  // exactly 0.0 or 1.0, row-major

  int64_t area() const;
  bool empty_mask() const { return area() == 0; }
  float at(int r, int c) const { return values[static_cast<size_t>(r) * w + c]; }

  // Editing needs both regions to exist.
  void validate_for_edit() const;

  static ObjectMask from_tensor(const Tensor& t);  // threshold at 0.5
  Tensor to_tensor() const;
};

// Per-resolution downsampled masks. `soft` is the area-average pooled mask;
// `hard` thresholds it at 0.5 with ties kept inside.
struct MaskLevel {
  int h = 0;
  int w = 0;
  std::vector<float> soft;
  std::vector<float> hard;
};

struct MaskPyramid {
  std::map<std::pair<int, int>, MaskLevel> levels;

  const MaskLevel& level_for(int h, int w) const;
};

MaskPyramid build_pyramid(const ObjectMask& mask,
                          const std::vector<AttentionSite>& sites);

// Constraint variants, ordered as in the ablation ladder. `token_only`
// constrains cross-attention maps and leaves self-attention untouched;
// `soft` keeps the hard mask on cross maps and applies the pooled soft mask
// to self maps; `hard` uses the thresholded mask for both.
enum class ConstraintMode { none, token_only, soft, hard };

std::string to_string(ConstraintMode mode);
ConstraintMode constraint_mode_from_string(const std::string& s);

struct ReweightConfig {
  float scale = 1.0f;
  std::vector<int> target;  // token columns whose prompt word changed
};

struct ConstraintOptions {
  // The written algorithm leaves rows sub-stochastic after masking; this flag
  // rescales each row back to unit mass (zero rows stay zero). For hard masks
  // it reproduces masking the pre-softmax logits to -inf.
  bool renormalize_rows = false;
};

// Cross maps: columns in j_in are multiplied by the mask, columns in j_out by
// its complement, and the <bos> column is zeroed (all non-none modes).
Tensor constrain_cross(const Tensor& attn, const MaskLevel& level,
                       const std::vector<int>& j_in,
                       const std::vector<int>& j_out, int bos_index,
                       ConstraintMode mode, const ConstraintOptions& opts = {});

// Self maps: column q is multiplied by the mask when pixel q is inside the
// object and by the complement otherwise. No-op under none and token_only.
Tensor constrain_self(const Tensor& attn, const MaskLevel& level,
                      ConstraintMode mode, const ConstraintOptions& opts = {});

// Multiplies the target token columns by `scale`; applied before any
// constraint so changed-word columns keep their boost.
Tensor reweight_cross(const Tensor& attn, const ReweightConfig& cfg);

// Bundles the above into a hook keyed by site kind and resolution.
AttentionTransform make_transform(const MaskPyramid& pyramid,
                                  const TokenizedPrompt& prompt,
                                  ConstraintMode mode,
                                  const ReweightConfig& reweight = {},
                                  const ConstraintOptions& opts = {});

// Grayscale PGM heatmap of a flattened [h*w] map, normalized to its max.
void write_heatmap_pgm(const std::string& path, const std::vector<float>& map,
                       int h, int w);

}  // namespace sgdm
