#include "sgdm/pipeline.hpp"

#include <cmath>

#include "sgdm/bench.hpp"

namespace sgdm {

Tensor blend_background(const Tensor& z, const Tensor& z_bar,
                        const ObjectMask& mask) {
  check(z.shape() == z_bar.shape(), ErrorKind::dimension,
        "blend_background: latents " + shape_str(z.shape()) + " vs " +
            shape_str(z_bar.shape()));
  check(z.ndim() == 3 && z.dim(1) == mask.h && z.dim(2) == mask.w,
        ErrorKind::dimension,
        "blend_background: mask " + std::to_string(mask.h) + "x" +
            std::to_string(mask.w) + " does not cover latent " +
            shape_str(z.shape()));
  Tensor out(z.shape());
  const float* pz = z.data().data();
  const float* pb = z_bar.data().data();
  float* po = out.mutable_data().data();
  const int64_t plane = static_cast<int64_t>(mask.h) * mask.w;
  const int64_t channels = z.dim(0);
  for (int64_t c = 0; c < channels; ++c) {
    const float* zc = pz + c * plane;
    const float* bc = pb + c * plane;
    float* oc = po + c * plane;
    for (int64_t p = 0; p < plane; ++p) {
      oc[p] = mask.values[static_cast<size_t>(p)] != 0.0f ? zc[p] : bc[p];
    }
  }
  return out;
}

namespace {

void check_latent_finite(const Tensor& z, const std::string& where) {
  for (float v : z.data()) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::numeric, "non-finite latent at " + where);
    }
  }
}

// Wraps the constraint transform with the per-edit instrumentation the
// diagnostics report on.
struct HookInstrumentation {
  const MaskPyramid* pyramid = nullptr;
  std::vector<int> j_in;
  int64_t invocations = 0;
  double inside_mass_outside_mask = 0.0;
  bool collect_maps = false;
  int image_h = 0, image_w = 0;
  int64_t map_samples = 0;
  std::vector<std::vector<double>> cross_sums;  // token -> h*w accumulator

  AttentionTransform wrap(AttentionTransform inner) {
    return [this, inner = std::move(inner)](const AttentionSite& site,
                                            const Tensor& attn) -> Tensor {
      Tensor out = inner ? inner(site, attn) : attn;
      ++invocations;
      if (site.kind == AttentionKind::cross) {
        accumulate_cross(site, out);
      }
      return out;
    };
  }

  void accumulate_cross(const AttentionSite& site, const Tensor& attn) {
    const int64_t heads = attn.dim(0);
    const int64_t hw = attn.dim(1);
    const int64_t cols = attn.dim(2);
    const float* p = attn.data().data();
    if (pyramid != nullptr) {
      const MaskLevel& level = pyramid->level_for(site.h, site.w);
      double mass = 0.0;
      for (int64_t head = 0; head < heads; ++head) {
        for (int64_t px = 0; px < hw; ++px) {
          if (level.hard[static_cast<size_t>(px)] != 0.0f) continue;
          const float* row = p + (head * hw + px) * cols;
          for (int j : j_in) mass += row[j];
        }
      }
      inside_mass_outside_mask += mass;
    }
    if (collect_maps && site.h == image_h && site.w == image_w) {
      if (cross_sums.empty()) {
        cross_sums.assign(static_cast<size_t>(cols),
                          std::vector<double>(static_cast<size_t>(hw), 0.0));
      }
      for (int64_t head = 0; head < heads; ++head) {
        for (int64_t px = 0; px < hw; ++px) {
          const float* row = p + (head * hw + px) * cols;
          for (int64_t j = 0; j < cols; ++j) {
            cross_sums[static_cast<size_t>(j)][static_cast<size_t>(px)] +=
                row[j];
          }
        }
      }
      ++map_samples;
    }
  }
};

double l2_delta(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

// clip_denoised: clamp the clean-image prediction implied by (z, eps) at
// timestep t to the pixel range and return the noise prediction that realizes
// the clamped value. Leaves eps untouched wherever the prediction is already
// in range.
Tensor clip_eps_to_data_range(const Tensor& z, const Tensor& eps, int t,
                              const NoiseSchedule& schedule) {
  const double ab = schedule.alpha_bar(t);
  const double sqrt_ab = std::sqrt(ab);
  const double sigma = std::sqrt(1.0 - ab);
  if (sigma == 0.0) return eps;
  Tensor out(eps.shape());
  const float* pz = z.data().data();
  const float* pe = eps.data().data();
  float* po = out.mutable_data().data();
  for (int64_t i = 0; i < eps.numel(); ++i) {
    const double x0 = (pz[i] - sigma * pe[i]) / sqrt_ab;
    const double clamped = std::clamp(x0, 0.0, 1.0);
    po[i] = x0 == clamped
                ? pe[i]
                : static_cast<float>((pz[i] - sqrt_ab * clamped) / sigma);
  }
  return out;
}

}  // namespace

Editor::Editor(const Denoiser& model, const Vocabulary& vocab,
               const NoiseSchedule& schedule, const Codec& codec)
    : model_(model), vocab_(vocab), schedule_(schedule), codec_(codec) {
  check(schedule.t_train == model.config().t_train, ErrorKind::consistency,
        "schedule and model disagree on t_train");
}

ObjectMask Editor::infer_shape(const Tensor& x_src, const PromptPair& p_src,
                               std::vector<std::string>* warnings) const {
  std::string class_name;
  for (const auto& word : p_src.inside_text) {
    if (is_shape_class_word(word)) {
      class_name = word;
      break;
    }
  }
  check(!class_name.empty(), ErrorKind::contract,
        "source prompt names no known object class");
  ObjectMask mask = oracle_segment(x_src, class_name);
  check(!mask.empty_mask(), ErrorKind::contract,
        "empty mask: class '" + class_name + "' was not found in the image");
  const double frac = static_cast<double>(mask.area()) /
                      static_cast<double>(mask.values.size());
  if ((frac < 0.02 || frac > 0.50) && warnings != nullptr) {
    warnings->push_back("inferred mask area " + std::to_string(frac) +
                        " outside [0.02, 0.50]");
  }
  return mask;
}

InversionTrajectory Editor::invert(const Tensor& x_src,
                                   const PromptPair& p_src,
                                   const ObjectMask& mask, ConstraintMode mode,
                                   int steps, const ConstraintOptions& opts,
                                   bool clip_denoised) const {
  check(steps >= 1, ErrorKind::parameter, "steps must be >= 1");
  const TokenizedPrompt tokens =
      tokenize(p_src, vocab_, model_.config().token_budget);
  const MaskPyramid pyramid = build_pyramid(mask, model_.sites());
  const AttentionTransform hook = make_transform(pyramid, tokens, mode, {}, opts);
  const TimestepGrid grid = make_grid(steps, schedule_.t_train);

  InversionTrajectory traj;
  Tensor z = codec_.encode(x_src);
  traj.latents.push_back(z);
  for (int i = 1; i <= steps; ++i) {
    const int t = grid.step(i);
    Tensor eps = model_.forward_eps(z, t, tokens, hook);
    if (clip_denoised) {
      // z sits at level t_prev during the ascent.
      eps = clip_eps_to_data_range(z, eps, grid.step(i - 1), schedule_);
    }
    z = ddim_invert_step(z, eps, grid.step(i - 1), t, schedule_);
    check_latent_finite(z, "inversion step " + std::to_string(i));
    traj.latents.push_back(z);
  }
  return traj;
}

EditResult Editor::generate(const EditRequest& request,
                            const InversionTrajectory& trajectory,
                            bool blend) const {
  check(request.x_src.defined(), ErrorKind::contract, "missing source image");
  check(request.mask.has_value(), ErrorKind::contract,
        "generate requires a resolved mask");
  const ObjectMask& mask = *request.mask;
  const int steps = request.steps;
  check(trajectory.steps() == steps, ErrorKind::consistency,
        "trajectory has " + std::to_string(trajectory.steps()) +
            " steps, request expects " + std::to_string(steps));
  const Tensor encoded = codec_.encode(request.x_src);
  check(trajectory.latents[0].shape() == encoded.shape(),
        ErrorKind::consistency, "trajectory does not match the source image");
  {
    const auto a = trajectory.latents[0].data();
    const auto b = encoded.data();
    for (int64_t i = 0; i < encoded.numel(); ++i) {
      check(a[i] == b[i], ErrorKind::consistency,
            "trajectory was computed from a different source image");
    }
  }

  const int budget = model_.config().token_budget;
  const TokenizedPrompt tokens_src = tokenize(request.p_src, vocab_, budget);
  const TokenizedPrompt tokens_edit = tokenize(request.p_edit, vocab_, budget);
  const TokenizedPrompt tokens_null = null_prompt(budget);

  ReweightConfig reweight;
  reweight.scale = request.guidance.reweight_scale;
  reweight.target = changed_token_columns(tokens_src, tokens_edit);

  const MaskPyramid pyramid = build_pyramid(mask, model_.sites());
  HookInstrumentation instr;
  instr.pyramid = &pyramid;
  instr.j_in = tokens_edit.j_in;
  instr.collect_maps = request.collect_attention_maps;
  instr.image_h = model_.config().image_size;
  instr.image_w = model_.config().image_size;
  const AttentionTransform hook = instr.wrap(make_transform(
      pyramid, tokens_edit, request.mode, reweight, request.constraint_opts));

  const TimestepGrid grid = make_grid(steps, schedule_.t_train);
  const float w_g = request.guidance.w_g;
  check(w_g >= 0.0f, ErrorKind::parameter, "guidance scale must be >= 0");

  EditResult result;
  result.mask = mask;
  result.trajectory = trajectory;

  Tensor z = trajectory.latents[static_cast<size_t>(steps)];
  for (int i = steps; i >= 1; --i) {
    const int t = grid.step(i);
    const int t_prev = grid.step(i - 1);
    instr.inside_mass_outside_mask = 0.0;

    Tensor eps_cond = model_.forward_eps(z, t, tokens_edit, hook);
    if (request.clip_denoised) {
      eps_cond = clip_eps_to_data_range(z, eps_cond, t, schedule_);
    }
    Tensor z_next;
    if (w_g == 0.0f) {
      // cfg_combine(z, z, 0) == z, so the unconditional pass is skipped.
      z_next = ddim_step(z, eps_cond, t, t_prev, schedule_);
    } else {
      Tensor eps_uncond = model_.forward_eps(z, t, tokens_null, hook);
      if (request.clip_denoised) {
        eps_uncond = clip_eps_to_data_range(z, eps_uncond, t, schedule_);
      }
      if (request.guidance.space == GuidanceSpace::latent) {
        const Tensor z_cond = ddim_step(z, eps_cond, t, t_prev, schedule_);
        const Tensor z_uncond = ddim_step(z, eps_uncond, t, t_prev, schedule_);
        z_next = cfg_combine(z_cond, z_uncond, w_g, request.guidance.anchor);
      } else {
        const Tensor eps =
            cfg_combine(eps_cond, eps_uncond, w_g, request.guidance.anchor);
        z_next = ddim_step(z, eps, t, t_prev, schedule_);
      }
    }

    double blend_delta = 0.0;
    if (blend) {
      const Tensor& z_bar = trajectory.latents[static_cast<size_t>(i - 1)];
      const Tensor blended = blend_background(z_next, z_bar, mask);
      blend_delta = l2_delta(blended, z_next);
      z_next = blended;
    }
    check_latent_finite(z_next, "generation step " + std::to_string(i));

    if (request.collect_step_diagnostics) {
      result.diagnostics.steps.push_back(
          {i, t, instr.inside_mass_outside_mask, blend_delta});
    }
    z = z_next;
  }

  result.x_edit = codec_.decode(z);
  result.diagnostics.hook_invocations = instr.invocations;
  if (instr.collect_maps && instr.map_samples > 0) {
    result.diagnostics.mean_cross_attention.reserve(instr.cross_sums.size());
    for (const auto& acc : instr.cross_sums) {
      std::vector<float> mean(acc.size());
      for (size_t i = 0; i < acc.size(); ++i) {
        mean[i] = static_cast<float>(
            acc[i] / static_cast<double>(instr.map_samples));
      }
      result.diagnostics.mean_cross_attention.push_back(std::move(mean));
    }
  }
  return result;
}

EditResult Editor::edit(const EditRequest& request) const {
  EditRequest req = request;
  EditDiagnostics pre_diag;
  if (!req.mask.has_value()) {
    req.mask = infer_shape(req.x_src, req.p_src, &pre_diag.warnings);
  }
  check(!req.mask->empty_mask(), ErrorKind::contract,
        "edit requires a mask with at least one inside pixel");
  check(!req.p_edit.inside_text.empty(), ErrorKind::contract,
        "edit prompt has empty inside text");

  const InversionTrajectory traj =
      invert(req.x_src, req.p_src, *req.mask, req.mode, req.steps,
             req.constraint_opts, req.clip_denoised);
  EditResult result = generate(req, traj, /*blend=*/true);
  result.diagnostics.warnings.insert(result.diagnostics.warnings.begin(),
                                     pre_diag.warnings.begin(),
                                     pre_diag.warnings.end());
  return result;
}

EditResult Editor::simultaneous_edit(const EditRequest& request) const {
  check(!request.p_edit.inside_text.empty() &&
            !request.p_edit.outside_text.empty(),
        ErrorKind::contract,
        "simultaneous edits need nonempty inside and outside edit text");
  EditRequest req = request;
  EditDiagnostics pre_diag;
  if (!req.mask.has_value()) {
    req.mask = infer_shape(req.x_src, req.p_src, &pre_diag.warnings);
  }
  const InversionTrajectory traj =
      invert(req.x_src, req.p_src, *req.mask, req.mode, req.steps,
             req.constraint_opts, req.clip_denoised);
  EditResult result = generate(req, traj, /*blend=*/false);
  result.diagnostics.warnings.insert(result.diagnostics.warnings.begin(),
                                     pre_diag.warnings.begin(),
                                     pre_diag.warnings.end());
  return result;
}

}  // namespace sgdm
