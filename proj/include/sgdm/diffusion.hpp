#pragma once

#include <cstdint>
#include <vector>

#include "sgdm/tensor.hpp"

namespace sgdm {

// Linear DDPM noise schedule. Index 0 is the clean-data convention
// (alpha_bar[0] == 1); training timesteps live in [1, t_train].
struct NoiseSchedule {
  int t_train = 0;
  std::vector<double> betas;       // betas[0] unused
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bars;  // cumulative product, strictly decreasing

  double alpha_bar(int t) const;
};

NoiseSchedule make_schedule(int t_train, double beta_start = 1e-4,
                            double beta_end = 0.02);

// Strictly decreasing timesteps [t_S, ..., t_1] drawn uniformly from
// [1, t_train]; the final update steps from t_1 down to the alpha_bar[0] == 1
// anchor. step(i) returns t_i with the convention t_0 == 0.
struct TimestepGrid {
  std::vector<int> timesteps;  // descending, size S

  int steps() const { return static_cast<int>(timesteps.size()); }
  int step(int i) const;  // i in [0, S]; step(0) == 0
};

TimestepGrid make_grid(int steps, int t_train);

enum class GuidanceSpace { latent, epsilon };
enum class CfgAnchor { conditional, unconditional };

struct GuidanceConfig {
  float w_g = 3.5f;
  float reweight_scale = 1.0f;
  GuidanceSpace space = GuidanceSpace::latent;
  // The conditional anchor extrapolates from the conditional prediction;
  // the common alternative anchors at the unconditional one.
  CfgAnchor anchor = CfgAnchor::conditional;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                const NoiseSchedule& schedule);

// Deterministic (eta = 0) DDIM update from t down to t_prev.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& schedule);

// Exact algebraic inverse of ddim_step for the same eps_hat: ascends from
// t_prev up to t.
Tensor ddim_invert_step(const Tensor& z_prev, const Tensor& eps_hat,
                        int t_prev, int t, const NoiseSchedule& schedule);

Tensor cfg_combine(const Tensor& z_cond, const Tensor& z_uncond, float w_g,
                   CfgAnchor anchor = CfgAnchor::conditional);

}  // namespace sgdm
