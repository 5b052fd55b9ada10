#include "sgdm/diffusion.hpp"

#include <cmath>

namespace sgdm {

double NoiseSchedule::alpha_bar(int t) const {
  check(t >= 0 && t <= t_train, ErrorKind::parameter,
        "timestep " + std::to_string(t) + " outside [0, " +
            std::to_string(t_train) + "]");
  return alpha_bars[static_cast<size_t>(t)];
}

NoiseSchedule make_schedule(int t_train, double beta_start, double beta_end) {
  check(t_train >= 1, ErrorKind::parameter, "t_train must be >= 1");
  check(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0,
        ErrorKind::parameter,
        "betas must satisfy 0 < beta_start < beta_end < 1");
  NoiseSchedule s;
  s.t_train = t_train;
  s.betas.resize(static_cast<size_t>(t_train) + 1, 0.0);
  s.alphas.resize(static_cast<size_t>(t_train) + 1, 1.0);
  s.alpha_bars.resize(static_cast<size_t>(t_train) + 1, 1.0);
  for (int t = 1; t <= t_train; ++t) {
    const double frac =
        t_train == 1 ? 0.0 : static_cast<double>(t - 1) / (t_train - 1);
    s.betas[static_cast<size_t>(t)] =
        beta_start + frac * (beta_end - beta_start);
    s.alphas[static_cast<size_t>(t)] = 1.0 - s.betas[static_cast<size_t>(t)];
    s.alpha_bars[static_cast<size_t>(t)] =
        s.alpha_bars[static_cast<size_t>(t) - 1] *
        s.alphas[static_cast<size_t>(t)];
  }
  return s;
}

int TimestepGrid::step(int i) const {
  const int s = steps();
  check(i >= 0 && i <= s, ErrorKind::parameter,
        "grid index " + std::to_string(i) + " outside [0, " +
            std::to_string(s) + "]");
  if (i == 0) return 0;
  return timesteps[static_cast<size_t>(s - i)];
}

TimestepGrid make_grid(int steps, int t_train) {
  check(steps >= 1 && steps <= t_train, ErrorKind::parameter,
        "steps must be in [1, t_train]");
  TimestepGrid g;
  // Uniform stride ending at t_train; for steps == t_train this is 1..t_train.
  const double stride = static_cast<double>(t_train) / steps;
  for (int i = steps; i >= 1; --i) {
    int t = static_cast<int>(std::llround(stride * i));
    t = std::max(1, std::min(t_train, t));
    g.timesteps.push_back(t);
  }
  for (size_t i = 1; i < g.timesteps.size(); ++i) {
    check(g.timesteps[i] < g.timesteps[i - 1], ErrorKind::parameter,
          "timestep grid is not strictly decreasing");
  }
  return g;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                const NoiseSchedule& schedule) {
  check(x0.shape() == eps.shape(), ErrorKind::dimension,
        "q_sample: x0 " + shape_str(x0.shape()) + " vs eps " +
            shape_str(eps.shape()));
  const double ab = schedule.alpha_bar(t);
  const double c0 = std::sqrt(ab);
  const double c1 = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  const float* px = x0.data().data();
  const float* pe = eps.data().data();
  float* po = out.mutable_data().data();
  const int64_t n = x0.numel();
  for (int64_t i = 0; i < n; ++i) {
    po[i] = static_cast<float>(c0 * px[i] + c1 * pe[i]);
  }
  return out;
}

namespace {

// Shared DDIM update: moves z from alpha_bar `ab_from` to `ab_to` using the
// same eps_hat on both ends. Arithmetic is done in double so the
// invert-then-step round trip stays well inside 1e-5 even at large t.
Tensor ddim_move(const Tensor& z, const Tensor& eps_hat, double ab_from,
                 double ab_to, const char* what) {
  check(z.shape() == eps_hat.shape(), ErrorKind::dimension,
        std::string(what) + ": z " + shape_str(z.shape()) + " vs eps " +
            shape_str(eps_hat.shape()));
  check(ab_from > 0.0, ErrorKind::numeric,
        std::string(what) + ": alpha_bar underflow");
  const double inv_sqrt_from = 1.0 / std::sqrt(ab_from);
  const double sig_from = std::sqrt(1.0 - ab_from);
  const double sqrt_to = std::sqrt(ab_to);
  const double sig_to = std::sqrt(1.0 - ab_to);
  Tensor out(z.shape());
  const float* pz = z.data().data();
  const float* pe = eps_hat.data().data();
  float* po = out.mutable_data().data();
  const int64_t n = z.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double x0 = (pz[i] - sig_from * pe[i]) * inv_sqrt_from;
    const double moved = sqrt_to * x0 + sig_to * pe[i];
    po[i] = static_cast<float>(moved);
    if (!std::isfinite(po[i])) {
      fail(ErrorKind::numeric, std::string(what) + ": non-finite latent");
    }
  }
  return out;
}

}  // namespace

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& schedule) {
  check(t >= t_prev && t_prev >= 0, ErrorKind::parameter,
        "ddim_step requires t >= t_prev >= 0");
  if (t == t_prev) return z_t;
  return ddim_move(z_t, eps_hat, schedule.alpha_bar(t),
                   schedule.alpha_bar(t_prev), "ddim_step");
}

Tensor ddim_invert_step(const Tensor& z_prev, const Tensor& eps_hat,
                        int t_prev, int t, const NoiseSchedule& schedule) {
  check(t > t_prev && t_prev >= 0, ErrorKind::parameter,
        "ddim_invert_step requires t > t_prev >= 0");
  return ddim_move(z_prev, eps_hat, schedule.alpha_bar(t_prev),
                   schedule.alpha_bar(t), "ddim_invert_step");
}

Tensor cfg_combine(const Tensor& z_cond, const Tensor& z_uncond, float w_g,
                   CfgAnchor anchor) {
  check(z_cond.shape() == z_uncond.shape(), ErrorKind::dimension,
        "cfg_combine: shapes " + shape_str(z_cond.shape()) + " and " +
            shape_str(z_uncond.shape()) + " do not match");
  check(w_g >= 0.0f, ErrorKind::parameter, "guidance scale must be >= 0");
  Tensor out(z_cond.shape());
  const float* pc = z_cond.data().data();
  const float* pu = z_uncond.data().data();
  float* po = out.mutable_data().data();
  const int64_t n = z_cond.numel();
  if (anchor == CfgAnchor::conditional) {
    for (int64_t i = 0; i < n; ++i) po[i] = pc[i] + w_g * (pc[i] - pu[i]);
  } else {
    for (int64_t i = 0; i < n; ++i) po[i] = pu[i] + w_g * (pc[i] - pu[i]);
  }
  return out;
}

}  // namespace sgdm
