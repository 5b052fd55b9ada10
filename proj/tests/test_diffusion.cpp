#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sgdm/diffusion.hpp"
#include "sgdm/rng.hpp"

using namespace sgdm;

namespace {

Tensor randn_tensor(Shape shape, Rng& rng, float scl = 1.0f) {
  return Tensor::randn(std::move(shape), rng, scl);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double mx = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    mx = std::max(mx, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  }
  return mx;
}

}  // namespace

TEST_CASE("schedule: single step and monotone alpha_bars") {
  const NoiseSchedule s1 = make_schedule(1);
  CHECK(s1.alpha_bar(0) == doctest::Approx(1.0));
  CHECK(s1.alpha_bar(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-12));

  const NoiseSchedule s = make_schedule(1000);
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.betas[static_cast<size_t>(t)] > 0.0);
    CHECK(s.betas[static_cast<size_t>(t)] < 1.0);
  }
  // Independent cumulative product (frozen from a separate script).
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.035829765375676e-05).epsilon(1e-6));
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
  }
  CHECK(s.alpha_bar(1000) == doctest::Approx(prod).epsilon(1e-9));
}

TEST_CASE("schedule rejects invalid beta ranges") {
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), Error);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), Error);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), Error);
  CHECK_THROWS_AS(make_schedule(0), Error);
}

TEST_CASE("q_sample endpoints") {
  const NoiseSchedule s = make_schedule(1000);
  Rng rng(3);
  const Tensor x0 = randn_tensor({2, 4, 4}, rng);
  const Tensor eps = randn_tensor({2, 4, 4}, rng);

  // t = 0 convention: alpha_bar = 1, x returned exactly.
  const Tensor at0 = q_sample(x0, 0, eps, s);
  for (int64_t i = 0; i < x0.numel(); ++i) CHECK(at0.data()[i] == x0.data()[i]);

  const Tensor zero = Tensor::zeros({2, 4, 4});
  const Tensor noiseless = q_sample(x0, 600, zero, s);
  const double c = std::sqrt(s.alpha_bar(600));
  for (int64_t i = 0; i < x0.numel(); ++i) {
    CHECK(noiseless.data()[i] ==
          doctest::Approx(c * x0.data()[i]).epsilon(1e-6));
  }
  CHECK_THROWS_AS(q_sample(x0, 1001, eps, s), Error);
}

TEST_CASE("q_sample variance matches 1 - alpha_bar (Monte Carlo)") {
  const NoiseSchedule s = make_schedule(1000);
  const Tensor x0 = Tensor::zeros({1, 1, 1});
  Rng rng(17);
  const int t = 700;
  double acc = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    Tensor eps(x0.shape());
    eps.mutable_data()[0] = rng.normal();
    const float v = q_sample(x0, t, eps, s).data()[0];
    acc += static_cast<double>(v) * v;
  }
  const double var = acc / n;
  CHECK(var == doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(0.05));
}

TEST_CASE("ddim_step degenerate and zero-noise cases") {
  const NoiseSchedule s = make_schedule(1000);
  Rng rng(5);
  const Tensor z = randn_tensor({3, 2, 2}, rng);
  const Tensor eps = randn_tensor({3, 2, 2}, rng);

  const Tensor same = ddim_step(z, eps, 500, 500, s);
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(same.data()[i] == z.data()[i]);

  const Tensor zero = Tensor::zeros({3, 2, 2});
  const Tensor rescaled = ddim_step(z, zero, 800, 300, s);
  const double f = std::sqrt(s.alpha_bar(300) / s.alpha_bar(800));
  for (int64_t i = 0; i < z.numel(); ++i) {
    CHECK(rescaled.data()[i] == doctest::Approx(f * z.data()[i]).epsilon(1e-5));
  }
}

TEST_CASE("ddim_step single scalar case against the closed form") {
  const NoiseSchedule s = make_schedule(1000);
  const Tensor z = Tensor::scalar(0.8f);
  const Tensor eps = Tensor::scalar(-0.3f);
  const int t = 600, t_prev = 350;
  const Tensor out = ddim_step(z, eps, t, t_prev, s);
  // Independent double-precision evaluation of the update rule.
  const double ab_t = s.alpha_bar(t), ab_p = s.alpha_bar(t_prev);
  const double x0 = (0.8 - std::sqrt(1.0 - ab_t) * -0.3) / std::sqrt(ab_t);
  const double expect = std::sqrt(ab_p) * x0 + std::sqrt(1.0 - ab_p) * -0.3;
  CHECK(out.item() == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("invert then step is the identity") {
  const NoiseSchedule s = make_schedule(1000);
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int t_prev = static_cast<int>(rng.uniform_int(0, 998));
    const int t = static_cast<int>(rng.uniform_int(t_prev + 1, 999));
    const Tensor z = randn_tensor({2, 3}, rng);
    const Tensor eps = randn_tensor({2, 3}, rng);
    const Tensor up = ddim_invert_step(z, eps, t_prev, t, s);
    const Tensor back = ddim_step(up, eps, t, t_prev, s);
    CHECK(max_abs_diff(back, z) < 1e-5);
  }
}

TEST_CASE("invert with zero noise rescales") {
  const NoiseSchedule s = make_schedule(1000);
  Rng rng(9);
  const Tensor z = randn_tensor({4}, rng);
  const Tensor zero = Tensor::zeros({4});
  const Tensor up = ddim_invert_step(z, zero, 200, 900, s);
  const double f = std::sqrt(s.alpha_bar(900) / s.alpha_bar(200));
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(up.data()[i] == doctest::Approx(f * z.data()[i]).epsilon(1e-5));
  }
  CHECK_THROWS_AS(ddim_invert_step(z, zero, 500, 500, s), Error);
}

TEST_CASE("frozen-eps 50-step inversion and generation round trip") {
  const NoiseSchedule s = make_schedule(1000);
  const TimestepGrid grid = make_grid(50, 1000);
  Rng rng(11);
  const Tensor z0 = randn_tensor({3, 4, 4}, rng, 0.5f);
  std::vector<Tensor> eps_seq;
  for (int i = 0; i < 50; ++i) eps_seq.push_back(randn_tensor({3, 4, 4}, rng));

  Tensor z = z0;
  for (int i = 1; i <= 50; ++i) {
    z = ddim_invert_step(z, eps_seq[static_cast<size_t>(i - 1)],
                         grid.step(i - 1), grid.step(i), s);
  }
  for (int i = 50; i >= 1; --i) {
    z = ddim_step(z, eps_seq[static_cast<size_t>(i - 1)], grid.step(i),
                  grid.step(i - 1), s);
  }
  CHECK(max_abs_diff(z, z0) < 1e-4);
}

TEST_CASE("cfg_combine identities and the forced arithmetic case") {
  Rng rng(13);
  const Tensor zc = randn_tensor({2, 2}, rng);
  const Tensor zu = randn_tensor({2, 2}, rng);

  const Tensor w0 = cfg_combine(zc, zu, 0.0f);
  for (int64_t i = 0; i < zc.numel(); ++i) CHECK(w0.data()[i] == zc.data()[i]);

  const Tensor agree = cfg_combine(zc, zc, 3.5f);
  for (int64_t i = 0; i < zc.numel(); ++i) {
    CHECK(agree.data()[i] == zc.data()[i]);
  }

  const Tensor forced =
      cfg_combine(Tensor::scalar(1.0f), Tensor::scalar(0.0f), 3.5f);
  CHECK(forced.item() == doctest::Approx(4.5f));

  // Anchoring at the unconditional side gives the common form.
  const Tensor alt = cfg_combine(Tensor::scalar(1.0f), Tensor::scalar(0.0f),
                                 3.5f, CfgAnchor::unconditional);
  CHECK(alt.item() == doctest::Approx(3.5f));

  CHECK_THROWS_AS(cfg_combine(zc, Tensor::zeros({3}), 1.0f), Error);
  CHECK_THROWS_AS(cfg_combine(zc, zu, -0.5f), Error);
}

TEST_CASE("cfg_combine is affine in both inputs") {
  Rng rng(15);
  const Tensor a = randn_tensor({5}, rng);
  const Tensor b = randn_tensor({5}, rng);
  const Tensor c = randn_tensor({5}, rng);
  const float w = 2.5f;
  // combine(a + c, b, w) == combine(a, b, w) + (1 + w) c
  const Tensor lhs = cfg_combine(add(a, c), b, w);
  const Tensor rhs = cfg_combine(a, b, w);
  for (int64_t i = 0; i < 5; ++i) {
    CHECK(lhs.data()[i] ==
          doctest::Approx(rhs.data()[i] + (1.0f + w) * c.data()[i])
              .epsilon(1e-5));
  }
}

TEST_CASE("timestep grid shape and conventions") {
  const TimestepGrid g = make_grid(50, 1000);
  CHECK(g.steps() == 50);
  CHECK(g.step(0) == 0);
  CHECK(g.step(50) == 1000);
  for (int i = 1; i <= 50; ++i) CHECK(g.step(i) > g.step(i - 1));
  CHECK_THROWS_AS(make_grid(0, 1000), Error);
  CHECK_THROWS_AS(make_grid(1001, 1000), Error);
  const TimestepGrid full = make_grid(1000, 1000);
  CHECK(full.step(1) == 1);
  CHECK(full.step(1000) == 1000);
}
