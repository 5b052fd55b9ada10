#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sgdm/attention_control.hpp"
#include "sgdm/rng.hpp"

using namespace sgdm;

namespace {

ObjectMask mask_from(std::vector<float> vals, int h, int w) {
  ObjectMask m;
  m.h = h;
  m.w = w;
  m.values = std::move(vals);
  return m;
}

ObjectMask random_mask(int h, int w, Rng& rng, double p = 0.4) {
  ObjectMask m;
  m.h = h;
  m.w = w;
  m.values.resize(static_cast<size_t>(h) * w);
  for (auto& v : m.values) v = rng.next_double() < p ? 1.0f : 0.0f;
  return m;
}

MaskLevel level_of(const ObjectMask& m, int h, int w) {
  std::vector<AttentionSite> sites = {{0, AttentionKind::cross, h, w}};
  return build_pyramid(m, sites).level_for(h, w);
}

Tensor random_prob_rows(Shape shape, Rng& rng) {
  Tensor raw = Tensor::randn(shape, rng);
  return softmax_lastdim(raw);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("pyramid of an all-ones mask is all ones at every level") {
  const ObjectMask m = mask_from(std::vector<float>(64, 1.0f), 8, 8);
  std::vector<AttentionSite> sites = {{0, AttentionKind::cross, 8, 8},
                                      {1, AttentionKind::self, 4, 4},
                                      {2, AttentionKind::cross, 2, 2}};
  const MaskPyramid pyr = build_pyramid(m, sites);
  for (auto res : {2, 4, 8}) {
    const MaskLevel& level = pyr.level_for(res, res);
    for (size_t i = 0; i < level.soft.size(); ++i) {
      CHECK(level.soft[i] == 1.0f);
      CHECK(level.hard[i] == 1.0f);
    }
  }
}

TEST_CASE("2x2 corner mask pooled to 1x1: soft 0.25, hard 0") {
  const ObjectMask m = mask_from({1, 0, 0, 0}, 2, 2);
  const MaskLevel level = level_of(m, 1, 1);
  CHECK(level.soft[0] == doctest::Approx(0.25f));
  CHECK(level.hard[0] == 0.0f);
}

TEST_CASE("soft threshold ties go inside") {
  const ObjectMask m = mask_from({1, 1, 0, 0}, 2, 2);
  const MaskLevel level = level_of(m, 1, 1);
  CHECK(level.soft[0] == doctest::Approx(0.5f));
  CHECK(level.hard[0] == 1.0f);
}

TEST_CASE("random 16x16 mask pooled to 8x8 matches block averaging") {
  Rng rng(3);
  const ObjectMask m = random_mask(16, 16, rng);
  const MaskLevel level = level_of(m, 8, 8);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      float acc = 0.0f;
      for (int dr = 0; dr < 2; ++dr)
        for (int dc = 0; dc < 2; ++dc) acc += m.at(2 * r + dr, 2 * c + dc);
      acc /= 4.0f;
      const size_t i = static_cast<size_t>(r) * 8 + c;
      CHECK(level.soft[i] == doctest::Approx(acc));
      CHECK(level.hard[i] == (acc >= 0.5f ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("indivisible site resolution is a geometry error") {
  const ObjectMask m = mask_from(std::vector<float>(36, 1.0f), 6, 6);
  std::vector<AttentionSite> sites = {{0, AttentionKind::self, 4, 4}};
  CHECK_THROWS_AS(build_pyramid(m, sites), Error);
}

TEST_CASE("constrain_cross: the worked 2-pixel 3-token example") {
  // mask [1, 0]; bos column 0, J_in {1}, J_out {2}.
  const MaskLevel level = level_of(mask_from({1, 0}, 1, 2), 1, 2);
  const Tensor m =
      Tensor::from_data({1, 2, 3}, {0.2f, 0.3f, 0.5f, 0.1f, 0.6f, 0.3f});
  const Tensor out =
      constrain_cross(m, level, {1}, {2}, 0, ConstraintMode::hard);
  const std::vector<float> expect = {0.0f, 0.3f, 0.0f, 0.0f, 0.0f, 0.3f};
  for (int64_t i = 0; i < 6; ++i) {
    CHECK(out.data()[i] == doctest::Approx(expect[static_cast<size_t>(i)]));
  }
}

TEST_CASE("constrain_cross mode none returns the map unchanged") {
  Rng rng(5);
  const MaskLevel level = level_of(random_mask(2, 2, rng), 2, 2);
  const Tensor m = random_prob_rows({2, 4, 5}, rng);
  const Tensor out = constrain_cross(m, level, {1, 2}, {3, 4}, 0,
                                     ConstraintMode::none);
  CHECK(bitwise_equal(m, out));
}

TEST_CASE("constrain_cross with an all-ones mask zeroes outside and bos only") {
  Rng rng(6);
  const MaskLevel level = level_of(mask_from(std::vector<float>(4, 1.0f), 2, 2), 2, 2);
  const Tensor m = random_prob_rows({2, 4, 5}, rng);
  const Tensor out =
      constrain_cross(m, level, {1, 2}, {3, 4}, 0, ConstraintMode::hard);
  for (int64_t h = 0; h < 2; ++h) {
    for (int64_t p = 0; p < 4; ++p) {
      const int64_t base = (h * 4 + p) * 5;
      CHECK(out.data()[base + 0] == 0.0f);                    // bos
      CHECK(out.data()[base + 1] == m.data()[base + 1]);      // inside kept
      CHECK(out.data()[base + 2] == m.data()[base + 2]);
      CHECK(out.data()[base + 3] == 0.0f);                    // outside zeroed
      CHECK(out.data()[base + 4] == 0.0f);
    }
  }
}

TEST_CASE("constrain_cross rejects bad partitions") {
  Rng rng(7);
  const MaskLevel level = level_of(random_mask(2, 2, rng), 2, 2);
  const Tensor m = random_prob_rows({1, 4, 5}, rng);
  CHECK_THROWS_AS(
      constrain_cross(m, level, {1, 2}, {2, 3}, 0, ConstraintMode::hard),
      Error);  // overlap
  CHECK_THROWS_AS(
      constrain_cross(m, level, {1, 9}, {3}, 0, ConstraintMode::hard),
      Error);  // out of range
  CHECK_THROWS_AS(
      constrain_cross(m, level, {0, 1}, {3}, 0, ConstraintMode::hard),
      Error);  // bos inside the partition
}

TEST_CASE("constrain_self: all-ones mask leaves the map unchanged") {
  Rng rng(8);
  const MaskLevel level = level_of(mask_from(std::vector<float>(4, 1.0f), 2, 2), 2, 2);
  const Tensor m = random_prob_rows({2, 4, 4}, rng);
  const Tensor out = constrain_self(m, level, ConstraintMode::hard);
  CHECK(bitwise_equal(m, out));
}

TEST_CASE("hard self constraint severs inside-outside attention") {
  Rng rng(9);
  const ObjectMask mask = random_mask(4, 4, rng);
  const MaskLevel level = level_of(mask, 4, 4);
  const Tensor m = random_prob_rows({2, 16, 16}, rng);
  const Tensor out = constrain_self(m, level, ConstraintMode::hard);
  for (int64_t h = 0; h < 2; ++h) {
    for (int64_t p = 0; p < 16; ++p) {
      for (int64_t q = 0; q < 16; ++q) {
        const float v = out.data()[(h * 16 + p) * 16 + q];
        if (level.hard[static_cast<size_t>(p)] !=
            level.hard[static_cast<size_t>(q)]) {
          CHECK(v == 0.0f);
        } else {
          CHECK(v == m.data()[(h * 16 + p) * 16 + q]);
        }
      }
    }
  }
}

TEST_CASE("checkerboard self constraint matches per-column masking") {
  const ObjectMask mask = mask_from({1, 0, 0, 1}, 2, 2);
  const MaskLevel level = level_of(mask, 2, 2);
  Rng rng(10);
  const Tensor m = random_prob_rows({1, 4, 4}, rng);
  const Tensor out = constrain_self(m, level, ConstraintMode::hard);
  for (int64_t p = 0; p < 4; ++p) {
    for (int64_t q = 0; q < 4; ++q) {
      const float col_inside = level.hard[static_cast<size_t>(q)];
      const float factor = col_inside != 0.0f
                               ? level.hard[static_cast<size_t>(p)]
                               : 1.0f - level.hard[static_cast<size_t>(p)];
      CHECK(out.data()[p * 4 + q] ==
            doctest::Approx(m.data()[p * 4 + q] * factor));
    }
  }
}

TEST_CASE("self constraint is a no-op under none and token_only") {
  Rng rng(11);
  const MaskLevel level = level_of(random_mask(2, 2, rng), 2, 2);
  const Tensor m = random_prob_rows({1, 4, 4}, rng);
  CHECK(bitwise_equal(m, constrain_self(m, level, ConstraintMode::none)));
  CHECK(bitwise_equal(m, constrain_self(m, level, ConstraintMode::token_only)));
  CHECK_THROWS_AS(constrain_self(random_prob_rows({1, 4, 5}, rng), level,
                                 ConstraintMode::hard),
                  Error);  // non-square
}

TEST_CASE("soft mode multiplies self maps by the pooled mask") {
  // 4x4 mask pooled to 2x2 gives fractional soft values.
  Rng rng(12);
  const ObjectMask mask = mask_from(
      {1, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1}, 4, 4);
  const MaskLevel level = level_of(mask, 2, 2);
  const Tensor m = random_prob_rows({1, 4, 4}, rng);
  const Tensor out = constrain_self(m, level, ConstraintMode::soft);
  for (int64_t p = 0; p < 4; ++p) {
    for (int64_t q = 0; q < 4; ++q) {
      const float col_inside = level.hard[static_cast<size_t>(q)];
      const float factor = col_inside != 0.0f
                               ? level.soft[static_cast<size_t>(p)]
                               : 1.0f - level.soft[static_cast<size_t>(p)];
      CHECK(out.data()[p * 4 + q] ==
            doctest::Approx(m.data()[p * 4 + q] * factor));
    }
  }
}

TEST_CASE("reweight: unit scale identity, 2.5x column boost, composition") {
  Rng rng(13);
  const Tensor m = random_prob_rows({2, 3, 5}, rng);

  ReweightConfig unit;
  unit.scale = 1.0f;
  unit.target = {1, 2};
  CHECK(bitwise_equal(m, reweight_cross(m, unit)));

  ReweightConfig boost;
  boost.scale = 2.5f;
  boost.target = {2};
  const Tensor out = reweight_cross(m, boost);
  for (int64_t r = 0; r < 6; ++r) {
    for (int64_t c = 0; c < 5; ++c) {
      const float expect =
          c == 2 ? m.data()[r * 5 + c] * 2.5f : m.data()[r * 5 + c];
      CHECK(out.data()[r * 5 + c] == doctest::Approx(expect));
    }
  }

  ReweightConfig bad;
  bad.scale = 2.0f;
  bad.target = {7};
  CHECK_THROWS_AS(reweight_cross(m, bad), Error);

  // Reweight-then-constrain matches a scripted elementwise reference.
  const ObjectMask mask = mask_from({1, 0, 1, 0}, 2, 2);
  const MaskLevel level = level_of(mask, 2, 2);
  const Tensor m2 = random_prob_rows({1, 4, 5}, rng);
  const Tensor got = constrain_cross(reweight_cross(m2, boost), level, {1, 2},
                                     {3, 4}, 0, ConstraintMode::hard);
  for (int64_t p = 0; p < 4; ++p) {
    const float inside = level.hard[static_cast<size_t>(p)];
    for (int64_t c = 0; c < 5; ++c) {
      float expect = m2.data()[p * 5 + c];
      if (c == 2) expect *= 2.5f;
      if (c == 0) expect = 0.0f;
      if (c == 1 || c == 2) expect *= inside;
      if (c == 3 || c == 4) expect *= 1.0f - inside;
      CHECK(got.data()[p * 5 + c] == doctest::Approx(expect));
    }
  }
}

TEST_CASE("monotone residue and idempotence") {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const ObjectMask mask = random_mask(4, 4, rng);
    const MaskLevel level = level_of(mask, 4, 4);
    const Tensor m = random_prob_rows({2, 16, 16}, rng);
    for (ConstraintMode mode :
         {ConstraintMode::token_only, ConstraintMode::soft,
          ConstraintMode::hard}) {
      const Tensor once = constrain_self(m, level, mode);
      for (int64_t i = 0; i < m.numel(); ++i) {
        CHECK(once.data()[i] >= 0.0f);
        CHECK(once.data()[i] <= m.data()[i] + 1e-7f);
      }
      if (mode == ConstraintMode::hard) {
        const Tensor twice = constrain_self(once, level, mode);
        CHECK(bitwise_equal(once, twice));
      }
    }
    const Tensor cm = random_prob_rows({2, 16, 7}, rng);
    const Tensor conce =
        constrain_cross(cm, level, {1, 2, 3}, {4, 5, 6}, 0, ConstraintMode::hard);
    const Tensor ctwice = constrain_cross(conce, level, {1, 2, 3}, {4, 5, 6}, 0,
                                          ConstraintMode::hard);
    CHECK(bitwise_equal(conce, ctwice));
  }
}

TEST_CASE("mode lattice: token_only and hard agree on cross maps") {
  Rng rng(15);
  const ObjectMask mask = random_mask(4, 4, rng);
  const MaskLevel level = level_of(mask, 4, 4);
  const Tensor m = random_prob_rows({2, 16, 7}, rng);
  const Tensor a =
      constrain_cross(m, level, {1, 2, 3}, {4, 5, 6}, 0, ConstraintMode::token_only);
  const Tensor b =
      constrain_cross(m, level, {1, 2, 3}, {4, 5, 6}, 0, ConstraintMode::hard);
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("make_transform dispatches by site kind and mode") {
  Rng rng(16);
  const ObjectMask mask = random_mask(4, 4, rng);
  std::vector<AttentionSite> sites = {{0, AttentionKind::self, 4, 4},
                                      {0, AttentionKind::cross, 4, 4}};
  const MaskPyramid pyr = build_pyramid(mask, sites);
  TokenizedPrompt prompt = null_prompt(3);

  const AttentionTransform none_hook =
      make_transform(pyr, prompt, ConstraintMode::none);
  const Tensor cross_map = random_prob_rows({1, 16, 7}, rng);
  const Tensor self_map = random_prob_rows({1, 16, 16}, rng);
  CHECK(bitwise_equal(cross_map, none_hook(sites[1], cross_map)));
  CHECK(bitwise_equal(self_map, none_hook(sites[0], self_map)));

  const AttentionTransform hard_hook =
      make_transform(pyr, prompt, ConstraintMode::hard);
  const MaskLevel& level = pyr.level_for(4, 4);
  CHECK(bitwise_equal(hard_hook(sites[1], cross_map),
                      constrain_cross(cross_map, level, prompt.j_in,
                                      prompt.j_out, 0, ConstraintMode::hard)));
  CHECK(bitwise_equal(hard_hook(sites[0], self_map),
                      constrain_self(self_map, level, ConstraintMode::hard)));

  // Unknown site resolution.
  CHECK_THROWS_AS(hard_hook({0, AttentionKind::cross, 2, 2}, cross_map), Error);
}

TEST_CASE("row renormalization restores unit mass and keeps zero rows zero") {
  Rng rng(17);
  const ObjectMask mask = random_mask(4, 4, rng);
  const MaskLevel level = level_of(mask, 4, 4);
  const Tensor m = random_prob_rows({1, 16, 16}, rng);
  ConstraintOptions opts;
  opts.renormalize_rows = true;
  const Tensor out = constrain_self(m, level, ConstraintMode::hard, opts);
  for (int64_t p = 0; p < 16; ++p) {
    double s = 0.0;
    for (int64_t q = 0; q < 16; ++q) s += out.data()[p * 16 + q];
    CHECK((s == doctest::Approx(1.0).epsilon(1e-5) || s == 0.0));
  }
}

TEST_CASE("hard-mode exactness on random triples (mini acceptance)") {
  Rng rng(18);
  for (int trial = 0; trial < 100; ++trial) {
    const ObjectMask mask = random_mask(4, 4, rng, 0.3 + 0.4 * rng.next_double());
    const MaskLevel level = level_of(mask, 4, 4);
    const Tensor cm = random_prob_rows({2, 16, 9}, rng);
    std::vector<int> j_in, j_out;
    for (int j = 1; j <= 4; ++j) j_in.push_back(j);
    for (int j = 5; j <= 8; ++j) j_out.push_back(j);
    const Tensor out =
        constrain_cross(cm, level, j_in, j_out, 0, ConstraintMode::hard);
    for (int64_t h = 0; h < 2; ++h) {
      for (int64_t p = 0; p < 16; ++p) {
        const bool inside = level.hard[static_cast<size_t>(p)] != 0.0f;
        const int64_t base = (h * 16 + p) * 9;
        CHECK(out.data()[base] == 0.0f);
        for (int j : j_in) {
          if (inside) {
            CHECK(out.data()[base + j] == cm.data()[base + j]);
          } else {
            CHECK(out.data()[base + j] == 0.0f);
          }
        }
        for (int j : j_out) {
          if (inside) {
            CHECK(out.data()[base + j] == 0.0f);
          } else {
            CHECK(out.data()[base + j] == cm.data()[base + j]);
          }
        }
      }
    }
  }
}
