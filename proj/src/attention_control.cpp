#include "sgdm/attention_control.hpp"

#include <algorithm>
#include <cmath>

#include "sgdm/image_io.hpp"

namespace sgdm {

int64_t ObjectMask::area() const {
  int64_t n = 0;
  for (float v : values) n += v != 0.0f;
  return n;
}

void ObjectMask::validate_for_edit() const {
  check(h > 0 && w > 0 &&
            values.size() == static_cast<size_t>(h) * static_cast<size_t>(w),
        ErrorKind::dimension, "malformed object mask");
  const int64_t inside = area();
  check(inside > 0, ErrorKind::contract, "object mask has no inside pixels");
  check(inside < static_cast<int64_t>(values.size()), ErrorKind::contract,
        "object mask has no outside pixels");
}

ObjectMask ObjectMask::from_tensor(const Tensor& t) {
  check(t.ndim() == 2, ErrorKind::dimension,
        "mask tensor must be [H, W], got " + shape_str(t.shape()));
  ObjectMask m;
  m.h = static_cast<int>(t.dim(0));
  m.w = static_cast<int>(t.dim(1));
  m.values.reserve(t.data().size());
  for (float v : t.data()) m.values.push_back(v > 0.5f ? 1.0f : 0.0f);
  return m;
}

Tensor ObjectMask::to_tensor() const {
  return Tensor::from_data({h, w}, values);
}

const MaskLevel& MaskPyramid::level_for(int h, int w) const {
  auto it = levels.find({h, w});
  check(it != levels.end(), ErrorKind::geometry,
        "mask pyramid has no level for " + std::to_string(h) + "x" +
            std::to_string(w));
  return it->second;
}

MaskPyramid build_pyramid(const ObjectMask& mask,
                          const std::vector<AttentionSite>& sites) {
  check(mask.h > 0 && mask.w > 0 &&
            mask.values.size() == static_cast<size_t>(mask.h) * mask.w,
        ErrorKind::dimension, "malformed object mask");
  MaskPyramid pyr;
  for (const auto& site : sites) {
    const std::pair<int, int> key = {site.h, site.w};
    if (pyr.levels.count(key)) continue;
    check(site.h > 0 && site.w > 0 && mask.h % site.h == 0 &&
              mask.w % site.w == 0,
          ErrorKind::geometry,
          "mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
              " is not divisible by site resolution " + std::to_string(site.h) +
              "x" + std::to_string(site.w));
    const int fh = mask.h / site.h;
    const int fw = mask.w / site.w;
    MaskLevel level;
    level.h = site.h;
    level.w = site.w;
    level.soft.resize(static_cast<size_t>(site.h) * site.w);
    level.hard.resize(level.soft.size());
    for (int r = 0; r < site.h; ++r) {
      for (int c = 0; c < site.w; ++c) {
        double acc = 0.0;
        for (int dr = 0; dr < fh; ++dr) {
          for (int dc = 0; dc < fw; ++dc) {
            acc += mask.at(r * fh + dr, c * fw + dc);
          }
        }
        const float soft = static_cast<float>(acc / (fh * fw));
        const size_t i = static_cast<size_t>(r) * site.w + c;
        level.soft[i] = soft;
        level.hard[i] = soft >= 0.5f ? 1.0f : 0.0f;
      }
    }
    pyr.levels.emplace(key, std::move(level));
  }
  return pyr;
}

std::string to_string(ConstraintMode mode) {
  switch (mode) {
    case ConstraintMode::none: return "none";
    case ConstraintMode::token_only: return "token_only";
    case ConstraintMode::soft: return "soft";
    case ConstraintMode::hard: return "hard";
  }
  return "none";
}

ConstraintMode constraint_mode_from_string(const std::string& s) {
  if (s == "none") return ConstraintMode::none;
  if (s == "token_only") return ConstraintMode::token_only;
  if (s == "soft") return ConstraintMode::soft;
  if (s == "hard") return ConstraintMode::hard;
  fail(ErrorKind::config, "unknown constraint mode '" + s +
                              "' (expected none|token_only|soft|hard)");
}

namespace {

void validate_map_3d(const Tensor& attn, const char* what) {
  check(attn.defined() && attn.ndim() == 3, ErrorKind::dimension,
        std::string(what) + ": attention map must be [heads, pixels, cols]");
}

void renormalize_rows_inplace(Tensor& attn) {
  const int64_t cols = attn.dim(-1);
  const int64_t rows = attn.numel() / cols;
  float* p = attn.mutable_data().data();
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < cols; ++j) s += p[r * cols + j];
    if (s > 0.0) {
      const float inv = static_cast<float>(1.0 / s);
      for (int64_t j = 0; j < cols; ++j) p[r * cols + j] *= inv;
    }
  }
}

}  // namespace

Tensor constrain_cross(const Tensor& attn, const MaskLevel& level,
                       const std::vector<int>& j_in,
                       const std::vector<int>& j_out, int bos_index,
                       ConstraintMode mode, const ConstraintOptions& opts) {
  validate_map_3d(attn, "constrain_cross");
  if (mode == ConstraintMode::none) return attn;

  const int64_t heads = attn.dim(0);
  const int64_t hw = attn.dim(1);
  const int64_t cols = attn.dim(2);
  check(hw == static_cast<int64_t>(level.h) * level.w, ErrorKind::geometry,
        "constrain_cross: map has " + std::to_string(hw) +
            " pixels, mask level has " +
            std::to_string(static_cast<int64_t>(level.h) * level.w));

  std::vector<char> role(static_cast<size_t>(cols), 0);  // 1 = in, 2 = out
  auto mark = [&](const std::vector<int>& idx, char tag) {
    for (int j : idx) {
      check(j >= 0 && j < cols, ErrorKind::partition,
            "token column " + std::to_string(j) + " out of range");
      check(role[static_cast<size_t>(j)] == 0, ErrorKind::partition,
            "token column " + std::to_string(j) +
                " appears in both J_in and J_out");
      role[static_cast<size_t>(j)] = tag;
    }
  };
  mark(j_in, 1);
  mark(j_out, 2);
  check(bos_index >= 0 && bos_index < cols &&
            role[static_cast<size_t>(bos_index)] == 0,
        ErrorKind::partition, "bos index overlaps the token partition");

  // All non-none modes constrain cross maps with the thresholded mask; the
  // soft/hard distinction only affects self-attention.
  const std::vector<float>& m = level.hard;

  Tensor out = attn.clone();
  float* p = out.mutable_data().data();
  for (int64_t head = 0; head < heads; ++head) {
    for (int64_t px = 0; px < hw; ++px) {
      float* row = p + (head * hw + px) * cols;
      const float inside = m[static_cast<size_t>(px)];
      const float outside = 1.0f - inside;
      for (int j : j_in) row[j] *= inside;
      for (int j : j_out) row[j] *= outside;
      row[bos_index] = 0.0f;
    }
  }
  if (opts.renormalize_rows) renormalize_rows_inplace(out);
  return out;
}

Tensor constrain_self(const Tensor& attn, const MaskLevel& level,
                      ConstraintMode mode, const ConstraintOptions& opts) {
  validate_map_3d(attn, "constrain_self");
  if (mode == ConstraintMode::none || mode == ConstraintMode::token_only) {
    return attn;
  }
  const int64_t heads = attn.dim(0);
  const int64_t hw = attn.dim(1);
  const int64_t cols = attn.dim(2);
  check(hw == cols, ErrorKind::dimension,
        "constrain_self: map must be square, got " + shape_str(attn.shape()));
  check(hw == static_cast<int64_t>(level.h) * level.w, ErrorKind::geometry,
        "constrain_self: map has " + std::to_string(hw) +
            " pixels, mask level has " +
            std::to_string(static_cast<int64_t>(level.h) * level.w));

  // Column membership is decided by the thresholded mask; the multiplier is
  // the soft or hard mask depending on mode.
  const std::vector<float>& mult =
      mode == ConstraintMode::soft ? level.soft : level.hard;

  Tensor out = attn.clone();
  float* p = out.mutable_data().data();
  for (int64_t head = 0; head < heads; ++head) {
    for (int64_t px = 0; px < hw; ++px) {
      float* row = p + (head * hw + px) * cols;
      const float inside = mult[static_cast<size_t>(px)];
      const float outside = 1.0f - inside;
      for (int64_t q = 0; q < cols; ++q) {
        row[q] *= level.hard[static_cast<size_t>(q)] != 0.0f ? inside : outside;
      }
    }
  }
  if (opts.renormalize_rows) renormalize_rows_inplace(out);
  return out;
}

Tensor reweight_cross(const Tensor& attn, const ReweightConfig& cfg) {
  validate_map_3d(attn, "reweight_cross");
  check(cfg.scale > 0.0f, ErrorKind::parameter,
        "reweight scale must be positive");
  if (cfg.scale == 1.0f || cfg.target.empty()) return attn;
  const int64_t cols = attn.dim(2);
  for (int j : cfg.target) {
    check(j >= 0 && j < cols, ErrorKind::partition,
          "reweight target column " + std::to_string(j) + " out of range");
  }
  Tensor out = attn.clone();
  float* p = out.mutable_data().data();
  const int64_t rows = attn.numel() / cols;
  for (int64_t r = 0; r < rows; ++r) {
    float* row = p + r * cols;
    for (int j : cfg.target) row[j] *= cfg.scale;
  }
  return out;
}

AttentionTransform make_transform(const MaskPyramid& pyramid,
                                  const TokenizedPrompt& prompt,
                                  ConstraintMode mode,
                                  const ReweightConfig& reweight,
                                  const ConstraintOptions& opts) {
  return [pyramid, prompt, mode, reweight, opts](
             const AttentionSite& site, const Tensor& attn) -> Tensor {
    if (site.kind == AttentionKind::cross) {
      Tensor m = reweight_cross(attn, reweight);
      if (mode == ConstraintMode::none) return m;
      const MaskLevel& level = pyramid.level_for(site.h, site.w);
      return constrain_cross(m, level, prompt.j_in, prompt.j_out,
                             prompt.bos_index, mode, opts);
    }
    if (mode == ConstraintMode::none || mode == ConstraintMode::token_only) {
      return attn;
    }
    const MaskLevel& level = pyramid.level_for(site.h, site.w);
    return constrain_self(attn, level, mode, opts);
  };
}

void write_heatmap_pgm(const std::string& path, const std::vector<float>& map,
                       int h, int w) {
  check(map.size() == static_cast<size_t>(h) * static_cast<size_t>(w),
        ErrorKind::dimension, "heatmap size does not match resolution");
  float mx = 0.0f;
  for (float v : map) mx = std::max(mx, v);
  std::vector<float> scaled(map.size(), 0.0f);
  if (mx > 0.0f) {
    for (size_t i = 0; i < map.size(); ++i) scaled[i] = map[i] / mx;
  }
  write_pgm(path, Tensor::from_data({h, w}, std::move(scaled)));
}

}  // namespace sgdm
