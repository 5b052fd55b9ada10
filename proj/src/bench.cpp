#include "sgdm/bench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sgdm/image_io.hpp"
#include "sgdm/parallel.hpp"

namespace sgdm {

namespace fs = std::filesystem;
using nlohmann::json;

const Palette& default_palette() {
  static const Palette p = [] {
    Palette pal;
    auto fill = [](const char* name, float r, float g, float b) {
      FillColor f;
      f.name = name;
      f.rgb[0] = r;
      f.rgb[1] = g;
      f.rgb[2] = b;
      for (int i = 0; i < 3; ++i) f.shade[i] = f.rgb[i] * 0.55f;
      return f;
    };
    pal.fills = {
        fill("red", 0.85f, 0.10f, 0.10f),   fill("green", 0.10f, 0.75f, 0.15f),
        fill("blue", 0.15f, 0.20f, 0.85f),  fill("yellow", 0.90f, 0.85f, 0.10f),
        fill("magenta", 0.85f, 0.15f, 0.80f), fill("cyan", 0.10f, 0.80f, 0.85f),
    };
    pal.tones = {
        {"black", {0.10f, 0.10f, 0.10f}},
        {"gray", {0.35f, 0.35f, 0.35f}},
        {"silver", {0.60f, 0.60f, 0.60f}},
        {"white", {0.88f, 0.88f, 0.88f}},
    };
    return pal;
  }();
  return p;
}

std::string to_string(ShapeClass c) {
  switch (c) {
    case ShapeClass::circle: return "circle";
    case ShapeClass::square: return "square";
    case ShapeClass::triangle: return "triangle";
    case ShapeClass::star: return "star";
  }
  return "circle";
}

std::string to_string(BackgroundKind k) {
  switch (k) {
    case BackgroundKind::solid: return "plain";
    case BackgroundKind::gradient: return "gradient";
    case BackgroundKind::checker: return "checker";
  }
  return "plain";
}

std::string to_string(FillPattern p) {
  return p == FillPattern::striped ? "striped" : "solid";
}

ShapeClass shape_class_from_string(const std::string& s) {
  if (s == "circle") return ShapeClass::circle;
  if (s == "square") return ShapeClass::square;
  if (s == "triangle") return ShapeClass::triangle;
  if (s == "star") return ShapeClass::star;
  fail(ErrorKind::config, "unknown shape class '" + s + "'");
}

BackgroundKind background_from_string(const std::string& s) {
  if (s == "plain") return BackgroundKind::solid;
  if (s == "gradient") return BackgroundKind::gradient;
  if (s == "checker") return BackgroundKind::checker;
  fail(ErrorKind::config, "unknown background kind '" + s + "'");
}

FillPattern pattern_from_string(const std::string& s) {
  if (s == "solid") return FillPattern::solid;
  if (s == "striped") return FillPattern::striped;
  fail(ErrorKind::config, "unknown fill pattern '" + s + "'");
}

bool is_shape_class_word(const std::string& word) {
  return word == "circle" || word == "square" || word == "triangle" ||
         word == "star";
}

const Vocabulary& default_vocabulary() {
  static const Vocabulary v = [] {
    std::vector<std::string> words;
    for (const auto& f : default_palette().fills) words.push_back(f.name);
    for (const char* c : {"circle", "square", "triangle", "star"})
      words.push_back(c);
    words.push_back("striped");
    for (const char* b : {"plain", "gradient", "checker"}) words.push_back(b);
    for (const auto& t : default_palette().tones) words.push_back(t.name);
    words.push_back("background");
    return Vocabulary(words);
  }();
  return v;
}

// ---- Geometry ----------------------------------------------------------------

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr float kStarInnerRatio = 0.68f;

bool point_in_polygon(const std::vector<std::pair<double, double>>& poly,
                      double x, double y) {
  bool inside = false;
  const size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    const bool crosses = (yi > y) != (yj > y);
    if (crosses && x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
      inside = !inside;
    }
  }
  return inside;
}

std::vector<std::pair<double, double>> shape_polygon(const SceneSpec& spec) {
  std::vector<std::pair<double, double>> poly;
  const double cx = spec.center_x, cy = spec.center_y, r = spec.radius;
  if (spec.shape == ShapeClass::triangle) {
    for (int k = 0; k < 3; ++k) {
      const double a = -kPi / 2 + k * 2.0 * kPi / 3;
      poly.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
    }
  } else if (spec.shape == ShapeClass::star) {
    for (int k = 0; k < 10; ++k) {
      const double a = -kPi / 2 + k * kPi / 5;
      const double rr = (k % 2 == 0) ? r : r * kStarInnerRatio;
      poly.emplace_back(cx + rr * std::cos(a), cy + rr * std::sin(a));
    }
  }
  return poly;
}

bool point_in_shape(const SceneSpec& spec,
                    const std::vector<std::pair<double, double>>& poly,
                    double x, double y) {
  const double dx = x - spec.center_x;
  const double dy = y - spec.center_y;
  switch (spec.shape) {
    case ShapeClass::circle:
      return dx * dx + dy * dy <= spec.radius * spec.radius;
    case ShapeClass::square:
      return std::max(std::abs(dx), std::abs(dy)) <= spec.radius;
    case ShapeClass::triangle:
    case ShapeClass::star:
      return point_in_polygon(poly, x, y);
  }
  return false;
}

// Area of the shape relative to its radius^2, used to hit a target fraction.
double shape_area_factor(ShapeClass c) {
  switch (c) {
    case ShapeClass::circle: return kPi;
    case ShapeClass::square: return 4.0;
    case ShapeClass::triangle: return 3.0 * std::sqrt(3.0) / 4.0;
    case ShapeClass::star:
      return 5.0 * kStarInnerRatio * std::sin(kPi / 5.0);
  }
  return kPi;
}

void background_color(const SceneSpec& spec, const Palette& pal, int x, int y,
                      float out[3]) {
  const auto& a = pal.tones[static_cast<size_t>(spec.tone_a)].rgb;
  const auto& b = pal.tones[static_cast<size_t>(spec.tone_b)].rgb;
  for (int i = 0; i < 3; ++i) out[i] = a[i];
  switch (spec.background) {
    case BackgroundKind::solid:
      return;
    case BackgroundKind::gradient: {
      const float t =
          spec.image_size <= 1
              ? 0.0f
              : static_cast<float>(y) / static_cast<float>(spec.image_size - 1);
      for (int i = 0; i < 3; ++i) out[i] = a[i] + t * (b[i] - a[i]);
      return;
    }
    case BackgroundKind::checker: {
      const bool alt = ((x / 4) + (y / 4)) % 2 == 1;
      const auto& tone = alt ? b : a;
      for (int i = 0; i < 3; ++i) out[i] = tone[i];
      return;
    }
  }
}

PromptPair scene_prompt(const SceneSpec& spec, const Palette& pal) {
  PromptPair p;
  if (spec.pattern == FillPattern::striped) p.inside_text.push_back("striped");
  p.inside_text.push_back(pal.fills[static_cast<size_t>(spec.color)].name);
  p.inside_text.push_back(to_string(spec.shape));
  p.outside_text.push_back(to_string(spec.background));
  p.outside_text.push_back(pal.tones[static_cast<size_t>(spec.tone_a)].name);
  if (spec.background != BackgroundKind::solid) {
    p.outside_text.push_back(pal.tones[static_cast<size_t>(spec.tone_b)].name);
  }
  p.outside_text.push_back("background");
  return p;
}

}  // namespace

Scene render_scene(const SceneSpec& spec) {
  const Palette& pal = default_palette();
  check(spec.image_size >= 4, ErrorKind::parameter, "image_size too small");
  check(spec.color >= 0 &&
            spec.color < static_cast<int>(pal.fills.size()),
        ErrorKind::parameter, "color index out of range");
  check(spec.tone_a >= 0 && spec.tone_a < static_cast<int>(pal.tones.size()) &&
            spec.tone_b >= 0 && spec.tone_b < static_cast<int>(pal.tones.size()),
        ErrorKind::parameter, "background tone index out of range");
  const int S = spec.image_size;
  const auto poly = shape_polygon(spec);
  const FillColor& fill = pal.fills[static_cast<size_t>(spec.color)];

  Scene scene;
  scene.spec = spec;
  std::vector<float> image(static_cast<size_t>(3) * S * S, 0.0f);
  scene.mask.h = S;
  scene.mask.w = S;
  scene.mask.values.assign(static_cast<size_t>(S) * S, 0.0f);

  constexpr int kSub = 4;  // 4x4 coverage supersampling
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x + (sx + 0.5) / kSub;
          const double py = y + (sy + 0.5) / kSub;
          if (point_in_shape(spec, poly, px, py)) ++hits;
        }
      }
      const float coverage =
          static_cast<float>(hits) / static_cast<float>(kSub * kSub);
      float bg[3];
      background_color(spec, pal, x, y, bg);
      const float* fg = (spec.pattern == FillPattern::striped && y % 2 == 1)
                            ? fill.shade
                            : fill.rgb;
      const size_t p = static_cast<size_t>(y) * S + x;
      for (int c = 0; c < 3; ++c) {
        image[static_cast<size_t>(c) * S * S + p] =
            coverage * fg[c] + (1.0f - coverage) * bg[c];
      }
      if (coverage >= 0.5f) scene.mask.values[p] = 1.0f;
    }
  }
  scene.image = Tensor::from_data({3, S, S}, std::move(image));
  scene.keypoints = keypoints_from_mask(scene.mask);
  scene.p_src = scene_prompt(spec, pal);
  return scene;
}

std::vector<Keypoint> keypoints_from_mask(const ObjectMask& mask) {
  std::vector<Keypoint> kps;
  if (mask.area() == 0) return kps;
  double sum_x = 0.0, sum_y = 0.0;
  int64_t n = 0;
  int top_r = mask.h, top_c = mask.w;
  int bot_r = -1, bot_c = mask.w;
  int left_c = mask.w, left_r = mask.h;
  int right_c = -1, right_r = mask.h;
  for (int r = 0; r < mask.h; ++r) {
    for (int c = 0; c < mask.w; ++c) {
      if (mask.at(r, c) == 0.0f) continue;
      sum_x += c + 0.5;
      sum_y += r + 0.5;
      ++n;
      if (r < top_r || (r == top_r && c < top_c)) top_r = r, top_c = c;
      if (r > bot_r || (r == bot_r && c < bot_c)) bot_r = r, bot_c = c;
      if (c < left_c || (c == left_c && r < left_r)) left_c = c, left_r = r;
      if (c > right_c || (c == right_c && r < right_r)) right_c = c, right_r = r;
    }
  }
  auto px = [](int c) { return static_cast<float>(c) + 0.5f; };
  kps.push_back({"centroid", static_cast<float>(sum_x / n),
                 static_cast<float>(sum_y / n)});
  kps.push_back({"top", px(top_c), px(top_r)});
  kps.push_back({"bottom", px(bot_c), px(bot_r)});
  kps.push_back({"left", px(left_c), px(left_r)});
  kps.push_back({"right", px(right_c), px(right_r)});
  return kps;
}

// ---- Oracle segmentation ------------------------------------------------------

ObjectMask oracle_segment(const Tensor& image, const std::string& class_name,
                          const Palette& palette) {
  check(image.ndim() == 3 && image.dim(0) == 3, ErrorKind::dimension,
        "oracle_segment expects a [3, H, W] image");
  check(is_shape_class_word(class_name), ErrorKind::contract,
        "unknown object class '" + class_name + "'");
  const int h = static_cast<int>(image.dim(1));
  const int w = static_cast<int>(image.dim(2));
  const int64_t plane = static_cast<int64_t>(h) * w;
  const float* px = image.data().data();

  // Object references: every palette fill and its stripe shade. Backgrounds
  // (solid, checker, and gradient mixtures) are achromatic by construction,
  // so the background reference is the continuous gray axis.
  std::vector<std::array<double, 3>> obj_refs;
  for (const auto& f : palette.fills) {
    obj_refs.push_back({f.rgb[0], f.rgb[1], f.rgb[2]});
    obj_refs.push_back({f.shade[0], f.shade[1], f.shade[2]});
  }

  // Antialiased pixels are mixtures c*fill + (1-c)*gray. For each fill,
  // solve least squares for (c, u) in p ~ c*fill + u*1, keep the best-fitting
  // fill, and call the pixel object when its recovered coverage is >= 0.5 —
  // the same threshold the rasterizer uses for the ground-truth mask.
  std::vector<float> raw(static_cast<size_t>(plane), 0.0f);
  for (int64_t p = 0; p < plane; ++p) {
    const double v0 = px[0 * plane + p];
    const double v1 = px[1 * plane + p];
    const double v2 = px[2 * plane + p];
    const double sum_p = v0 + v1 + v2;
    double best_res = 1e30;
    double best_c = 0.0;
    for (const auto& f : obj_refs) {
      const double ff = f[0] * f[0] + f[1] * f[1] + f[2] * f[2];
      const double sf = f[0] + f[1] + f[2];
      const double pf = v0 * f[0] + v1 * f[1] + v2 * f[2];
      const double det = ff * 3.0 - sf * sf;  // nonzero: fills are chromatic
      double c = (pf * 3.0 - sum_p * sf) / det;
      c = std::clamp(c, 0.0, 1.0);
      // Optimal achromatic part for the (possibly clamped) coverage, kept
      // inside the renderable gray range.
      double u = (sum_p - c * sf) / 3.0;
      u = std::clamp(u, 0.0, 1.0 - c);
      const double r0 = v0 - c * f[0] - u;
      const double r1 = v1 - c * f[1] - u;
      const double r2 = v2 - c * f[2] - u;
      const double res = r0 * r0 + r1 * r1 + r2 * r2;
      if (res < best_res) {
        best_res = res;
        best_c = c;
      }
    }
    // Slack absorbs float rounding at exactly-half coverage, where the
    // rasterizer's >= convention puts the pixel inside.
    raw[static_cast<size_t>(p)] = best_c >= 0.5 - 1e-4 ? 1.0f : 0.0f;
  }

  // Single 3x3 majority pass with the center vote double-counted and ties
  // keeping the center. The extra center vote removes isolated speckle
  // without eroding convex corners, which a plain majority would flip at
  // this resolution.
  ObjectMask out;
  out.h = h;
  out.w = w;
  out.values.assign(raw.size(), 0.0f);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int obj = 0, bg = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          const int weight = (dr == 0 && dc == 0) ? 2 : 1;
          (raw[static_cast<size_t>(rr) * w + cc] != 0.0f ? obj : bg) += weight;
        }
      }
      const size_t p = static_cast<size_t>(r) * w + c;
      out.values[p] = obj > bg ? 1.0f : (obj < bg ? 0.0f : raw[p]);
    }
  }
  return out;
}

// ---- Metrics -------------------------------------------------------------------

std::optional<double> miou(const ObjectMask& pred, const ObjectMask& gt,
                           const ObjectMask& eval_region) {
  check(pred.h == gt.h && pred.w == gt.w && pred.h == eval_region.h &&
            pred.w == eval_region.w,
        ErrorKind::dimension, "miou: mask shapes do not match");
  if (gt.area() == 0) return std::nullopt;
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    // Predictions outside the eval region are nulled.
    const bool p = pred.values[i] != 0.0f && eval_region.values[i] != 0.0f;
    const bool g = gt.values[i] != 0.0f;
    inter += p && g;
    uni += p || g;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double pck(const std::vector<Keypoint>& pred, const std::vector<Keypoint>& gt,
           double threshold_frac) {
  check(!gt.empty(), ErrorKind::contract, "pck: empty ground-truth keypoints");
  float min_x = gt[0].x, max_x = gt[0].x, min_y = gt[0].y, max_y = gt[0].y;
  for (const auto& k : gt) {
    min_x = std::min(min_x, k.x);
    max_x = std::max(max_x, k.x);
    min_y = std::min(min_y, k.y);
    max_y = std::max(max_y, k.y);
  }
  const double diag = std::hypot(max_x - min_x, max_y - min_y);
  const double thr = threshold_frac * diag;
  int correct = 0;
  for (const auto& g : gt) {
    const Keypoint* match = nullptr;
    for (const auto& p : pred) {
      if (p.name == g.name) {
        match = &p;
        break;
      }
    }
    if (match == nullptr) continue;  // missing keypoint counts incorrect
    if (std::hypot(match->x - g.x, match->y - g.y) <= thr) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gt.size());
}

double kw_miou(double miou_value, double pck_value) {
  check(miou_value >= 0.0 && miou_value <= 1.0 && pck_value >= 0.0 &&
            pck_value <= 1.0,
        ErrorKind::contract, "kw_miou expects values in [0, 1]");
  return miou_value * pck_value;
}

double psnr_region(const Tensor& a, const Tensor& b, const ObjectMask& region,
                   bool inside) {
  check(a.shape() == b.shape(), ErrorKind::dimension,
        "psnr_region: image shapes do not match");
  check(a.ndim() == 3 && a.dim(1) == region.h && a.dim(2) == region.w,
        ErrorKind::dimension, "psnr_region: region does not cover the image");
  const int64_t plane = static_cast<int64_t>(region.h) * region.w;
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  double acc = 0.0;
  int64_t n = 0;
  for (int64_t p = 0; p < plane; ++p) {
    const bool sel = (region.values[static_cast<size_t>(p)] != 0.0f) == inside;
    if (!sel) continue;
    for (int64_t c = 0; c < a.dim(0); ++c) {
      const double d =
          static_cast<double>(pa[c * plane + p]) - pb[c * plane + p];
      acc += d * d;
      ++n;
    }
  }
  check(n > 0, ErrorKind::contract, "psnr_region: empty region");
  const double mse_v = acc / static_cast<double>(n);
  if (mse_v == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse_v);
}

// ---- Dataset -------------------------------------------------------------------

namespace {

SceneSpec draw_spec(Rng& rng, const BenchOptions& opts) {
  const Palette& pal = default_palette();
  SceneSpec spec;
  spec.image_size = opts.image_size;
  spec.shape = static_cast<ShapeClass>(rng.uniform_int(0, 3));
  spec.color =
      static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(pal.fills.size()) - 1));
  spec.pattern = rng.next_double() < opts.striped_prob ? FillPattern::striped
                                                       : FillPattern::solid;
  spec.background = static_cast<BackgroundKind>(rng.uniform_int(0, 2));
  spec.tone_a =
      static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(pal.tones.size()) - 1));
  spec.tone_b = static_cast<int>(
      rng.uniform_int(0, static_cast<int64_t>(pal.tones.size()) - 2));
  if (spec.tone_b >= spec.tone_a) ++spec.tone_b;

  const double area_frac =
      opts.min_area + rng.next_double() * (opts.max_area - opts.min_area);
  const double target_pixels = area_frac * opts.image_size * opts.image_size;
  spec.radius = static_cast<float>(
      std::sqrt(target_pixels / shape_area_factor(spec.shape)));
  const float margin = spec.radius + 1.0f;
  const float lo = margin;
  const float hi = static_cast<float>(opts.image_size) - margin;
  if (hi <= lo) {
    spec.center_x = spec.center_y = static_cast<float>(opts.image_size) / 2.0f;
  } else {
    spec.center_x = lo + rng.next_float() * (hi - lo);
    spec.center_y = lo + rng.next_float() * (hi - lo);
  }
  return spec;
}

}  // namespace

Scene sample_scene(uint64_t seed, const BenchOptions& opts) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL);
  const double lo_gate = 0.02, hi_gate = 0.50;
  for (int attempt = 0; attempt < 100; ++attempt) {
    SceneSpec spec = draw_spec(rng, opts);
    spec.seed = seed;
    Scene scene = render_scene(spec);
    const double frac = static_cast<double>(scene.mask.area()) /
                        static_cast<double>(scene.mask.values.size());
    if (frac >= lo_gate && frac <= hi_gate && frac >= opts.min_area * 0.5 &&
        frac <= opts.max_area * 1.5 && scene.mask.area() >= 4) {
      return scene;
    }
  }
  fail(ErrorKind::spec,
       "could not sample a scene with area in bounds after 100 tries (seed " +
           std::to_string(seed) + ")");
}

std::vector<DatasetEntry> make_dataset(uint64_t seed, int count,
                                       const BenchOptions& opts) {
  check(count >= 1, ErrorKind::parameter, "dataset count must be >= 1");
  const Palette& pal = default_palette();
  std::vector<DatasetEntry> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    DatasetEntry e;
    e.scene = sample_scene(seed + static_cast<uint64_t>(i), opts);
    // Intra-class recolor edit.
    Rng rng(seed ^ (0xED17ULL + static_cast<uint64_t>(i) * 0x2545F4914F6CDD1DULL));
    int new_color = static_cast<int>(
        rng.uniform_int(0, static_cast<int64_t>(pal.fills.size()) - 2));
    if (new_color >= e.scene.spec.color) ++new_color;
    SceneSpec edited = e.scene.spec;
    edited.color = new_color;
    e.p_edit = render_scene(edited).p_src;
    out.push_back(std::move(e));
  }
  return out;
}

void write_dataset(const std::string& dir,
                   const std::vector<DatasetEntry>& entries) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl",
                         std::ios::trunc);
  check(manifest.good(), ErrorKind::io,
        "cannot open manifest in '" + dir + "'");
  const Palette& pal = default_palette();
  char name[64];
  for (size_t i = 0; i < entries.size(); ++i) {
    const DatasetEntry& e = entries[i];
    std::snprintf(name, sizeof(name), "scene_%04zu.ppm", i);
    const std::string image_name = name;
    std::snprintf(name, sizeof(name), "mask_%04zu.pgm", i);
    const std::string mask_name = name;
    write_ppm((fs::path(dir) / image_name).string(), e.scene.image);
    write_pgm((fs::path(dir) / mask_name).string(),
              e.scene.mask.to_tensor());

    json row;
    row["index"] = i;
    row["seed"] = e.scene.spec.seed;
    row["class"] = to_string(e.scene.spec.shape);
    row["color"] = pal.fills[static_cast<size_t>(e.scene.spec.color)].name;
    row["pattern"] = to_string(e.scene.spec.pattern);
    row["background"] = to_string(e.scene.spec.background);
    row["tone_a"] = pal.tones[static_cast<size_t>(e.scene.spec.tone_a)].name;
    row["tone_b"] = pal.tones[static_cast<size_t>(e.scene.spec.tone_b)].name;
    row["center"] = {e.scene.spec.center_x, e.scene.spec.center_y};
    row["radius"] = e.scene.spec.radius;
    row["image_size"] = e.scene.spec.image_size;
    row["image_path"] = image_name;
    row["mask_path"] = mask_name;
    json kps;
    for (const auto& k : e.scene.keypoints) kps[k.name] = {k.x, k.y};
    row["keypoints"] = kps;
    row["p_src"] = e.scene.p_src.str();
    row["p_edit"] = e.p_edit.str();
    manifest << row.dump() << "\n";
  }
  check(manifest.good(), ErrorKind::io, "manifest write failed");
}

std::vector<DatasetEntry> load_dataset(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  check(is.good(), ErrorKind::io,
        "cannot open manifest '" + manifest_path + "'");
  const fs::path base = fs::path(manifest_path).parent_path();
  const Palette& pal = default_palette();
  auto color_index = [&](const std::string& name) {
    for (size_t i = 0; i < pal.fills.size(); ++i) {
      if (pal.fills[i].name == name) return static_cast<int>(i);
    }
    fail(ErrorKind::config, "unknown color '" + name + "' in manifest");
  };
  auto tone_index = [&](const std::string& name) {
    for (size_t i = 0; i < pal.tones.size(); ++i) {
      if (pal.tones[i].name == name) return static_cast<int>(i);
    }
    fail(ErrorKind::config, "unknown tone '" + name + "' in manifest");
  };

  std::vector<DatasetEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorKind::config, std::string("manifest parse error: ") + e.what());
    }
    DatasetEntry entry;
    SceneSpec& spec = entry.scene.spec;
    spec.seed = row.at("seed").get<uint64_t>();
    spec.shape = shape_class_from_string(row.at("class").get<std::string>());
    spec.color = color_index(row.at("color").get<std::string>());
    spec.pattern = pattern_from_string(row.at("pattern").get<std::string>());
    spec.background =
        background_from_string(row.at("background").get<std::string>());
    spec.tone_a = tone_index(row.at("tone_a").get<std::string>());
    spec.tone_b = tone_index(row.at("tone_b").get<std::string>());
    spec.center_x = row.at("center")[0].get<float>();
    spec.center_y = row.at("center")[1].get<float>();
    spec.radius = row.at("radius").get<float>();
    spec.image_size = row.at("image_size").get<int>();
    entry.scene.image =
        read_ppm((base / row.at("image_path").get<std::string>()).string());
    entry.scene.mask = ObjectMask::from_tensor(
        read_pgm((base / row.at("mask_path").get<std::string>()).string()));
    for (const auto& [kname, val] : row.at("keypoints").items()) {
      entry.scene.keypoints.push_back(
          {kname, val[0].get<float>(), val[1].get<float>()});
    }
    entry.scene.p_src = PromptPair::parse(row.at("p_src").get<std::string>());
    entry.p_edit = PromptPair::parse(row.at("p_edit").get<std::string>());
    out.push_back(std::move(entry));
  }
  check(!out.empty(), ErrorKind::config,
        "manifest '" + manifest_path + "' holds no scenes");
  return out;
}

// ---- Benchmark harness -----------------------------------------------------------

BenchReport run_benchmark(const Editor& editor,
                          const std::vector<DatasetEntry>& dataset,
                          const BenchRunConfig& cfg) {
  BenchReport report;
  for (ConstraintMode mode : cfg.modes) {
    std::vector<SampleResult> rows(dataset.size());
    parallel_for(static_cast<int64_t>(dataset.size()), cfg.threads,
                 [&](int64_t i) {
                   const DatasetEntry& entry = dataset[static_cast<size_t>(i)];
                   SampleResult& r = rows[static_cast<size_t>(i)];
                   r.scene_index = static_cast<int>(i);
                   r.mode = to_string(mode);
                   r.class_name = to_string(entry.scene.spec.shape);
                   r.prompt_edit = entry.p_edit.str();
                   try {
                     EditRequest req;
                     req.x_src = entry.scene.image;
                     req.p_src = entry.scene.p_src;
                     req.p_edit = entry.p_edit;
                     req.mask = entry.scene.mask;
                     req.guidance = cfg.guidance;
                     req.steps = cfg.steps;
                     req.mode = mode;
                     req.constraint_opts = cfg.constraint_opts;
                     req.clip_denoised = cfg.clip_denoised;
                     const EditResult result = editor.edit(req);
                     const ObjectMask pred =
                         oracle_segment(result.x_edit, r.class_name);
                     const auto iou =
                         miou(pred, entry.scene.mask, entry.scene.mask);
                     if (!iou.has_value()) {
                       r.excluded = true;
                       r.error = "empty ground truth";
                       return;
                     }
                     r.miou = *iou;
                     r.pck = pck(keypoints_from_mask(pred),
                                 entry.scene.keypoints);
                     r.kw_miou = kw_miou(r.miou, r.pck);
                   } catch (const Error& e) {
                     r.excluded = true;
                     r.error = e.what();
                   }
                 });

    ModeSummary summary;
    summary.mode = to_string(mode);
    for (const auto& r : rows) {
      if (r.excluded) {
        ++summary.excluded;
        continue;
      }
      ++summary.evaluated;
      summary.mean_miou += r.miou;
      summary.mean_pck += r.pck;
      summary.mean_kw_miou += r.kw_miou;
    }
    if (summary.evaluated > 0) {
      summary.mean_miou /= summary.evaluated;
      summary.mean_pck /= summary.evaluated;
      summary.mean_kw_miou /= summary.evaluated;
    }
    report.summaries.push_back(summary);
    report.samples.insert(report.samples.end(), rows.begin(), rows.end());
  }
  return report;
}

std::string bench_report_to_json(const BenchReport& report,
                                 const std::string& config_echo_json) {
  json j;
  j["schema_version"] = 1;
  if (!config_echo_json.empty()) {
    j["config"] = json::parse(config_echo_json);
  }
  j["fid"] = "unsupported";
  j["clip"] = "unsupported";
  json samples = json::array();
  for (const auto& r : report.samples) {
    json row;
    row["scene_index"] = r.scene_index;
    row["mode"] = r.mode;
    row["class"] = r.class_name;
    row["p_edit"] = r.prompt_edit;
    if (r.excluded) {
      row["excluded"] = true;
      row["error"] = r.error;
    } else {
      row["miou"] = r.miou;
      row["pck"] = r.pck;
      row["kw_miou"] = r.kw_miou;
    }
    samples.push_back(row);
  }
  j["samples"] = samples;
  json summaries = json::array();
  for (const auto& s : report.summaries) {
    json row;
    row["mode"] = s.mode;
    row["evaluated"] = s.evaluated;
    row["excluded"] = s.excluded;
    row["mean_miou"] = s.mean_miou;
    row["mean_pck"] = s.mean_pck;
    row["mean_kw_miou"] = s.mean_kw_miou;
    summaries.push_back(row);
  }
  j["summaries"] = summaries;
  return j.dump(2);
}

}  // namespace sgdm
