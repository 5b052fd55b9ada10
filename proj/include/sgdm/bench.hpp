#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgdm/attention_control.hpp"
#include "sgdm/pipeline.hpp"
#include "sgdm/rng.hpp"

namespace sgdm {

// ---- Scene palette ----------------------------------------------------------
// Object fills are saturated colors (plus a darker stripe shade); backgrounds
// are built from desaturated tones. The two sets are far apart in RGB, which
// is what the analytic segmenter keys on.

struct FillColor {
  std::string name;
  float rgb[3];
  float shade[3];  // stripe partner
};

struct BackgroundTone {
  std::string name;
  float rgb[3];
};

struct Palette {
  std::vector<FillColor> fills;
  std::vector<BackgroundTone> tones;
};

const Palette& default_palette();

enum class ShapeClass { circle, square, triangle, star };
enum class BackgroundKind { solid, gradient, checker };
enum class FillPattern { solid, striped };

std::string to_string(ShapeClass c);
std::string to_string(BackgroundKind k);
std::string to_string(FillPattern p);
ShapeClass shape_class_from_string(const std::string& s);
BackgroundKind background_from_string(const std::string& s);
FillPattern pattern_from_string(const std::string& s);
bool is_shape_class_word(const std::string& word);

// Vocabulary covering every prompt the generator can emit.
const Vocabulary& default_vocabulary();

struct SceneSpec {
  ShapeClass shape = ShapeClass::circle;
  int color = 0;  // index into palette fills
  FillPattern pattern = FillPattern::solid;
  BackgroundKind background = BackgroundKind::solid;
  int tone_a = 0;  // indices into palette tones
  int tone_b = 1;
  float center_x = 8.0f;  // pixel coordinates
  float center_y = 8.0f;
  float radius = 4.0f;  // per-shape size scalar, pixels
  int image_size = 16;
  uint64_t seed = 0;
};

struct Keypoint {
  std::string name;
  float x = 0.0f;
  float y = 0.0f;
};

struct Scene {
  SceneSpec spec;
  Tensor image;  // [3, H, W]
  ObjectMask mask;
  std::vector<Keypoint> keypoints;  // centroid + 4 extreme points
  PromptPair p_src;
};

struct BenchOptions {
  int image_size = 16;
  double min_area = 0.06;  // sampled target range, within the 2%..50% gate
  double max_area = 0.30;
  double striped_prob = 0.2;
};

// Deterministic 4x supersampled render of the spec; the ground-truth mask is
// pixel coverage >= 0.5 and keypoints are computed from the mask.
Scene render_scene(const SceneSpec& spec);

// Rejection-samples a spec whose rasterized area lands in [2%, 50%] (and the
// configured target band); fails after 100 rejections.
Scene sample_scene(uint64_t seed, const BenchOptions& opts = {});

struct DatasetEntry {
  Scene scene;
  PromptPair p_edit;  // intra-class attribute edit (recolor)
};

std::vector<DatasetEntry> make_dataset(uint64_t seed, int count,
                                       const BenchOptions& opts = {});

// Files + JSONL manifest (one scene per line).
void write_dataset(const std::string& dir,
                   const std::vector<DatasetEntry>& entries);
std::vector<DatasetEntry> load_dataset(const std::string& manifest_path);

// ---- Oracle models ----------------------------------------------------------

// Class-level, attribute-agnostic segmenter: a pixel is object when it is
// closer to any object fill (or stripe shade) than to every background tone;
// one 3x3 majority pass cleans speckle. May return an empty mask.
ObjectMask oracle_segment(const Tensor& image, const std::string& class_name,
                          const Palette& palette = default_palette());

// Centroid plus top/bottom/left/right extreme pixels; empty for empty masks.
std::vector<Keypoint> keypoints_from_mask(const ObjectMask& mask);

// ---- Metrics -----------------------------------------------------------------

// IoU with predictions nulled outside eval_region; empty ground truth is
// undefined and surfaces as nullopt (excluded sample).
std::optional<double> miou(const ObjectMask& pred, const ObjectMask& gt,
                           const ObjectMask& eval_region);

// Fraction of named keypoints within threshold_frac of the ground-truth
// keypoint bounding-box diagonal. Missing keypoints count as incorrect.
double pck(const std::vector<Keypoint>& pred, const std::vector<Keypoint>& gt,
           double threshold_frac = 0.1);

double kw_miou(double miou_value, double pck_value);

// PSNR (peak 1.0) over the selected mask region; +inf for exact equality.
double psnr_region(const Tensor& a, const Tensor& b, const ObjectMask& region,
                   bool inside = true);

// ---- Benchmark harness --------------------------------------------------------

struct SampleResult {
  int scene_index = 0;
  std::string mode;
  std::string class_name;
  std::string prompt_edit;
  double miou = 0.0;
  double pck = 0.0;
  double kw_miou = 0.0;
  bool excluded = false;
  std::string error;
};

struct ModeSummary {
  std::string mode;
  int evaluated = 0;
  int excluded = 0;
  double mean_miou = 0.0;
  double mean_pck = 0.0;
  double mean_kw_miou = 0.0;
};

struct BenchReport {
  std::vector<SampleResult> samples;
  std::vector<ModeSummary> summaries;  // one row per mode, ablation order
};

struct BenchRunConfig {
  std::vector<ConstraintMode> modes = {ConstraintMode::none,
                                       ConstraintMode::token_only,
                                       ConstraintMode::soft,
                                       ConstraintMode::hard};
  GuidanceConfig guidance;
  int steps = 50;
  ConstraintOptions constraint_opts;
  bool clip_denoised = true;
  int threads = 0;
};

// Full edit per scene x mode, oracle-segmented and scored; failed edits are
// excluded with a count. Deterministic for a fixed dataset and config.
BenchReport run_benchmark(const Editor& editor,
                          const std::vector<DatasetEntry>& dataset,
                          const BenchRunConfig& cfg);

// Report JSON (schema_version 1) with the fully-resolved config echoed in.
std::string bench_report_to_json(const BenchReport& report,
                                 const std::string& config_echo_json);

}  // namespace sgdm
