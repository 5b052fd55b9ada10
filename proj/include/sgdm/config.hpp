#pragma once

#include <cstdint>
#include <string>

#include "sgdm/bench.hpp"
#include "sgdm/diffusion.hpp"
#include "sgdm/model.hpp"
#include "sgdm/train.hpp"

namespace sgdm {

// Fully-resolved run configuration. Parsing rejects unknown keys; every run
// echoes the materialized config so it can be replayed bit-for-bit.
struct RunConfig {
  uint64_t seed = 42;
  DenoiserConfig model;

  struct Schedule {
    int t_train = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
  } schedule;

  struct Train {
    int epochs = 8;
    int batch_size = 16;
    float lr = 3e-4f;
    float cfg_drop_rate = 0.1f;
  } train;

  struct Edit {
    int steps = 50;
    float w_g = 3.5f;
    std::string mode = "hard";
    float reweight_scale = 1.0f;
    std::string guidance_space = "latent";    // latent | epsilon
    std::string cfg_anchor = "conditional";   // conditional | unconditional
    bool renormalize_rows = false;
    bool clip_denoised = true;
  } edit;

  struct Data {
    int count = 2000;
    double min_area = 0.06;
    double max_area = 0.30;
    double striped_prob = 0.2;
  } data;

  struct Paths {
    std::string out_dir;
    std::string data;
    std::string ckpt;
    std::string report;
    std::string vocab;  // optional vocabulary JSON override
  } paths;

  GuidanceConfig guidance() const;
  ConstraintMode constraint_mode() const;
  ConstraintOptions constraint_options() const;
  BenchOptions bench_options() const;
  TrainConfig train_config(int threads = 0) const;
  NoiseSchedule make_noise_schedule() const;
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& config);

}  // namespace sgdm
