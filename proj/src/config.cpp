#include "sgdm/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sgdm {

using nlohmann::json;

GuidanceConfig RunConfig::guidance() const {
  GuidanceConfig g;
  g.w_g = edit.w_g;
  g.reweight_scale = edit.reweight_scale;
  if (edit.guidance_space == "latent") {
    g.space = GuidanceSpace::latent;
  } else if (edit.guidance_space == "epsilon") {
    g.space = GuidanceSpace::epsilon;
  } else {
    fail(ErrorKind::config,
         "edit.guidance_space must be 'latent' or 'epsilon'");
  }
  if (edit.cfg_anchor == "conditional") {
    g.anchor = CfgAnchor::conditional;
  } else if (edit.cfg_anchor == "unconditional") {
    g.anchor = CfgAnchor::unconditional;
  } else {
    fail(ErrorKind::config,
         "edit.cfg_anchor must be 'conditional' or 'unconditional'");
  }
  return g;
}

ConstraintMode RunConfig::constraint_mode() const {
  return constraint_mode_from_string(edit.mode);
}

ConstraintOptions RunConfig::constraint_options() const {
  ConstraintOptions o;
  o.renormalize_rows = edit.renormalize_rows;
  return o;
}

BenchOptions RunConfig::bench_options() const {
  BenchOptions o;
  o.image_size = model.image_size;
  o.min_area = data.min_area;
  o.max_area = data.max_area;
  o.striped_prob = data.striped_prob;
  return o;
}

TrainConfig RunConfig::train_config(int threads) const {
  TrainConfig t;
  t.epochs = train.epochs;
  t.batch_size = train.batch_size;
  t.lr = train.lr;
  t.cfg_drop_rate = train.cfg_drop_rate;
  t.seed = seed;
  t.threads = threads;
  return t;
}

NoiseSchedule RunConfig::make_noise_schedule() const {
  return make_schedule(schedule.t_train, schedule.beta_start,
                       schedule.beta_end);
}

RunConfig default_run_config() { return RunConfig{}; }

namespace {

void reject_unknown_keys(const json& j, const char* section,
                         std::initializer_list<const char*> known) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    check(ok, ErrorKind::config,
          std::string("unknown config key '") + section + "." + key + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, std::string("config key '") + key +
                                "' has the wrong type");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("config JSON: ") + e.what());
  }
  check(j.is_object(), ErrorKind::config, "config must be a JSON object");
  reject_unknown_keys(
      j, "", {"seed", "model", "schedule", "train", "edit", "data", "paths"});

  RunConfig c;
  read_field(j, "seed", c.seed);
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown_keys(m, "model",
                        {"image_size", "channels", "d_model", "n_layers",
                         "n_heads", "token_budget", "vocab_size", "t_train",
                         "pooled_middle"});
    read_field(m, "image_size", c.model.image_size);
    read_field(m, "channels", c.model.channels);
    read_field(m, "d_model", c.model.d_model);
    read_field(m, "n_layers", c.model.n_layers);
    read_field(m, "n_heads", c.model.n_heads);
    read_field(m, "token_budget", c.model.token_budget);
    read_field(m, "vocab_size", c.model.vocab_size);
    read_field(m, "t_train", c.model.t_train);
    read_field(m, "pooled_middle", c.model.pooled_middle);
  }
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    reject_unknown_keys(s, "schedule", {"t_train", "beta_start", "beta_end"});
    read_field(s, "t_train", c.schedule.t_train);
    read_field(s, "beta_start", c.schedule.beta_start);
    read_field(s, "beta_end", c.schedule.beta_end);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown_keys(t, "train",
                        {"epochs", "batch_size", "lr", "cfg_drop_rate"});
    read_field(t, "epochs", c.train.epochs);
    read_field(t, "batch_size", c.train.batch_size);
    read_field(t, "lr", c.train.lr);
    read_field(t, "cfg_drop_rate", c.train.cfg_drop_rate);
  }
  if (j.contains("edit")) {
    const json& e = j["edit"];
    reject_unknown_keys(e, "edit",
                        {"steps", "w_g", "mode", "reweight_scale",
                         "guidance_space", "cfg_anchor", "renormalize_rows",
                         "clip_denoised"});
    read_field(e, "steps", c.edit.steps);
    read_field(e, "w_g", c.edit.w_g);
    read_field(e, "mode", c.edit.mode);
    read_field(e, "reweight_scale", c.edit.reweight_scale);
    read_field(e, "guidance_space", c.edit.guidance_space);
    read_field(e, "cfg_anchor", c.edit.cfg_anchor);
    read_field(e, "renormalize_rows", c.edit.renormalize_rows);
    read_field(e, "clip_denoised", c.edit.clip_denoised);
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown_keys(d, "data",
                        {"count", "min_area", "max_area", "striped_prob"});
    read_field(d, "count", c.data.count);
    read_field(d, "min_area", c.data.min_area);
    read_field(d, "max_area", c.data.max_area);
    read_field(d, "striped_prob", c.data.striped_prob);
  }
  if (j.contains("paths")) {
    const json& p = j["paths"];
    reject_unknown_keys(p, "paths",
                        {"out_dir", "data", "ckpt", "report", "vocab"});
    read_field(p, "out_dir", c.paths.out_dir);
    read_field(p, "data", c.paths.data);
    read_field(p, "ckpt", c.paths.ckpt);
    read_field(p, "report", c.paths.report);
    read_field(p, "vocab", c.paths.vocab);
  }

  // Materialize derived defaults, then validate.
  if (c.model.vocab_size == 0) {
    c.model.vocab_size = default_vocabulary().size();
  }
  check(c.model.t_train == c.schedule.t_train, ErrorKind::config,
        "model.t_train and schedule.t_train must agree");
  c.model.validate();
  (void)c.guidance();
  (void)c.constraint_mode();
  check(c.data.min_area >= 0.02 && c.data.max_area <= 0.50 &&
            c.data.min_area < c.data.max_area,
        ErrorKind::config, "data area band must sit inside [0.02, 0.50]");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), ErrorKind::config, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["model"] = {{"image_size", c.model.image_size},
                {"channels", c.model.channels},
                {"d_model", c.model.d_model},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},
                {"token_budget", c.model.token_budget},
                {"vocab_size", c.model.vocab_size},
                {"t_train", c.model.t_train},
                {"pooled_middle", c.model.pooled_middle}};
  j["schedule"] = {{"t_train", c.schedule.t_train},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"cfg_drop_rate", c.train.cfg_drop_rate}};
  j["edit"] = {{"steps", c.edit.steps},
               {"w_g", c.edit.w_g},
               {"mode", c.edit.mode},
               {"reweight_scale", c.edit.reweight_scale},
               {"guidance_space", c.edit.guidance_space},
               {"cfg_anchor", c.edit.cfg_anchor},
               {"renormalize_rows", c.edit.renormalize_rows},
               {"clip_denoised", c.edit.clip_denoised}};
  j["data"] = {{"count", c.data.count},
               {"min_area", c.data.min_area},
               {"max_area", c.data.max_area},
               {"striped_prob", c.data.striped_prob}};
  j["paths"] = {{"out_dir", c.paths.out_dir},
                {"data", c.paths.data},
                {"ckpt", c.paths.ckpt},
                {"report", c.paths.report},
                {"vocab", c.paths.vocab}};
  return j.dump(2);
}

}  // namespace sgdm
