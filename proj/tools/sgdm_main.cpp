// sgdm: shape-guided diffusion editing on a toy text-conditional denoiser.
//
// Subcommands: gen-data, train, edit, reconstruct, invert, eval.
// Exit codes: 0 success, 1 usage/config errors, 2 violated invariants or
// runtime failures.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgdm/bench.hpp"
#include "sgdm/checkpoint.hpp"
#include "sgdm/config.hpp"
#include "sgdm/image_io.hpp"
#include "sgdm/parallel.hpp"
#include "sgdm/pipeline.hpp"
#include "sgdm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sgdm;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? default_run_config()
                                           : load_run_config(args.config_path);
  if (args.seed.has_value()) cfg.seed = *args.seed;
  return cfg;
}

Vocabulary resolve_vocab(const RunConfig& cfg) {
  if (cfg.paths.vocab.empty()) return default_vocabulary();
  std::ifstream is(cfg.paths.vocab);
  check(is.good(), ErrorKind::config,
        "cannot open vocabulary '" + cfg.paths.vocab + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return Vocabulary::from_json(ss.str());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  check(os.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
  os << text;
  check(os.good(), ErrorKind::io, "write failed for '" + path + "'");
}

std::string manifest_path_of(const std::string& data) {
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.jsonl").string();
  return data;
}

Denoiser load_model_checked(const std::string& ckpt, const Vocabulary& vocab) {
  Denoiser model = Denoiser::load(ckpt);
  check(model.config().vocab_size == vocab.size(), ErrorKind::consistency,
        "checkpoint vocab_size " + std::to_string(model.config().vocab_size) +
            " does not match the vocabulary (" + std::to_string(vocab.size()) +
            " entries)");
  return model;
}

json diagnostics_to_json(const EditDiagnostics& d, bool include_steps) {
  json out;
  out["hook_invocations"] = d.hook_invocations;
  out["warnings"] = d.warnings;
  if (include_steps) {
    json steps = json::array();
    for (const auto& s : d.steps) {
      steps.push_back({{"step", s.index},
                       {"t", s.t},
                       {"inside_mass_outside_mask", s.inside_mass_outside_mask},
                       {"blend_delta", s.blend_delta}});
    }
    out["steps"] = steps;
  }
  return out;
}

// Bitwise locality self-check; returns the number of violating pixels.
int64_t locality_violations(const Tensor& x_edit, const Tensor& x_src,
                            const ObjectMask& mask) {
  const int64_t plane = static_cast<int64_t>(mask.h) * mask.w;
  const float* pe = x_edit.data().data();
  const float* ps = x_src.data().data();
  int64_t bad = 0;
  for (int64_t c = 0; c < x_edit.dim(0); ++c) {
    for (int64_t p = 0; p < plane; ++p) {
      if (mask.values[static_cast<size_t>(p)] == 0.0f &&
          pe[c * plane + p] != ps[c * plane + p]) {
        ++bad;
      }
    }
  }
  return bad;
}

struct EditFlags {
  std::string ckpt, image, mask, out = "edit.ppm";
  std::string src_prompt, edit_prompt;
  std::string mode;
  std::optional<float> wg;
  std::optional<int> steps;
  std::optional<float> reweight;
  bool simultaneous = false;
  bool step_diagnostics = false;
  std::string dump_attn;
};

int run_edit_like(const CommonArgs& common, EditFlags& flags,
                  bool reconstruct) {
  RunConfig cfg = resolve_config(common);
  if (!flags.mode.empty()) cfg.edit.mode = flags.mode;
  if (flags.wg.has_value()) cfg.edit.w_g = *flags.wg;
  if (flags.steps.has_value()) cfg.edit.steps = *flags.steps;
  if (flags.reweight.has_value()) cfg.edit.reweight_scale = *flags.reweight;
  if (reconstruct) {
    cfg.edit.w_g = 0.0f;
    flags.edit_prompt = flags.src_prompt;
  }
  (void)cfg.constraint_mode();  // validate early

  const Vocabulary vocab = resolve_vocab(cfg);
  const Denoiser model = load_model_checked(flags.ckpt, vocab);
  const NoiseSchedule schedule = cfg.make_noise_schedule();
  const IdentityCodec codec;
  const Editor editor(model, vocab, schedule, codec);

  EditRequest req;
  req.x_src = read_ppm(flags.image);
  req.p_src = PromptPair::parse(flags.src_prompt);
  req.p_edit = PromptPair::parse(flags.edit_prompt);
  if (!flags.mask.empty()) {
    req.mask = ObjectMask::from_tensor(read_pgm(flags.mask));
  }
  req.guidance = cfg.guidance();
  req.steps = cfg.edit.steps;
  req.mode = cfg.constraint_mode();
  req.constraint_opts = cfg.constraint_options();
  req.clip_denoised = cfg.edit.clip_denoised;
  req.seed = cfg.seed;
  req.collect_step_diagnostics = flags.step_diagnostics;
  req.collect_attention_maps = !flags.dump_attn.empty();

  const EditResult result =
      flags.simultaneous ? editor.simultaneous_edit(req) : editor.edit(req);

  json sidecar;
  sidecar["config"] = json::parse(run_config_to_json(cfg));
  sidecar["p_src"] = req.p_src.str();
  sidecar["p_edit"] = req.p_edit.str();
  sidecar["diagnostics"] =
      diagnostics_to_json(result.diagnostics, flags.step_diagnostics);

  if (!flags.simultaneous) {
    const int64_t bad =
        locality_violations(result.x_edit, req.x_src, result.mask);
    sidecar["locality_ok"] = bad == 0;
    if (bad != 0) {
      write_ppm(flags.out, result.x_edit);
      write_text(flags.out + ".json", sidecar.dump(2));
      std::cerr << "locality violation: " << bad
                << " background values changed\n";
      return 2;
    }
  }
  if (reconstruct) {
    sidecar["inside_psnr_db"] =
        psnr_region(result.x_edit, req.x_src, result.mask, true);
  }
  if (!flags.dump_attn.empty() &&
      !result.diagnostics.mean_cross_attention.empty()) {
    fs::create_directories(flags.dump_attn);
    const int s = model.config().image_size;
    const auto& maps = result.diagnostics.mean_cross_attention;
    for (size_t tok = 0; tok < maps.size(); ++tok) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "token_%02zu.pgm", tok);
      write_heatmap_pgm((fs::path(flags.dump_attn) / buf).string(), maps[tok],
                        s, s);
    }
  }

  write_ppm(flags.out, result.x_edit);
  write_text(flags.out + ".json", sidecar.dump(2));
  std::cout << "wrote " << flags.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shape-guided diffusion editing (toy pixel-space engine)"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("--config", common.config_path, "run config JSON");
  uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag, "override config seed");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene set");
  std::string gen_out;
  int gen_count = 0;
  gen->add_option("--out-dir", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of scenes");

  // train
  auto* tr = app.add_subcommand("train", "train the toy denoiser");
  std::string tr_data, tr_out;
  tr->add_option("--data", tr_data, "dataset dir or manifest")->required();
  tr->add_option("--out-ckpt", tr_out, "checkpoint path")->required();

  // edit / reconstruct
  EditFlags ef;
  auto add_edit_opts = [&](CLI::App* cmd, bool with_edit_prompt) {
    cmd->add_option("--ckpt", ef.ckpt, "model checkpoint")->required();
    cmd->add_option("--image", ef.image, "source PPM image")->required();
    cmd->add_option("--mask", ef.mask, "object mask PGM (inferred if absent)");
    cmd->add_option("--src", ef.src_prompt, "source prompt 'inside|outside'")
        ->required();
    if (with_edit_prompt) {
      cmd->add_option("--edit", ef.edit_prompt, "edit prompt 'inside|outside'")
          ->required();
    }
    cmd->add_option("--mode", ef.mode,
                    "constraint mode: none|token_only|soft|hard");
    cmd->add_option("--wg", ef.wg, "guidance scale");
    cmd->add_option("--steps", ef.steps, "DDIM steps");
    cmd->add_option("--reweight-scale", ef.reweight,
                    "upweight changed token columns");
    cmd->add_option("--out", ef.out, "output PPM path");
    cmd->add_flag("--diagnostics", ef.step_diagnostics,
                  "record per-step diagnostics in the sidecar");
    cmd->add_option("--dump-attn", ef.dump_attn,
                    "directory for per-token attention heatmaps");
  };
  auto* ed = app.add_subcommand("edit", "shape-guided local edit");
  add_edit_opts(ed, true);
  ed->add_flag("--simultaneous", ef.simultaneous,
               "edit inside and outside regions together (no blending)");
  auto* rec = app.add_subcommand(
      "reconstruct", "invert and regenerate with the source prompt (w_g = 0)");
  add_edit_opts(rec, false);

  // invert
  auto* inv = app.add_subcommand("invert", "DDIM inversion trajectory dump");
  std::string inv_ckpt, inv_image, inv_mask, inv_src, inv_mode, inv_dump;
  std::optional<int> inv_steps;
  inv->add_option("--ckpt", inv_ckpt)->required();
  inv->add_option("--image", inv_image)->required();
  inv->add_option("--mask", inv_mask, "object mask PGM (inferred if absent)");
  inv->add_option("--src", inv_src, "source prompt")->required();
  inv->add_option("--mode", inv_mode);
  inv->add_option("--steps", inv_steps);
  inv->add_option("--dump-trajectory", inv_dump, "output trajectory file")
      ->required();

  // eval
  auto* ev = app.add_subcommand("eval", "run the shape-faithfulness benchmark");
  std::string ev_ckpt, ev_data, ev_modes = "none,token_only,soft,hard";
  std::string ev_report = "report.json";
  std::optional<float> ev_wg;
  std::optional<int> ev_steps, ev_count;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_data, "dataset dir or manifest")->required();
  ev->add_option("--modes", ev_modes, "comma-separated constraint modes");
  ev->add_option("--report", ev_report, "output report JSON");
  ev->add_option("--wg", ev_wg, "guidance scale");
  ev->add_option("--steps", ev_steps, "DDIM steps");
  ev->add_option("--count", ev_count, "evaluate only the first N scenes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (seed_opt->count() > 0) common.seed = seed_flag;

  try {
    if (gen->parsed()) {
      RunConfig cfg = resolve_config(common);
      if (gen_count > 0) cfg.data.count = gen_count;
      const auto entries =
          make_dataset(cfg.seed, cfg.data.count, cfg.bench_options());
      write_dataset(gen_out, entries);
      write_text((fs::path(gen_out) / "vocab.json").string(),
                 resolve_vocab(cfg).to_json());
      write_text((fs::path(gen_out) / "config_echo.json").string(),
                 run_config_to_json(cfg));
      std::cout << "wrote " << entries.size() << " scenes to " << gen_out
                << "\n";
      return 0;
    }

    if (tr->parsed()) {
      RunConfig cfg = resolve_config(common);
      const Vocabulary vocab = resolve_vocab(cfg);
      const auto dataset = load_dataset(manifest_path_of(tr_data));
      std::vector<TrainExample> examples;
      examples.reserve(dataset.size());
      for (const auto& e : dataset) {
        examples.push_back({e.scene.image,
                            tokenize(e.scene.p_src, vocab,
                                     cfg.model.token_budget)});
      }
      Denoiser model(cfg.model);
      Rng rng(cfg.seed);
      model.init_weights(rng);
      const NoiseSchedule schedule = cfg.make_noise_schedule();
      const TrainReport report = train(
          model, examples, schedule, cfg.train_config(), [](int e, float l) {
            std::cout << "epoch " << e << " loss " << l << "\n";
          });
      model.save(tr_out);
      write_text(tr_out + ".config.json", run_config_to_json(cfg));
      std::cout << "saved " << tr_out << " (final loss "
                << report.epoch_loss.back() << ")\n";
      return 0;
    }

    if (ed->parsed()) return run_edit_like(common, ef, false);
    if (rec->parsed()) return run_edit_like(common, ef, true);

    if (inv->parsed()) {
      RunConfig cfg = resolve_config(common);
      if (!inv_mode.empty()) cfg.edit.mode = inv_mode;
      if (inv_steps.has_value()) cfg.edit.steps = *inv_steps;
      const Vocabulary vocab = resolve_vocab(cfg);
      const Denoiser model = load_model_checked(inv_ckpt, vocab);
      const NoiseSchedule schedule = cfg.make_noise_schedule();
      const IdentityCodec codec;
      const Editor editor(model, vocab, schedule, codec);
      const Tensor image = read_ppm(inv_image);
      const PromptPair p_src = PromptPair::parse(inv_src);
      ObjectMask mask;
      if (!inv_mask.empty()) {
        mask = ObjectMask::from_tensor(read_pgm(inv_mask));
      } else {
        mask = editor.infer_shape(image, p_src);
      }
      const InversionTrajectory traj =
          editor.invert(image, p_src, mask, cfg.constraint_mode(),
                        cfg.edit.steps, cfg.constraint_options(),
                        cfg.edit.clip_denoised);
      std::vector<std::pair<std::string, Tensor>> dump;
      for (size_t i = 0; i < traj.latents.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "z_%04zu", i);
        dump.emplace_back(buf, traj.latents[i]);
      }
      save_checkpoint(inv_dump, dump);
      write_text(inv_dump + ".config.json", run_config_to_json(cfg));
      std::cout << "wrote trajectory with " << traj.latents.size()
                << " latents to " << inv_dump << "\n";
      return 0;
    }

    if (ev->parsed()) {
      RunConfig cfg = resolve_config(common);
      if (ev_wg.has_value()) cfg.edit.w_g = *ev_wg;
      if (ev_steps.has_value()) cfg.edit.steps = *ev_steps;
      const Vocabulary vocab = resolve_vocab(cfg);
      const Denoiser model = load_model_checked(ev_ckpt, vocab);
      const NoiseSchedule schedule = cfg.make_noise_schedule();
      const IdentityCodec codec;
      const Editor editor(model, vocab, schedule, codec);
      auto dataset = load_dataset(manifest_path_of(ev_data));
      if (ev_count.has_value() &&
          *ev_count < static_cast<int>(dataset.size())) {
        dataset.resize(static_cast<size_t>(*ev_count));
      }
      BenchRunConfig run_cfg;
      run_cfg.modes.clear();
      std::stringstream ss(ev_modes);
      std::string mode;
      while (std::getline(ss, mode, ',')) {
        if (!mode.empty()) {
          run_cfg.modes.push_back(constraint_mode_from_string(mode));
        }
      }
      check(!run_cfg.modes.empty(), ErrorKind::config, "no modes requested");
      run_cfg.guidance = cfg.guidance();
      run_cfg.steps = cfg.edit.steps;
      run_cfg.constraint_opts = cfg.constraint_options();
      run_cfg.clip_denoised = cfg.edit.clip_denoised;
      const BenchReport report = run_benchmark(editor, dataset, run_cfg);
      write_text(ev_report,
                 bench_report_to_json(report, run_config_to_json(cfg)));
      std::cout << "mode        mIoU    PCK     KW-mIoU  (n, excluded)\n";
      for (const auto& s : report.summaries) {
        std::printf("%-11s %.4f  %.4f  %.4f   (%d, %d)\n", s.mode.c_str(),
                    s.mean_miou, s.mean_pck, s.mean_kw_miou, s.evaluated,
                    s.excluded);
      }
      std::cout << "wrote " << ev_report << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::config ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
