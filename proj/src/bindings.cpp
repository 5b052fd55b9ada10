#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sgdm/bench.hpp"
#include "sgdm/checkpoint.hpp"
#include "sgdm/config.hpp"
#include "sgdm/image_io.hpp"
#include "sgdm/pipeline.hpp"
#include "sgdm/train.hpp"

namespace py = pybind11;
using namespace sgdm;

namespace {

Tensor tensor_from_array(const py::array_t<float, py::array::c_style |
                                                      py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (int i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
  std::vector<ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

ObjectMask mask_from_array(const py::array_t<float, py::array::c_style |
                                                        py::array::forcecast>& a) {
  if (a.ndim() != 2) {
    throw py::value_error("mask array must be 2-D");
  }
  return ObjectMask::from_tensor(tensor_from_array(a));
}

py::array_t<float> array_from_mask(const ObjectMask& m) {
  return array_from_tensor(m.to_tensor());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shape-guided diffusion editing core (toy pixel-space engine)";

  py::register_exception<Error>(m, "SgdmError");

  // ---- diffusion core ----
  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_readonly("t_train", &NoiseSchedule::t_train)
      .def("alpha_bar", &NoiseSchedule::alpha_bar);
  m.def("make_schedule", &make_schedule, py::arg("t_train"),
        py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);
  m.def("make_grid_timesteps", [](int steps, int t_train) {
    return make_grid(steps, t_train).timesteps;
  });
  m.def("q_sample", [](py::array_t<float> x0, int t, py::array_t<float> eps,
                       const NoiseSchedule& s) {
    return array_from_tensor(
        q_sample(tensor_from_array(x0), t, tensor_from_array(eps), s));
  });
  m.def("ddim_step", [](py::array_t<float> z, py::array_t<float> eps, int t,
                        int t_prev, const NoiseSchedule& s) {
    return array_from_tensor(
        ddim_step(tensor_from_array(z), tensor_from_array(eps), t, t_prev, s));
  });
  m.def("ddim_invert_step",
        [](py::array_t<float> z, py::array_t<float> eps, int t_prev, int t,
           const NoiseSchedule& s) {
          return array_from_tensor(ddim_invert_step(
              tensor_from_array(z), tensor_from_array(eps), t_prev, t, s));
        });
  m.def("cfg_combine",
        [](py::array_t<float> cond, py::array_t<float> uncond, float w,
           const std::string& anchor) {
          return array_from_tensor(
              cfg_combine(tensor_from_array(cond), tensor_from_array(uncond),
                          w,
                          anchor == "unconditional" ? CfgAnchor::unconditional
                                                    : CfgAnchor::conditional));
        },
        py::arg("z_cond"), py::arg("z_uncond"), py::arg("w_g"),
        py::arg("anchor") = "conditional");

  // ---- text ----
  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<const std::vector<std::string>&>())
      .def("id", &Vocabulary::id)
      .def("word", &Vocabulary::word)
      .def("contains", &Vocabulary::contains)
      .def("size", &Vocabulary::size)
      .def("to_json", &Vocabulary::to_json)
      .def_static("from_json", &Vocabulary::from_json);
  m.def("default_vocabulary", [] { return default_vocabulary(); });

  py::class_<PromptPair>(m, "PromptPair")
      .def(py::init([](const std::string& spec) {
             return PromptPair::parse(spec);
           }),
           py::arg("spec"))
      .def_readwrite("inside_text", &PromptPair::inside_text)
      .def_readwrite("outside_text", &PromptPair::outside_text)
      .def("__str__", &PromptPair::str);

  py::class_<TokenizedPrompt>(m, "TokenizedPrompt")
      .def_readonly("ids", &TokenizedPrompt::ids)
      .def_readonly("j_in", &TokenizedPrompt::j_in)
      .def_readonly("j_out", &TokenizedPrompt::j_out)
      .def_readonly("bos_index", &TokenizedPrompt::bos_index)
      .def_readonly("budget", &TokenizedPrompt::budget);
  m.def("tokenize", &tokenize);
  m.def("detokenize", &detokenize);
  m.def("null_prompt", &null_prompt);

  // ---- constraint ----
  py::enum_<ConstraintMode>(m, "ConstraintMode")
      .value("none", ConstraintMode::none)
      .value("token_only", ConstraintMode::token_only)
      .value("soft", ConstraintMode::soft)
      .value("hard", ConstraintMode::hard);

  py::class_<MaskLevel>(m, "MaskLevel")
      .def_readonly("h", &MaskLevel::h)
      .def_readonly("w", &MaskLevel::w)
      .def_readonly("soft", &MaskLevel::soft)
      .def_readonly("hard", &MaskLevel::hard);

  m.def("downsample_mask",
        [](py::array_t<float> mask, int h, int w) {
          const ObjectMask om = mask_from_array(mask);
          std::vector<AttentionSite> sites = {
              {0, AttentionKind::cross, h, w}};
          return build_pyramid(om, sites).level_for(h, w);
        },
        "Area-average pooled soft mask and thresholded hard mask");

  m.def("constrain_cross",
        [](py::array_t<float> attn, const MaskLevel& level,
           const std::vector<int>& j_in, const std::vector<int>& j_out,
           int bos_index, ConstraintMode mode, bool renormalize) {
          ConstraintOptions opts;
          opts.renormalize_rows = renormalize;
          return array_from_tensor(constrain_cross(
              tensor_from_array(attn), level, j_in, j_out, bos_index, mode,
              opts));
        },
        py::arg("attn"), py::arg("level"), py::arg("j_in"), py::arg("j_out"),
        py::arg("bos_index"), py::arg("mode"), py::arg("renormalize") = false);
  m.def("constrain_self",
        [](py::array_t<float> attn, const MaskLevel& level, ConstraintMode mode,
           bool renormalize) {
          ConstraintOptions opts;
          opts.renormalize_rows = renormalize;
          return array_from_tensor(
              constrain_self(tensor_from_array(attn), level, mode, opts));
        },
        py::arg("attn"), py::arg("level"), py::arg("mode"),
        py::arg("renormalize") = false);
  m.def("reweight_cross",
        [](py::array_t<float> attn, float scale, const std::vector<int>& target) {
          ReweightConfig cfg;
          cfg.scale = scale;
          cfg.target = target;
          return array_from_tensor(reweight_cross(tensor_from_array(attn), cfg));
        });

  // ---- model ----
  py::class_<DenoiserConfig>(m, "DenoiserConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &DenoiserConfig::image_size)
      .def_readwrite("channels", &DenoiserConfig::channels)
      .def_readwrite("d_model", &DenoiserConfig::d_model)
      .def_readwrite("n_layers", &DenoiserConfig::n_layers)
      .def_readwrite("n_heads", &DenoiserConfig::n_heads)
      .def_readwrite("token_budget", &DenoiserConfig::token_budget)
      .def_readwrite("vocab_size", &DenoiserConfig::vocab_size)
      .def_readwrite("t_train", &DenoiserConfig::t_train)
      .def_readwrite("pooled_middle", &DenoiserConfig::pooled_middle);

  py::class_<Denoiser>(m, "Denoiser")
      .def(py::init<const DenoiserConfig&>())
      .def("init_weights",
           [](Denoiser& d, uint64_t seed) {
             Rng rng(seed);
             d.init_weights(rng);
           })
      .def("config", &Denoiser::config)
      .def("forward_eps",
           [](const Denoiser& d, py::array_t<float> z, int t,
              const TokenizedPrompt& tokens) {
             return array_from_tensor(
                 d.forward_eps(tensor_from_array(z), t, tokens));
           })
      .def("save", &Denoiser::save)
      .def_static("load", &Denoiser::load);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("cfg_drop_rate", &TrainConfig::cfg_drop_rate)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("threads", &TrainConfig::threads);

  m.def("train_on_scenes",
        [](Denoiser& model, const std::vector<py::dict>& items,
           const NoiseSchedule& schedule, const TrainConfig& cfg) {
          std::vector<TrainExample> examples;
          for (const auto& item : items) {
            TrainExample ex;
            ex.image = tensor_from_array(
                item["image"].cast<py::array_t<float>>());
            ex.tokens = tokenize(
                PromptPair::parse(item["p_src"].cast<std::string>()),
                default_vocabulary(), model.config().token_budget);
            examples.push_back(std::move(ex));
          }
          const TrainReport report = train(model, examples, schedule, cfg);
          py::dict out;
          out["epoch_loss"] = report.epoch_loss;
          out["steps"] = report.steps;
          out["null_prompt_count"] = report.null_prompt_count;
          out["cond_prompt_count"] = report.cond_prompt_count;
          return out;
        });

  // ---- scenes, metrics ----
  m.def("sample_scene_dict", [](uint64_t seed, int image_size) {
    BenchOptions opts;
    opts.image_size = image_size;
    const Scene s = sample_scene(seed, opts);
    py::dict out;
    out["image"] = array_from_tensor(s.image);
    out["mask"] = array_from_mask(s.mask);
    out["p_src"] = s.p_src.str();
    out["class"] = to_string(s.spec.shape);
    py::dict kps;
    for (const auto& k : s.keypoints) {
      kps[py::str(k.name)] = py::make_tuple(k.x, k.y);
    }
    out["keypoints"] = kps;
    return out;
  }, py::arg("seed"), py::arg("image_size") = 16);

  m.def("oracle_segment",
        [](py::array_t<float> image, const std::string& class_name) {
          return array_from_mask(
              oracle_segment(tensor_from_array(image), class_name));
        });
  m.def("miou",
        [](py::array_t<float> pred, py::array_t<float> gt,
           py::array_t<float> region) -> py::object {
          const auto v = miou(mask_from_array(pred), mask_from_array(gt),
                              mask_from_array(region));
          if (!v.has_value()) return py::none();
          return py::float_(*v);
        });
  m.def("kw_miou", &kw_miou);

  // ---- end-to-end edit ----
  m.def("run_edit",
        [](const Denoiser& model, py::array_t<float> image,
           const std::string& p_src, const std::string& p_edit,
           py::object mask, float w_g, int steps, ConstraintMode mode,
           float reweight_scale, bool simultaneous) {
          static const IdentityCodec codec;
          const NoiseSchedule schedule = make_schedule(model.config().t_train);
          const Editor editor(model, default_vocabulary(), schedule, codec);
          EditRequest req;
          req.x_src = tensor_from_array(image);
          req.p_src = PromptPair::parse(p_src);
          req.p_edit = PromptPair::parse(p_edit);
          if (!mask.is_none()) {
            req.mask = mask_from_array(mask.cast<py::array_t<float>>());
          }
          req.guidance.w_g = w_g;
          req.guidance.reweight_scale = reweight_scale;
          req.steps = steps;
          req.mode = mode;
          const EditResult result = simultaneous
                                        ? editor.simultaneous_edit(req)
                                        : editor.edit(req);
          py::dict out;
          out["x_edit"] = array_from_tensor(result.x_edit);
          out["mask"] = array_from_mask(result.mask);
          out["hook_invocations"] = result.diagnostics.hook_invocations;
          return out;
        },
        py::arg("model"), py::arg("image"), py::arg("p_src"), py::arg("p_edit"),
        py::arg("mask") = py::none(), py::arg("w_g") = 3.5f,
        py::arg("steps") = 50, py::arg("mode") = ConstraintMode::hard,
        py::arg("reweight_scale") = 1.0f, py::arg("simultaneous") = false);

  // ---- image io ----
  m.def("read_ppm", [](const std::string& p) {
    return array_from_tensor(read_ppm(p));
  });
  m.def("write_ppm", [](const std::string& p, py::array_t<float> img) {
    write_ppm(p, tensor_from_array(img));
  });
  m.def("read_pgm", [](const std::string& p) {
    return array_from_tensor(read_pgm(p));
  });
  m.def("write_pgm", [](const std::string& p, py::array_t<float> img) {
    write_pgm(p, tensor_from_array(img));
  });
}
