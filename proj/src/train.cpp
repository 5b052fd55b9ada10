#include "sgdm/train.hpp"

#include <cmath>

#include "sgdm/parallel.hpp"

namespace sgdm {

namespace {

class Adam {
 public:
  Adam(std::vector<Tensor> params, const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0f);
      v_.emplace_back(p.numel(), 0.0f);
    }
  }

  void step(const std::vector<std::vector<float>>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      float* p = params_[i].mutable_data().data();
      const std::vector<float>& g = grads[i];
      std::vector<float>& m = m_[i];
      std::vector<float>& v = v_[i];
      for (size_t j = 0; j < g.size(); ++j) {
        m[j] = cfg_.adam_beta1 * m[j] + (1.0f - cfg_.adam_beta1) * g[j];
        v[j] = cfg_.adam_beta2 * v[j] + (1.0f - cfg_.adam_beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p[j] -= static_cast<float>(cfg_.lr * mhat /
                                   (std::sqrt(vhat) + 1e-8));
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  TrainConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace

TrainReport train(Denoiser& model, const std::vector<TrainExample>& dataset,
                  const NoiseSchedule& schedule, const TrainConfig& cfg,
                  const std::function<void(int, float)>& on_epoch) {
  check(!dataset.empty(), ErrorKind::contract, "training dataset is empty");
  check(cfg.epochs >= 1 && cfg.batch_size >= 1, ErrorKind::parameter,
        "epochs and batch_size must be >= 1");
  check(cfg.cfg_drop_rate >= 0.0f && cfg.cfg_drop_rate <= 1.0f,
        ErrorKind::parameter, "cfg_drop_rate must be in [0, 1]");
  check(schedule.t_train == model.config().t_train, ErrorKind::consistency,
        "schedule and model disagree on t_train");

  const TokenizedPrompt null_tokens = null_prompt(model.config().token_budget);
  for (const auto& ex : dataset) {
    check(ex.tokens.length() == model.config().token_count(),
          ErrorKind::dimension, "dataset prompt length mismatch");
  }

  std::vector<Tensor> params = model.parameters();
  Adam opt(params, cfg);
  Rng master(cfg.seed);
  TrainReport report;

  const int64_t n = static_cast<int64_t>(dataset.size());
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = master.fork(static_cast<uint64_t>(epoch) + 1);
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = epoch_rng.uniform_int(0, i);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double epoch_loss = 0.0;
    int64_t epoch_items = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t count = std::min<int64_t>(cfg.batch_size, n - start);

      // Per-item draws come from an index-derived stream so results do not
      // depend on worker scheduling.
      struct ItemResult {
        float loss = 0.0f;
        Tape::GradMap grads;
        bool null_prompted = false;
      };
      std::vector<ItemResult> results(static_cast<size_t>(count));
      parallel_for(count, cfg.threads, [&](int64_t bi) {
        const int64_t idx = order[static_cast<size_t>(start + bi)];
        Rng item_rng = epoch_rng.fork(
            0x1000 + static_cast<uint64_t>(start + bi));
        const TrainExample& ex = dataset[static_cast<size_t>(idx)];

        const int t =
            static_cast<int>(item_rng.uniform_int(1, schedule.t_train));
        Tensor eps(ex.image.shape());
        for (float& x : eps.mutable_data()) x = item_rng.normal();
        const bool drop = item_rng.next_double() < cfg.cfg_drop_rate;
        const Tensor x_t = q_sample(ex.image, t, eps, schedule);

        Tape tape;
        TapeScope scope(&tape);
        Tensor pred =
            model.forward_eps(x_t, t, drop ? null_tokens : ex.tokens);
        Tensor loss = mse(pred, eps);
        const float loss_v = loss.item();
        if (!std::isfinite(loss_v)) {
          fail(ErrorKind::training, "training diverged: loss is not finite");
        }
        ItemResult& r = results[static_cast<size_t>(bi)];
        r.loss = loss_v;
        r.grads = tape.backward_collect(loss);
        r.null_prompted = drop;
      });

      // Deterministic reduction in item order.
      std::vector<std::vector<float>> batch_grads;
      batch_grads.reserve(params.size());
      for (const auto& p : params) {
        batch_grads.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
      }
      const float inv_count = 1.0f / static_cast<float>(count);
      for (int64_t bi = 0; bi < count; ++bi) {
        const ItemResult& r = results[static_cast<size_t>(bi)];
        epoch_loss += r.loss;
        ++epoch_items;
        if (r.null_prompted) {
          ++report.null_prompt_count;
        } else {
          ++report.cond_prompt_count;
        }
        for (size_t pi = 0; pi < params.size(); ++pi) {
          auto it = r.grads.find(params[pi].node());
          if (it == r.grads.end()) continue;
          float* acc = batch_grads[pi].data();
          const std::vector<float>& g = it->second;
          for (size_t j = 0; j < g.size(); ++j) acc[j] += g[j] * inv_count;
        }
      }
      opt.step(batch_grads);
      ++report.steps;
    }

    const float mean_loss =
        static_cast<float>(epoch_loss / static_cast<double>(epoch_items));
    report.epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return report;
}

}  // namespace sgdm
