#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sgdm/diffusion.hpp"
#include "sgdm/model.hpp"

namespace sgdm {

struct TrainExample {
  Tensor image;  // [C, H, W] in [0, 1]
  TokenizedPrompt tokens;
};

struct TrainConfig {
  int epochs = 8;
  int batch_size = 16;
  float lr = 3e-4f;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float cfg_drop_rate = 0.1f;
  uint64_t seed = 0;
  int threads = 0;  // 0 = auto; per-item grads are reduced in index order
};

struct TrainReport {
  std::vector<float> epoch_loss;  // mean loss per epoch
  int64_t steps = 0;
  int64_t null_prompt_count = 0;  // items presented with the null prompt
  int64_t cond_prompt_count = 0;  // items presented with their own prompt
};

// Minimizes MSE(eps_hat, eps) over q_sample-noised images with uniform
// timesteps; with probability cfg_drop_rate an item's prompt is replaced by
// the null prompt so the model supports classifier-free guidance. Batch items
// may run in parallel; gradients are summed in item order, so results are
// bit-identical for any thread count.
TrainReport train(Denoiser& model, const std::vector<TrainExample>& dataset,
                  const NoiseSchedule& schedule, const TrainConfig& cfg,
                  const std::function<void(int, float)>& on_epoch = nullptr);

}  // namespace sgdm
