#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sgdm/tensor.hpp"
#include "sgdm/text.hpp"

namespace sgdm {

struct DenoiserConfig {
  int image_size = 16;  // H == W, power of two
  int channels = 3;
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 2;
  int token_budget = 8;
  int vocab_size = 0;  // must be set (or resolved from the default vocab)
  int t_train = 1000;
  // When set, the middle layer runs on a 2x average-pooled pixel grid, which
  // gives the attention sites a second resolution.
  bool pooled_middle = false;

  int token_count() const { return 1 + 2 * token_budget; }
  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

enum class AttentionKind { cross, self };

struct AttentionSite {
  int layer_index = 0;
  AttentionKind kind = AttentionKind::cross;
  int h = 0;
  int w = 0;

  bool operator==(const AttentionSite&) const = default;
};

// Post-softmax attention-map transform. Receives M with shape
// [heads, h*w, columns] (columns = token count for cross sites, h*w for self
// sites) and must return a map of identical shape with finite, nonnegative
// entries. Inference-only: forwards with a hook refuse to record gradients.
using AttentionTransform =
    std::function<Tensor(const AttentionSite&, const Tensor&)>;

// Toy text-conditional epsilon-prediction denoiser: pixels are flattened to a
// token sequence, every block applies self-attention, cross-attention over
// the prompt tokens, and an MLP. All attention maps pass through the optional
// transform hook between softmax and the value product.
class Denoiser {
 public:
  explicit Denoiser(const DenoiserConfig& config);

  void init_weights(Rng& rng);

  const DenoiserConfig& config() const { return config_; }

  // All attention sites of one forward pass, in visit order.
  std::vector<AttentionSite> sites() const;

  Tensor forward_eps(const Tensor& z_t, int t, const TokenizedPrompt& tokens,
                     const AttentionTransform& hook = nullptr) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;

  void save(const std::string& path) const;
  static Denoiser load(const std::string& path);

 private:
  struct Block {
    Tensor ln1_g, ln1_b;
    Tensor sa_wq, sa_wk, sa_wv, sa_wo;
    Tensor ln2_g, ln2_b;
    Tensor ca_wq, ca_wk, ca_wv, ca_wo;
    Tensor ln3_g, ln3_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };

  Tensor attention(const Tensor& queries_in, const Tensor& keys_in,
                   const Tensor& wq, const Tensor& wk, const Tensor& wv,
                   const Tensor& wo, const AttentionSite& site,
                   const AttentionTransform& hook) const;
  Tensor run_block(const Tensor& x, const Tensor& text, int layer, int h,
                   int w, const AttentionTransform& hook) const;
  bool layer_is_pooled(int layer) const;

  DenoiserConfig config_;
  Tensor token_emb_, token_pos_;
  Tensor pixel_proj_w_, pixel_proj_b_, pixel_pos_;
  Tensor time_w1_, time_b1_, time_w2_, time_b2_;
  std::vector<Block> blocks_;
  Tensor out_ln_g_, out_ln_b_, head_w_, head_b_;
};

// Sinusoidal timestep features of width `dim` (detached constant).
Tensor timestep_embedding(int t, int dim);

}  // namespace sgdm
