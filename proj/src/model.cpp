#include "sgdm/model.hpp"

#include <cmath>

#include "sgdm/checkpoint.hpp"

namespace sgdm {

void DenoiserConfig::validate() const {
  check(image_size >= 2 && (image_size & (image_size - 1)) == 0,
        ErrorKind::parameter, "image_size must be a power of two >= 2");
  check(channels >= 1, ErrorKind::parameter, "channels must be >= 1");
  check(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0,
        ErrorKind::parameter, "d_model must be divisible by n_heads");
  check(n_layers >= 1, ErrorKind::parameter, "n_layers must be >= 1");
  check(token_budget >= 1, ErrorKind::parameter, "token_budget must be >= 1");
  check(vocab_size >= 2, ErrorKind::parameter,
        "vocab_size must cover the reserved tokens");
  check(t_train >= 1, ErrorKind::parameter, "t_train must be >= 1");
  if (pooled_middle) {
    check(image_size >= 4, ErrorKind::parameter,
          "pooled_middle needs image_size >= 4");
  }
}

Tensor timestep_embedding(int t, int dim) {
  std::vector<float> v(static_cast<size_t>(dim), 0.0f);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    v[static_cast<size_t>(2 * i)] = static_cast<float>(std::sin(t * freq));
    v[static_cast<size_t>(2 * i + 1)] = static_cast<float>(std::cos(t * freq));
  }
  return Tensor::from_data({dim}, std::move(v));
}

Denoiser::Denoiser(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.d_model;
  const int hw = config_.image_size * config_.image_size;
  token_emb_ = Tensor({config_.vocab_size, d}, true);
  token_pos_ = Tensor({config_.token_count(), d}, true);
  pixel_proj_w_ = Tensor({config_.channels, d}, true);
  pixel_proj_b_ = Tensor({d}, true);
  pixel_pos_ = Tensor({hw, d}, true);
  time_w1_ = Tensor({d, d}, true);
  time_b1_ = Tensor({d}, true);
  time_w2_ = Tensor({d, d}, true);
  time_b2_ = Tensor({d}, true);
  blocks_.resize(static_cast<size_t>(config_.n_layers));
  for (auto& b : blocks_) {
    b.ln1_g = Tensor({d}, true);
    b.ln1_b = Tensor({d}, true);
    b.sa_wq = Tensor({d, d}, true);
    b.sa_wk = Tensor({d, d}, true);
    b.sa_wv = Tensor({d, d}, true);
    b.sa_wo = Tensor({d, d}, true);
    b.ln2_g = Tensor({d}, true);
    b.ln2_b = Tensor({d}, true);
    b.ca_wq = Tensor({d, d}, true);
    b.ca_wk = Tensor({d, d}, true);
    b.ca_wv = Tensor({d, d}, true);
    b.ca_wo = Tensor({d, d}, true);
    b.ln3_g = Tensor({d}, true);
    b.ln3_b = Tensor({d}, true);
    b.mlp_w1 = Tensor({d, 4 * d}, true);
    b.mlp_b1 = Tensor({4 * d}, true);
    b.mlp_w2 = Tensor({4 * d, d}, true);
    b.mlp_b2 = Tensor({d}, true);
  }
  out_ln_g_ = Tensor({d}, true);
  out_ln_b_ = Tensor({d}, true);
  head_w_ = Tensor({d, config_.channels}, true);
  head_b_ = Tensor({config_.channels}, true);
  // Usable without explicit init (layer norms need unit gain).
  Rng rng(0);
  init_weights(rng);
}

void Denoiser::init_weights(Rng& rng) {
  const float std_w = 0.02f;
  auto fill_normal = [&](Tensor& t) {
    for (float& x : t.mutable_data()) x = rng.normal() * std_w;
  };
  auto fill_const = [](Tensor& t, float v) {
    for (float& x : t.mutable_data()) x = v;
  };
  fill_normal(token_emb_);
  fill_normal(token_pos_);
  fill_normal(pixel_proj_w_);
  fill_const(pixel_proj_b_, 0.0f);
  fill_normal(pixel_pos_);
  fill_normal(time_w1_);
  fill_const(time_b1_, 0.0f);
  fill_normal(time_w2_);
  fill_const(time_b2_, 0.0f);
  for (auto& b : blocks_) {
    fill_const(b.ln1_g, 1.0f);
    fill_const(b.ln1_b, 0.0f);
    fill_normal(b.sa_wq);
    fill_normal(b.sa_wk);
    fill_normal(b.sa_wv);
    fill_normal(b.sa_wo);
    fill_const(b.ln2_g, 1.0f);
    fill_const(b.ln2_b, 0.0f);
    fill_normal(b.ca_wq);
    fill_normal(b.ca_wk);
    fill_normal(b.ca_wv);
    fill_normal(b.ca_wo);
    fill_const(b.ln3_g, 1.0f);
    fill_const(b.ln3_b, 0.0f);
    fill_normal(b.mlp_w1);
    fill_const(b.mlp_b1, 0.0f);
    fill_normal(b.mlp_w2);
    fill_const(b.mlp_b2, 0.0f);
  }
  fill_const(out_ln_g_, 1.0f);
  fill_const(out_ln_b_, 0.0f);
  fill_normal(head_w_);
  fill_const(head_b_, 0.0f);
}

bool Denoiser::layer_is_pooled(int layer) const {
  return config_.pooled_middle && layer == config_.n_layers / 2;
}

std::vector<AttentionSite> Denoiser::sites() const {
  std::vector<AttentionSite> out;
  for (int l = 0; l < config_.n_layers; ++l) {
    const int res =
        layer_is_pooled(l) ? config_.image_size / 2 : config_.image_size;
    out.push_back({l, AttentionKind::self, res, res});
    out.push_back({l, AttentionKind::cross, res, res});
  }
  return out;
}

Tensor Denoiser::attention(const Tensor& queries_in, const Tensor& keys_in,
                           const Tensor& wq, const Tensor& wk,
                           const Tensor& wv, const Tensor& wo,
                           const AttentionSite& site,
                           const AttentionTransform& hook) const {
  const int heads = config_.n_heads;
  const int64_t dh = config_.head_dim();
  const int64_t nq = queries_in.dim(0);
  const int64_t nk = keys_in.dim(0);

  Tensor q = permute(reshape(matmul(queries_in, wq), {nq, heads, dh}), {1, 0, 2});
  Tensor k = permute(reshape(matmul(keys_in, wk), {nk, heads, dh}), {1, 0, 2});
  Tensor v = permute(reshape(matmul(keys_in, wv), {nk, heads, dh}), {1, 0, 2});

  Tensor scores = scale(matmul(q, permute(k, {0, 2, 1})),
                        1.0f / std::sqrt(static_cast<float>(dh)));
  Tensor attn = softmax_lastdim(scores);

  if (hook) {
    check(ambient_tape() == nullptr, ErrorKind::contract,
          "attention hooks are inference-only; no tape may be active");
    Tensor transformed = hook(site, attn);
    check(transformed.defined() && transformed.shape() == attn.shape(),
          ErrorKind::dimension,
          "attention transform changed the map shape at layer " +
              std::to_string(site.layer_index));
    for (float x : transformed.data()) {
      check(std::isfinite(x) && x >= 0.0f, ErrorKind::numeric,
            "attention transform produced negative or non-finite entries");
    }
    attn = transformed;
  }

  Tensor mixed = reshape(permute(matmul(attn, v), {1, 0, 2}),
                         {nq, static_cast<int64_t>(config_.d_model)});
  return matmul(mixed, wo);
}

Tensor Denoiser::run_block(const Tensor& x_in, const Tensor& text, int layer,
                           int h, int w, const AttentionTransform& hook) const {
  const Block& b = blocks_[static_cast<size_t>(layer)];
  Tensor x = x_in;
  Tensor a = layer_norm(x, b.ln1_g, b.ln1_b);
  x = add(x, attention(a, a, b.sa_wq, b.sa_wk, b.sa_wv, b.sa_wo,
                       {layer, AttentionKind::self, h, w}, hook));
  a = layer_norm(x, b.ln2_g, b.ln2_b);
  x = add(x, attention(a, text, b.ca_wq, b.ca_wk, b.ca_wv, b.ca_wo,
                       {layer, AttentionKind::cross, h, w}, hook));
  a = layer_norm(x, b.ln3_g, b.ln3_b);
  Tensor m = silu(add(matmul(a, b.mlp_w1), b.mlp_b1));
  x = add(x, add(matmul(m, b.mlp_w2), b.mlp_b2));
  return x;
}

Tensor Denoiser::forward_eps(const Tensor& z_t, int t,
                             const TokenizedPrompt& tokens,
                             const AttentionTransform& hook) const {
  const int hsize = config_.image_size;
  const int64_t hw = static_cast<int64_t>(hsize) * hsize;
  const Shape expected = {config_.channels, hsize, hsize};
  check(z_t.defined() && z_t.shape() == expected, ErrorKind::dimension,
        "forward_eps: expected z of shape " + shape_str(expected) + ", got " +
            (z_t.defined() ? shape_str(z_t.shape()) : std::string("undefined")));
  check(t >= 1 && t <= config_.t_train, ErrorKind::contract,
        "forward_eps: timestep " + std::to_string(t) + " outside [1, " +
            std::to_string(config_.t_train) + "]");
  check(tokens.length() == config_.token_count(), ErrorKind::dimension,
        "forward_eps: prompt has " + std::to_string(tokens.length()) +
            " tokens, model expects " + std::to_string(config_.token_count()));
  for (float v : z_t.data()) {
    check(std::isfinite(v), ErrorKind::numeric,
          "forward_eps: non-finite input latent");
  }

  // Pixel tokens.
  Tensor x = permute(reshape(z_t, {config_.channels, hw}), {1, 0});
  x = add(add(matmul(x, pixel_proj_w_), pixel_proj_b_), pixel_pos_);

  // Timestep features, added to every pixel token.
  Tensor temb = reshape(timestep_embedding(t, config_.d_model),
                        {1, config_.d_model});
  temb = add(matmul(silu(add(matmul(temb, time_w1_), time_b1_)), time_w2_),
             time_b2_);
  x = add(x, reshape(temb, {config_.d_model}));

  // Prompt tokens.
  Tensor text = add(embedding_lookup(token_emb_, tokens.ids), token_pos_);

  for (int l = 0; l < config_.n_layers; ++l) {
    if (layer_is_pooled(l)) {
      Tensor pooled = avg_pool2x(x, hsize, hsize);
      Tensor ran = run_block(pooled, text, l, hsize / 2, hsize / 2, hook);
      x = add(x, upsample2x(sub(ran, pooled), hsize / 2, hsize / 2));
    } else {
      x = run_block(x, text, l, hsize, hsize, hook);
    }
  }

  Tensor y = layer_norm(x, out_ln_g_, out_ln_b_);
  y = add(matmul(y, head_w_), head_b_);
  return reshape(permute(y, {1, 0}), expected);
}

std::vector<std::pair<std::string, Tensor>> Denoiser::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> p;
  p.emplace_back("token_emb", token_emb_);
  p.emplace_back("token_pos", token_pos_);
  p.emplace_back("pixel_proj_w", pixel_proj_w_);
  p.emplace_back("pixel_proj_b", pixel_proj_b_);
  p.emplace_back("pixel_pos", pixel_pos_);
  p.emplace_back("time_w1", time_w1_);
  p.emplace_back("time_b1", time_b1_);
  p.emplace_back("time_w2", time_w2_);
  p.emplace_back("time_b2", time_b2_);
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    const Block& b = blocks_[l];
    p.emplace_back(pre + "ln1_g", b.ln1_g);
    p.emplace_back(pre + "ln1_b", b.ln1_b);
    p.emplace_back(pre + "sa_wq", b.sa_wq);
    p.emplace_back(pre + "sa_wk", b.sa_wk);
    p.emplace_back(pre + "sa_wv", b.sa_wv);
    p.emplace_back(pre + "sa_wo", b.sa_wo);
    p.emplace_back(pre + "ln2_g", b.ln2_g);
    p.emplace_back(pre + "ln2_b", b.ln2_b);
    p.emplace_back(pre + "ca_wq", b.ca_wq);
    p.emplace_back(pre + "ca_wk", b.ca_wk);
    p.emplace_back(pre + "ca_wv", b.ca_wv);
    p.emplace_back(pre + "ca_wo", b.ca_wo);
    p.emplace_back(pre + "ln3_g", b.ln3_g);
    p.emplace_back(pre + "ln3_b", b.ln3_b);
    p.emplace_back(pre + "mlp_w1", b.mlp_w1);
    p.emplace_back(pre + "mlp_b1", b.mlp_b1);
    p.emplace_back(pre + "mlp_w2", b.mlp_w2);
    p.emplace_back(pre + "mlp_b2", b.mlp_b2);
  }
  p.emplace_back("out_ln_g", out_ln_g_);
  p.emplace_back("out_ln_b", out_ln_b_);
  p.emplace_back("head_w", head_w_);
  p.emplace_back("head_b", head_b_);
  return p;
}

std::vector<Tensor> Denoiser::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void Denoiser::save(const std::string& path) const {
  std::vector<std::pair<std::string, Tensor>> entries;
  const std::vector<float> meta = {
      static_cast<float>(config_.image_size),
      static_cast<float>(config_.channels),
      static_cast<float>(config_.d_model),
      static_cast<float>(config_.n_layers),
      static_cast<float>(config_.n_heads),
      static_cast<float>(config_.token_budget),
      static_cast<float>(config_.vocab_size),
      static_cast<float>(config_.t_train),
      config_.pooled_middle ? 1.0f : 0.0f,
  };
  entries.emplace_back(
      "meta", Tensor::from_data({static_cast<int64_t>(meta.size())}, meta));
  for (auto& np : named_parameters()) entries.push_back(np);
  save_checkpoint(path, entries);
}

Denoiser Denoiser::load(const std::string& path) {
  auto entries = load_checkpoint(path);
  auto meta_it = entries.find("meta");
  check(meta_it != entries.end(), ErrorKind::consistency,
        "checkpoint is missing the model meta record");
  const auto& meta = meta_it->second;
  check(meta.numel() == 9, ErrorKind::consistency,
        "unexpected model meta record size");
  const auto m = meta.data();
  DenoiserConfig cfg;
  cfg.image_size = static_cast<int>(m[0]);
  cfg.channels = static_cast<int>(m[1]);
  cfg.d_model = static_cast<int>(m[2]);
  cfg.n_layers = static_cast<int>(m[3]);
  cfg.n_heads = static_cast<int>(m[4]);
  cfg.token_budget = static_cast<int>(m[5]);
  cfg.vocab_size = static_cast<int>(m[6]);
  cfg.t_train = static_cast<int>(m[7]);
  cfg.pooled_middle = m[8] != 0.0f;
  Denoiser model(cfg);
  for (auto& [name, param] : model.named_parameters()) {
    auto it = entries.find(name);
    check(it != entries.end(), ErrorKind::consistency,
          "checkpoint is missing tensor '" + name + "'");
    check(it->second.shape() == param.shape(), ErrorKind::consistency,
          "checkpoint tensor '" + name + "' has shape " +
              shape_str(it->second.shape()) + ", expected " +
              shape_str(param.shape()));
    Tensor p = param;  // shared handle onto the model's storage
    std::copy(it->second.data().begin(), it->second.data().end(),
              p.mutable_data().begin());
  }
  return model;
}

}  // namespace sgdm
