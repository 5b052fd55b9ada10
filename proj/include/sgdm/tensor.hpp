#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgdm/errors.hpp"
#include "sgdm/rng.hpp"

namespace sgdm {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node;
struct TapeEntry;
struct Access;

// Receives gradient contributions during a backward pass. Grads either land
// on the nodes themselves (training a live model) or in a detached map
// (data-parallel batch items).
class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual float* grad_for(Node* node) = 0;      // allocates on first touch
  virtual float* find(Node* node) = 0;          // nullptr when absent
};

}  // namespace detail

// Dense row-major float32 tensor. Copies are shallow handles to the same
// immutable buffer; ops never mutate their inputs. `mutable_data` is only
// valid before the tensor participates in an op.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);
  static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int ndim() const;
  int64_t dim(int i) const;  // negative i counts from the back
  int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;
  float at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const;
  void set_requires_grad(bool v);
  bool has_grad() const;
  std::span<const float> grad() const;
  void zero_grad();

  Tensor clone() const;   // deep copy, detached from any tape
  Tensor detach() const;  // shares the buffer, drops grad tracking

  detail::Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<detail::Node> node_;

  friend struct detail::Access;
};

// Ordered record of performed operations. Ops record onto the ambient tape
// installed by a TapeScope; without a scope nothing is recorded, which is the
// inference path. Single-threaded per computation.
class Tape {
 public:
  using GradMap =
      std::unordered_map<const detail::Node*, std::vector<float>>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int64_t size() const;
  void clear();

  // Reverse-mode sweep from `loss` (scalar). Grads accumulate on the nodes.
  void backward(const Tensor& loss);
  // Same sweep, but grads land in the returned map and nodes stay untouched.
  GradMap backward_collect(const Tensor& loss);

  void record(std::vector<std::shared_ptr<detail::Node>> inputs,
              std::shared_ptr<detail::Node> output,
              std::function<void(const float*, detail::GradSink&)> backward_fn);

 private:
  void run_backward(const Tensor& loss, detail::GradSink& sink);
  std::vector<detail::TapeEntry> entries_;
};

// Installs `tape` as the ambient tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* ambient_tape();

// Convenience wrapper over the loss tensor's own tape.
void backward(const Tensor& loss);

// ---- Operations ------------------------------------------------------------
// Shapes must match exactly except where noted. add/mul accept a right
// operand whose shape is a trailing suffix of the left's (broadcast over the
// leading dims). matmul contracts the trailing two dims; leading batch dims
// must be equal, or the 2-D operand broadcasts across the other's batch.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
// Sequence-layout spatial ops over a [h*w, d] tensor.
Tensor avg_pool2x(const Tensor& x, int h, int w);
Tensor upsample2x(const Tensor& x, int h, int w);

}  // namespace sgdm
