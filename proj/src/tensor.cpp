#include "sgdm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sgdm {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<float>> values;
  bool requires_grad = false;
  std::unique_ptr<std::vector<float>> grad;
  Tape* tape = nullptr;       // tape whose entry produced this node
  int64_t tape_index = -1;
};

struct TapeEntry {
  std::vector<std::shared_ptr<Node>> inputs;
  std::shared_ptr<Node> output;
  std::function<void(const float*, GradSink&)> backward_fn;
};

struct Access {
  static const std::shared_ptr<Node>& sp(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }
};

namespace {

// Grads accumulate directly on the nodes.
class NodeGradSink : public GradSink {
 public:
  float* grad_for(Node* node) override {
    if (!node->grad) {
      node->grad = std::make_unique<std::vector<float>>(
          shape_numel(node->shape), 0.0f);
    }
    return node->grad->data();
  }
  float* find(Node* node) override {
    return node->grad ? node->grad->data() : nullptr;
  }
};

// Grads accumulate in a detached map; the nodes stay untouched.
class MapGradSink : public GradSink {
 public:
  explicit MapGradSink(Tape::GradMap& map) : map_(map) {}
  float* grad_for(Node* node) override {
    auto it = map_.find(node);
    if (it == map_.end()) {
      it = map_.emplace(node, std::vector<float>(shape_numel(node->shape), 0.0f))
               .first;
    }
    return it->second.data();
  }
  float* find(Node* node) override {
    auto it = map_.find(node);
    return it == map_.end() ? nullptr : it->second.data();
  }

 private:
  Tape::GradMap& map_;
};

}  // namespace
}  // namespace detail

using detail::Access;
using detail::GradSink;
using detail::Node;

namespace {

thread_local Tape* g_ambient_tape = nullptr;

std::shared_ptr<Node> new_node(Shape shape) {
  auto n = std::make_shared<Node>();
  n->values = std::make_shared<std::vector<float>>(shape_numel(shape), 0.0f);
  n->shape = std::move(shape);
  return n;
}

void check_finite_buffer(const std::vector<float>& v, const char* where) {
  for (float x : v) {
    if (!std::isfinite(x)) {
      fail(ErrorKind::numeric,
           std::string(where) + " produced or received non-finite values");
    }
  }
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Records the op on the ambient tape when gradients are being traced.
void maybe_record(std::initializer_list<const Tensor*> inputs,
                  const Tensor& output,
                  std::function<void(const float*, GradSink&)> backward_fn) {
  Tape* tape = g_ambient_tape;
  if (!tape || !any_requires_grad(inputs)) return;
  std::vector<std::shared_ptr<Node>> in_nodes;
  in_nodes.reserve(inputs.size());
  for (const Tensor* t : inputs) in_nodes.push_back(Access::sp(*t));
  Access::sp(output)->requires_grad = true;
  tape->record(std::move(in_nodes), Access::sp(output), std::move(backward_fn));
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const float* __restrict A, const float* __restrict B,
             float* __restrict C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const float* a_row = A + i * k;
    float* c_row = C + i * n;
    int64_t l = 0;
    for (; l + 4 <= k; l += 4) {
      const float a0 = a_row[l], a1 = a_row[l + 1];
      const float a2 = a_row[l + 2], a3 = a_row[l + 3];
      const float* b0 = B + l * n;
      const float* b1 = b0 + n;
      const float* b2 = b1 + n;
      const float* b3 = b2 + n;
      for (int64_t j = 0; j < n; ++j) {
        c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
    }
    for (; l < k; ++l) {
      const float av = a_row[l];
      const float* b_row = B + l * n;
      for (int64_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const float* __restrict A, const float* __restrict B,
             float* __restrict C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const float* a_row = A + i * k;
    float* c_row = C + i * n;
    int64_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const float* b0 = B + j * k;
      const float* b1 = b0 + k;
      const float* b2 = b1 + k;
      const float* b3 = b2 + k;
      float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
      for (int64_t l = 0; l < k; ++l) {
        const float av = a_row[l];
        s0 += av * b0[l];
        s1 += av * b1[l];
        s2 += av * b2[l];
        s3 += av * b3[l];
      }
      c_row[j] += s0;
      c_row[j + 1] += s1;
      c_row[j + 2] += s2;
      c_row[j + 3] += s3;
    }
    for (; j < n; ++j) {
      const float* b_row = B + j * k;
      float acc = 0.0f;
      for (int64_t l = 0; l < k; ++l) acc += a_row[l] * b_row[l];
      c_row[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const float* __restrict A, const float* __restrict B,
             float* __restrict C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    float* c_row = C + i * n;
    int64_t l = 0;
    for (; l + 4 <= k; l += 4) {
      const float a0 = A[l * m + i], a1 = A[(l + 1) * m + i];
      const float a2 = A[(l + 2) * m + i], a3 = A[(l + 3) * m + i];
      const float* b0 = B + l * n;
      const float* b1 = b0 + n;
      const float* b2 = b1 + n;
      const float* b3 = b2 + n;
      for (int64_t j = 0; j < n; ++j) {
        c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
    }
    for (; l < k; ++l) {
      const float av = A[l * m + i];
      const float* b_row = B + l * n;
      for (int64_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, bool requires_grad) {
  for (int64_t d : shape) {
    check(d > 0, ErrorKind::dimension,
          "tensor dimensions must be positive, got " + shape_str(shape));
  }
  node_ = new_node(std::move(shape));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data,
                         bool requires_grad) {
  check(shape_numel(shape) == static_cast<int64_t>(data.size()),
        ErrorKind::dimension,
        "data length " + std::to_string(data.size()) +
            " does not match shape " + shape_str(shape));
  check_finite_buffer(data, "Tensor::from_data");
  Tensor t(std::move(shape), requires_grad);
  *t.node_->values = std::move(data);
  return t;
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.node_->values->begin(), t.node_->values->end(), value);
  check_finite_buffer(*t.node_->values, "Tensor::full");
  return t;
}

Tensor Tensor::scalar(float value) { return full({1}, value); }

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (float& x : *t.node_->values) x = rng.normal() * stddev;
  return t;
}

const Shape& Tensor::shape() const {
  check(defined(), ErrorKind::contract, "use of an undefined tensor");
  return node_->shape;
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }

int64_t Tensor::dim(int i) const {
  const Shape& s = shape();
  const int nd = static_cast<int>(s.size());
  if (i < 0) i += nd;
  check(i >= 0 && i < nd, ErrorKind::dimension,
        "dim index out of range for shape " + shape_str(s));
  return s[i];
}

int64_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const float> Tensor::data() const {
  check(defined(), ErrorKind::contract, "use of an undefined tensor");
  return {node_->values->data(), node_->values->size()};
}

std::span<float> Tensor::mutable_data() {
  check(defined(), ErrorKind::contract, "use of an undefined tensor");
  return {node_->values->data(), node_->values->size()};
}

float Tensor::item() const {
  check(numel() == 1, ErrorKind::contract,
        "item() requires a scalar tensor, got shape " + shape_str(shape()));
  return (*node_->values)[0];
}

float Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  check(idx.size() == s.size(), ErrorKind::dimension,
        "index rank does not match tensor rank");
  int64_t flat = 0;
  int i = 0;
  for (int64_t v : idx) {
    check(v >= 0 && v < s[i], ErrorKind::dimension, "index out of range");
    flat = flat * s[i] + v;
    ++i;
  }
  return (*node_->values)[flat];
}

bool Tensor::requires_grad() const {
  return defined() && node_->requires_grad;
}

void Tensor::set_requires_grad(bool v) {
  check(defined(), ErrorKind::contract, "use of an undefined tensor");
  node_->requires_grad = v;
}

bool Tensor::has_grad() const { return defined() && node_->grad != nullptr; }

std::span<const float> Tensor::grad() const {
  check(has_grad(), ErrorKind::contract,
        "tensor has no gradient; run backward first or call zero_grad");
  return {node_->grad->data(), node_->grad->size()};
}

void Tensor::zero_grad() {
  check(defined(), ErrorKind::contract, "use of an undefined tensor");
  if (!node_->grad) {
    node_->grad = std::make_unique<std::vector<float>>(numel(), 0.0f);
  } else {
    std::fill(node_->grad->begin(), node_->grad->end(), 0.0f);
  }
}

Tensor Tensor::clone() const {
  return from_data(shape(), *node_->values, false);
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = shape();
  n->values = node_->values;
  return Access::wrap(std::move(n));
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() = default;
Tape::~Tape() = default;

int64_t Tape::size() const { return static_cast<int64_t>(entries_.size()); }

void Tape::clear() { entries_.clear(); }

void Tape::record(std::vector<std::shared_ptr<Node>> inputs,
                  std::shared_ptr<Node> output,
                  std::function<void(const float*, GradSink&)> backward_fn) {
  output->tape = this;
  output->tape_index = static_cast<int64_t>(entries_.size());
  entries_.push_back(
      {std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::run_backward(const Tensor& loss, GradSink& sink) {
  check(loss.defined() && loss.numel() == 1, ErrorKind::contract,
        "backward requires a scalar loss");
  Node* loss_node = loss.node();
  check(loss_node->tape == this && loss_node->tape_index >= 0,
        ErrorKind::contract, "loss was not produced by this tape");
  check(!entries_.empty(), ErrorKind::contract, "tape is empty");

  sink.grad_for(loss_node)[0] += 1.0f;

  // Entries are recorded in topological order, so one reverse sweep visits
  // each node exactly once; entries whose output never received a gradient
  // are outside the loss's ancestry and are skipped.
  for (int64_t idx = loss_node->tape_index; idx >= 0; --idx) {
    detail::TapeEntry& e = entries_[static_cast<size_t>(idx)];
    const float* og = sink.find(e.output.get());
    if (!og) continue;
    e.backward_fn(og, sink);
  }
}

void Tape::backward(const Tensor& loss) {
  detail::NodeGradSink sink;
  run_backward(loss, sink);
}

Tape::GradMap Tape::backward_collect(const Tensor& loss) {
  GradMap map;
  detail::MapGradSink sink(map);
  run_backward(loss, sink);
  return map;
}

TapeScope::TapeScope(Tape* tape) : previous_(g_ambient_tape) {
  g_ambient_tape = tape;
}

TapeScope::~TapeScope() { g_ambient_tape = previous_; }

Tape* ambient_tape() { return g_ambient_tape; }

void backward(const Tensor& loss) {
  check(loss.defined(), ErrorKind::contract, "use of an undefined tensor");
  check(loss.node()->tape != nullptr, ErrorKind::contract,
        "loss has no recorded history; run it under a TapeScope");
  loss.node()->tape->backward(loss);
}

// ---- Op helpers ------------------------------------------------------------

namespace {

Tensor op_output(Shape shape) { return Tensor(std::move(shape)); }

void finalize(const Tensor& out, const char* op_name) {
  check_finite_buffer(*Access::sp(out)->values, op_name);
}

// Validates the add/mul broadcast rule: equal shapes, or b a trailing suffix
// of a. Returns the number of leading replications (1 when shapes match).
int64_t broadcast_lead(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return 1;
  const bool suffix =
      sb.size() < sa.size() &&
      std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  check(suffix, ErrorKind::dimension,
        std::string(op) + ": shapes " + shape_str(sa) + " and " +
            shape_str(sb) + " do not match");
  return a.numel() / b.numel();
}

}  // namespace

// ---- Elementwise ops -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const int64_t lead = broadcast_lead(a, b, "add");
  const int64_t nb = b.numel();
  Tensor out = op_output(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = Access::sp(out)->values->data();
  for (int64_t r = 0; r < lead; ++r) {
    for (int64_t i = 0; i < nb; ++i) po[r * nb + i] = pa[r * nb + i] + pb[i];
  }
  finalize(out, "add");
  maybe_record({&a, &b}, out,
               [an = Access::sp(a), bn = Access::sp(b), lead,
                nb](const float* og, GradSink& sink) {
                 if (an->requires_grad) {
                   float* ga = sink.grad_for(an.get());
                   for (int64_t i = 0; i < lead * nb; ++i) ga[i] += og[i];
                 }
                 if (bn->requires_grad) {
                   float* gb = sink.grad_for(bn.get());
                   for (int64_t r = 0; r < lead; ++r)
                     for (int64_t i = 0; i < nb; ++i) gb[i] += og[r * nb + i];
                 }
               });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), ErrorKind::dimension,
        "sub: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
            " do not match");
  Tensor out = op_output(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = Access::sp(out)->values->data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  finalize(out, "sub");
  maybe_record({&a, &b}, out,
               [an = Access::sp(a), bn = Access::sp(b),
                n](const float* og, GradSink& sink) {
                 if (an->requires_grad) {
                   float* ga = sink.grad_for(an.get());
                   for (int64_t i = 0; i < n; ++i) ga[i] += og[i];
                 }
                 if (bn->requires_grad) {
                   float* gb = sink.grad_for(bn.get());
                   for (int64_t i = 0; i < n; ++i) gb[i] -= og[i];
                 }
               });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const int64_t lead = broadcast_lead(a, b, "mul");
  const int64_t nb = b.numel();
  Tensor out = op_output(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = Access::sp(out)->values->data();
  for (int64_t r = 0; r < lead; ++r) {
    for (int64_t i = 0; i < nb; ++i) po[r * nb + i] = pa[r * nb + i] * pb[i];
  }
  finalize(out, "mul");
  maybe_record(
      {&a, &b}, out,
      [an = Access::sp(a), bn = Access::sp(b), lead, nb](const float* og,
                                                         GradSink& sink) {
        const float* pa = an->values->data();
        const float* pb = bn->values->data();
        if (an->requires_grad) {
          float* ga = sink.grad_for(an.get());
          for (int64_t r = 0; r < lead; ++r)
            for (int64_t i = 0; i < nb; ++i)
              ga[r * nb + i] += og[r * nb + i] * pb[i];
        }
        if (bn->requires_grad) {
          float* gb = sink.grad_for(bn.get());
          for (int64_t r = 0; r < lead; ++r)
            for (int64_t i = 0; i < nb; ++i)
              gb[i] += og[r * nb + i] * pa[r * nb + i];
        }
      });
  return out;
}

Tensor scale(const Tensor& a, float s) {
  check(std::isfinite(s), ErrorKind::numeric, "scale factor must be finite");
  Tensor out = op_output(a.shape());
  const float* pa = a.data().data();
  float* po = Access::sp(out)->values->data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  finalize(out, "scale");
  maybe_record({&a}, out,
               [an = Access::sp(a), s, n](const float* og, GradSink& sink) {
                 if (!an->requires_grad) return;
                 float* ga = sink.grad_for(an.get());
                 for (int64_t i = 0; i < n; ++i) ga[i] += og[i] * s;
               });
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = op_output(x.shape());
  const float* px = x.data().data();
  float* po = Access::sp(out)->values->data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const float sig = 1.0f / (1.0f + std::exp(-px[i]));
    po[i] = px[i] * sig;
  }
  finalize(out, "silu");
  maybe_record({&x}, out,
               [xn = Access::sp(x), n](const float* og, GradSink& sink) {
                 if (!xn->requires_grad) return;
                 float* gx = sink.grad_for(xn.get());
                 const float* px = xn->values->data();
                 for (int64_t i = 0; i < n; ++i) {
                   const float sig = 1.0f / (1.0f + std::exp(-px[i]));
                   gx[i] += og[i] * sig * (1.0f + px[i] * (1.0f - sig));
                 }
               });
  return out;
}

// ---- Reductions ------------------------------------------------------------

namespace {

Tensor reduce_full(const Tensor& x, bool divide, const char* name) {
  check(x.numel() >= 1, ErrorKind::dimension,
        std::string(name) + ": empty tensor");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const int64_t n = x.numel();
  if (divide) acc /= static_cast<double>(n);
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  finalize(out, name);
  const float w = divide ? 1.0f / static_cast<float>(n) : 1.0f;
  maybe_record({&x}, out,
               [xn = Access::sp(x), n, w](const float* og, GradSink& sink) {
                 if (!xn->requires_grad) return;
                 float* gx = sink.grad_for(xn.get());
                 const float g = og[0] * w;
                 for (int64_t i = 0; i < n; ++i) gx[i] += g;
               });
  return out;
}

}  // namespace

Tensor mean(const Tensor& x) { return reduce_full(x, true, "mean"); }
Tensor sum(const Tensor& x) { return reduce_full(x, false, "sum"); }

Tensor mse(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), ErrorKind::dimension,
        "mse: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
            " do not match");
  const int64_t n = a.numel();
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  finalize(out, "mse");
  maybe_record({&a, &b}, out,
               [an = Access::sp(a), bn = Access::sp(b),
                n](const float* og, GradSink& sink) {
                 const float* pa = an->values->data();
                 const float* pb = bn->values->data();
                 const float c = 2.0f * og[0] / static_cast<float>(n);
                 if (an->requires_grad) {
                   float* ga = sink.grad_for(an.get());
                   for (int64_t i = 0; i < n; ++i)
                     ga[i] += c * (pa[i] - pb[i]);
                 }
                 if (bn->requires_grad) {
                   float* gb = sink.grad_for(bn.get());
                   for (int64_t i = 0; i < n; ++i)
                     gb[i] -= c * (pa[i] - pb[i]);
                 }
               });
  return out;
}

// ---- Softmax / LayerNorm ---------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  check(x.ndim() >= 1 && x.dim(-1) >= 1, ErrorKind::dimension,
        "softmax_lastdim: empty tensor");
  const int64_t cols = x.dim(-1);
  const int64_t rows = x.numel() / cols;
  Tensor out = op_output(x.shape());
  const float* px = x.data().data();
  float* po = Access::sp(out)->values->data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = px + r * cols;
    float* yr = po + r * cols;
    float mx = xr[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      denom += yr[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int64_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
  finalize(out, "softmax_lastdim");
  maybe_record({&x}, out,
               [xn = Access::sp(x), on = Access::sp(out), rows,
                cols](const float* og, GradSink& sink) {
                 if (!xn->requires_grad) return;
                 float* gx = sink.grad_for(xn.get());
                 const float* y = on->values->data();
                 for (int64_t r = 0; r < rows; ++r) {
                   const float* yr = y + r * cols;
                   const float* gr = og + r * cols;
                   double dot = 0.0;
                   for (int64_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                   const float d = static_cast<float>(dot);
                   for (int64_t j = 0; j < cols; ++j)
                     gx[r * cols + j] += yr[j] * (gr[j] - d);
                 }
               });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps) {
  const int64_t cols = x.dim(-1);
  check(gain.shape() == Shape{cols} && bias.shape() == Shape{cols},
        ErrorKind::dimension,
        "layer_norm: gain/bias must have shape [" + std::to_string(cols) + "]");
  const int64_t rows = x.numel() / cols;
  Tensor out = op_output(x.shape());
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  auto inv_std = std::make_shared<std::vector<float>>(rows);
  const float* px = x.data().data();
  const float* pg = gain.data().data();
  const float* pb = bias.data().data();
  float* po = Access::sp(out)->values->data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = px + r * cols;
    double mu = 0.0;
    for (int64_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= cols;
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= cols;
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*inv_std)[r] = is;
    for (int64_t j = 0; j < cols; ++j) {
      const float xh = (xr[j] - static_cast<float>(mu)) * is;
      (*xhat)[r * cols + j] = xh;
      po[r * cols + j] = pg[j] * xh + pb[j];
    }
  }
  finalize(out, "layer_norm");
  maybe_record(
      {&x, &gain, &bias}, out,
      [xn = Access::sp(x), gn = Access::sp(gain), bn = Access::sp(bias), xhat,
       inv_std, rows, cols](const float* og, GradSink& sink) {
        const float* pg = gn->values->data();
        if (gn->requires_grad) {
          float* gg = sink.grad_for(gn.get());
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < cols; ++j)
              gg[j] += og[r * cols + j] * (*xhat)[r * cols + j];
        }
        if (bn->requires_grad) {
          float* gb = sink.grad_for(bn.get());
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < cols; ++j) gb[j] += og[r * cols + j];
        }
        if (xn->requires_grad) {
          float* gx = sink.grad_for(xn.get());
          for (int64_t r = 0; r < rows; ++r) {
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int64_t j = 0; j < cols; ++j) {
              const double dxh =
                  static_cast<double>(og[r * cols + j]) * pg[j];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * (*xhat)[r * cols + j];
            }
            const float is = (*inv_std)[r];
            for (int64_t j = 0; j < cols; ++j) {
              const double dxh =
                  static_cast<double>(og[r * cols + j]) * pg[j];
              gx[r * cols + j] += static_cast<float>(
                  is * (dxh - sum_dxhat / cols -
                        (*xhat)[r * cols + j] * sum_dxhat_xhat / cols));
            }
          }
        }
      });
  return out;
}

// ---- Embedding -------------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  check(table.ndim() == 2, ErrorKind::dimension,
        "embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
  const int64_t vocab = table.dim(0);
  const int64_t dim = table.dim(1);
  check(!ids.empty(), ErrorKind::dimension, "embedding_lookup: empty ids");
  for (int id : ids) {
    check(id >= 0 && id < vocab, ErrorKind::contract,
          "embedding_lookup: id " + std::to_string(id) +
              " outside table of size " + std::to_string(vocab));
  }
  Tensor out = op_output({static_cast<int64_t>(ids.size()), dim});
  const float* pt = table.data().data();
  float* po = Access::sp(out)->values->data();
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(pt + static_cast<int64_t>(ids[i]) * dim, dim, po + i * dim);
  }
  finalize(out, "embedding_lookup");
  maybe_record({&table}, out,
               [tn = Access::sp(table), ids, dim](const float* og,
                                                  GradSink& sink) {
                 if (!tn->requires_grad) return;
                 float* gt = sink.grad_for(tn.get());
                 for (size_t i = 0; i < ids.size(); ++i) {
                   float* row = gt + static_cast<int64_t>(ids[i]) * dim;
                   const float* g = og + i * dim;
                   for (int64_t j = 0; j < dim; ++j) row[j] += g[j];
                 }
               });
  return out;
}

// ---- Matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const auto bad = [&] {
    fail(ErrorKind::dimension,
         "matmul: incompatible shapes " + shape_str(sa) + " and " +
             shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) bad();
  const int64_t m = sa[sa.size() - 2];
  const int64_t k = sa[sa.size() - 1];
  const int64_t kb = sb[sb.size() - 2];
  const int64_t n = sb[sb.size() - 1];
  if (k != kb) bad();
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  Shape batch;
  if (batch_a == batch_b) {
    batch = batch_a;
  } else if (batch_a.empty()) {
    batch = batch_b;
  } else if (batch_b.empty()) {
    batch = batch_a;
  } else {
    bad();
  }
  const int64_t nbatch = shape_numel(batch);
  const bool a_batched = !batch_a.empty();
  const bool b_batched = !batch_b.empty();

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = op_output(out_shape);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = Access::sp(out)->values->data();
  for (int64_t bi = 0; bi < nbatch; ++bi) {
    gemm_nn(pa + (a_batched ? bi * m * k : 0), pb + (b_batched ? bi * k * n : 0),
            po + bi * m * n, m, k, n);
  }
  finalize(out, "matmul");
  maybe_record(
      {&a, &b}, out,
      [an = Access::sp(a), bn = Access::sp(b), m, k, n, nbatch, a_batched,
       b_batched](const float* og, GradSink& sink) {
        const float* pa = an->values->data();
        const float* pb = bn->values->data();
        if (an->requires_grad) {
          float* ga = sink.grad_for(an.get());
          for (int64_t bi = 0; bi < nbatch; ++bi) {
            gemm_nt(og + bi * m * n, pb + (b_batched ? bi * k * n : 0),
                    ga + (a_batched ? bi * m * k : 0), m, n, k);
          }
        }
        if (bn->requires_grad) {
          float* gb = sink.grad_for(bn.get());
          for (int64_t bi = 0; bi < nbatch; ++bi) {
            gemm_tn(pa + (a_batched ? bi * m * k : 0), og + bi * m * n,
                    gb + (b_batched ? bi * k * n : 0), k, m, n);
          }
        }
      });
  return out;
}

// ---- Shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  check(shape_numel(new_shape) == x.numel(), ErrorKind::dimension,
        "reshape: cannot view " + shape_str(x.shape()) + " as " +
            shape_str(new_shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(new_shape);
  n->values = Access::sp(x)->values;  // same buffer, different view
  Tensor out = Access::wrap(std::move(n));
  maybe_record({&x}, out,
               [xn = Access::sp(x)](const float* og, GradSink& sink) {
                 if (!xn->requires_grad) return;
                 float* gx = sink.grad_for(xn.get());
                 const int64_t n = shape_numel(xn->shape);
                 for (int64_t i = 0; i < n; ++i) gx[i] += og[i];
               });
  return out;
}

namespace {

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// dst[idx_perm] = src[idx]; returns dst in the permuted layout.
void permute_copy(const float* src, float* dst, const Shape& src_shape,
                  const std::vector<int>& dims, bool accumulate) {
  const int nd = static_cast<int>(src_shape.size());
  Shape dst_shape(nd);
  for (int i = 0; i < nd; ++i) dst_shape[i] = src_shape[dims[i]];
  const auto dst_strides = row_major_strides(dst_shape);
  const int64_t n = shape_numel(src_shape);
  std::vector<int64_t> src_idx(nd, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t dst_flat = 0;
    for (int i = 0; i < nd; ++i) dst_flat += src_idx[dims[i]] * dst_strides[i];
    if (accumulate) {
      dst[flat] += src[dst_flat];
    } else {
      dst[dst_flat] = src[flat];
    }
    for (int i = nd - 1; i >= 0; --i) {
      if (++src_idx[static_cast<size_t>(i)] < src_shape[static_cast<size_t>(i)])
        break;
      src_idx[static_cast<size_t>(i)] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  const int nd = x.ndim();
  check(static_cast<int>(dims.size()) == nd, ErrorKind::dimension,
        "permute: dims rank mismatch for shape " + shape_str(x.shape()));
  std::vector<bool> seen(dims.size(), false);
  for (int d : dims) {
    check(d >= 0 && d < nd && !seen[static_cast<size_t>(d)],
          ErrorKind::dimension, "permute: dims must be a permutation");
    seen[static_cast<size_t>(d)] = true;
  }
  Shape out_shape(dims.size());
  for (size_t i = 0; i < dims.size(); ++i)
    out_shape[i] = x.dim(dims[static_cast<size_t>(i)]);
  Tensor out = op_output(out_shape);
  permute_copy(x.data().data(), Access::sp(out)->values->data(), x.shape(),
               dims, false);
  maybe_record({&x}, out,
               [xn = Access::sp(x), dims](const float* og, GradSink& sink) {
                 if (!xn->requires_grad) return;
                 float* gx = sink.grad_for(xn.get());
                 permute_copy(og, gx, xn->shape, dims, true);
               });
  return out;
}

Tensor avg_pool2x(const Tensor& x, int h, int w) {
  check(x.ndim() == 2 && x.dim(0) == static_cast<int64_t>(h) * w,
        ErrorKind::dimension,
        "avg_pool2x: expected [" + std::to_string(h * w) + ", d], got " +
            shape_str(x.shape()));
  check(h % 2 == 0 && w % 2 == 0, ErrorKind::geometry,
        "avg_pool2x: grid must be even, got " + std::to_string(h) + "x" +
            std::to_string(w));
  const int64_t d = x.dim(1);
  const int h2 = h / 2, w2 = w / 2;
  Tensor out = op_output({static_cast<int64_t>(h2) * w2, d});
  const float* px = x.data().data();
  float* po = Access::sp(out)->values->data();
  for (int r = 0; r < h2; ++r) {
    for (int c = 0; c < w2; ++c) {
      float* o = po + (static_cast<int64_t>(r) * w2 + c) * d;
      for (int dr = 0; dr < 2; ++dr) {
        const float* row =
            px + (static_cast<int64_t>(2 * r + dr) * w + 2 * c) * d;
        for (int64_t j = 0; j < d; ++j) o[j] += 0.25f * (row[j] + row[d + j]);
      }
    }
  }
  finalize(out, "avg_pool2x");
  maybe_record({&x}, out,
               [xn = Access::sp(x), h2, w2, w, d](const float* og,
                                                  GradSink& sink) {
                 if (!xn->requires_grad) return;
                 float* gx = sink.grad_for(xn.get());
                 for (int r = 0; r < h2; ++r) {
                   for (int c = 0; c < w2; ++c) {
                     const float* g = og + (static_cast<int64_t>(r) * w2 + c) * d;
                     for (int dr = 0; dr < 2; ++dr) {
                       float* row =
                           gx + (static_cast<int64_t>(2 * r + dr) * w + 2 * c) * d;
                       for (int64_t j = 0; j < d; ++j) {
                         row[j] += 0.25f * g[j];
                         row[d + j] += 0.25f * g[j];
                       }
                     }
                   }
                 }
               });
  return out;
}

Tensor upsample2x(const Tensor& x, int h, int w) {
  check(x.ndim() == 2 && x.dim(0) == static_cast<int64_t>(h) * w,
        ErrorKind::dimension,
        "upsample2x: expected [" + std::to_string(h * w) + ", d], got " +
            shape_str(x.shape()));
  const int64_t d = x.dim(1);
  const int h2 = 2 * h, w2 = 2 * w;
  Tensor out = op_output({static_cast<int64_t>(h2) * w2, d});
  const float* px = x.data().data();
  float* po = Access::sp(out)->values->data();
  for (int r = 0; r < h2; ++r) {
    for (int c = 0; c < w2; ++c) {
      const float* src = px + (static_cast<int64_t>(r / 2) * w + c / 2) * d;
      std::copy_n(src, d, po + (static_cast<int64_t>(r) * w2 + c) * d);
    }
  }
  finalize(out, "upsample2x");
  maybe_record({&x}, out,
               [xn = Access::sp(x), h2, w2, w, d](const float* og,
                                                  GradSink& sink) {
                 if (!xn->requires_grad) return;
                 float* gx = sink.grad_for(xn.get());
                 for (int r = 0; r < h2; ++r) {
                   for (int c = 0; c < w2; ++c) {
                     float* dst = gx + (static_cast<int64_t>(r / 2) * w + c / 2) * d;
                     const float* g = og + (static_cast<int64_t>(r) * w2 + c) * d;
                     for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                   }
                 }
               });
  return out;
}

}  // namespace sgdm
