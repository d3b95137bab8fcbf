// Dense 64-bit tensor with tape-based reverse-mode differentiation.
// Shapes are limited to what the models here need: vectors and matrices,
// plus the 3-D kernel layout used by temporal convolution.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcr {

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tensor;

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;     // lazily sized; empty until touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Value-semantic handle onto a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> values,
         bool requires_grad = false);

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  size_t size() const { return node_->values.size(); }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& values() { return node_->values; }
  double operator[](size_t i) const { return node_->values[i]; }
  double at(int r, int c) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Runs reverse-mode accumulation from this scalar.
  void backward();

  // Same values, detached from the tape (constant).
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

  friend Tensor make_op(std::vector<int> shape, std::vector<double> values,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn);

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- Elementwise and linear-algebra primitives -----------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
// log(max(x, eps)); eps guards the distillation/entropy terms.
Tensor log_clamped(const Tensor& a, double eps = 1e-12);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x (m,k) * W (k,n) + row-broadcast bias (n,). x may also be a vector (k,).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
// x (m,n) + b (n,) broadcast over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean over axis 0 of a matrix: (m,n) -> (n,).
Tensor mean_rows(const Tensor& a);
// Stack 1-D tensors of equal length into a matrix, one per row.
Tensor stack_rows(const std::vector<Tensor>& rows);
Tensor concat(const Tensor& a, const Tensor& b);      // 1-D concatenation
Tensor concat_rows(const Tensor& a, const Tensor& b); // (m,n)+(p,n) -> (m+p,n)
Tensor row(const Tensor& a, int r);
Tensor column(const Tensor& a, int c);
Tensor pick(const Tensor& a, int i);  // scalar element of a 1-D tensor

// Row-wise layer normalization with learned gain/bias of width n.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// --- Probabilistic primitives ----------------------------------------------

// Numerically stabilized softmax along `axis` of a 1-D or 2-D tensor.
Tensor softmax(const Tensor& x, int axis);
// Sum of p*log(p/q) over all entries; q clamped at eps before the log.
Tensor kl_divergence(const Tensor& p, const Tensor& q, double eps = 1e-12);
// Mean negative log-probability; logits (B,C) or (C,), labels per row.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor cross_entropy(const Tensor& logits, int label);
// -sum p*log(p) with the standard clamp; p a distribution.
Tensor entropy(const Tensor& p, double eps = 1e-12);

// --- Sequence primitives ---------------------------------------------------

// x (L_in, d_in), kernel (k, d_in, d_out) flattened row-major.
Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, int stride,
                       int padding);
// softmax(Q K^T / sqrt(d_k)) V with Q (Lq,dk), K (Lk,dk), V (Lk,dv).
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// --- Verification ----------------------------------------------------------

// Compares reverse-mode gradients of f against central differences over
// every element of every tensor in `params`; returns the max of
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
double gradient_check(const std::function<Tensor()>& f,
                      std::vector<Tensor> params, double h = 1e-4);

// --- Optimization ----------------------------------------------------------

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void zero_grad();
  void step();
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
};

}  // namespace dcr
