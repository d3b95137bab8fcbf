#include "dcr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dcr {

namespace {

size_t shape_size(const std::vector<int>& shape) {
  size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ArgumentError("tensor extents must be positive");
    n *= static_cast<size_t>(e);
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ArgumentError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, std::vector<double> values,
               bool requires_grad) {
  if (shape_size(shape) != values.size())
    throw ArgumentError("tensor: shape does not match value count");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

double Tensor::at(int r, int c) const {
  if (ndim() != 2) throw ArgumentError("at(r,c) requires a matrix");
  return node_->values[static_cast<size_t>(r) * dim(1) + c];
}

double Tensor::item() const {
  if (size() != 1) throw ArgumentError("item() requires a single-element tensor");
  return node_->values[0];
}

const std::vector<double>& Tensor::grad() const {
  return const_cast<detail::Node*>(node_.get())->ensure_grad();
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->values.size(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->values, false);
}

Tensor make_op(std::vector<int> shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward_fn) {
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  Tensor out(std::move(shape), std::move(values), needs_grad);
  if (needs_grad) {
    auto node = out.node();
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return out;
}

void Tensor::backward() {
  if (size() != 1) throw ArgumentError("backward() requires a scalar root");
  // Iterative DFS topological order over grad-requiring nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (node_->requires_grad) stack.push_back({node_.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent == 0 && visited.count(f.node)) {
      stack.pop_back();
      continue;
    }
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) stack.push_back({p, 0});
    } else {
      // a node can sit on the stack twice when several consumers reach it;
      // only the first completed frame may emit it
      if (visited.insert(f.node).second) order.push_back(f.node);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    for (int side = 0; side < 2; ++side) {
      auto& p = n.parents[side];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    auto& av = n.parents[0]->values;
    auto& bv = n.parents[1]->values;
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return make_op(a.shape(), std::move(out), {a}, [s](detail::Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& av = n.parents[0]->values;
    auto& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) g[i] += n.grad[i];
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& av = n.parents[0]->values;
    auto& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * av[i] * n.grad[i];
  });
}

Tensor log_clamped(const Tensor& a, double eps) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(a[i], eps));
  return make_op(a.shape(), std::move(out), {a}, [eps](detail::Node& n) {
    auto& av = n.parents[0]->values;
    auto& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] / std::max(av[i], eps);
  });
}

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ArgumentError("matmul: dimension mismatch");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i) * k + p];
      const double* brow = &bv[static_cast<size_t>(p) * n];
      double* orow = &out[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& nd) {
    const auto& g = nd.grad;
    const auto& av = nd.parents[0]->values;
    const auto& bv = nd.parents[1]->values;
    if (nd.parents[0]->requires_grad) {
      auto& ga = nd.parents[0]->ensure_grad();
      // dA = dOut * B^T
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double gij = g[static_cast<size_t>(i) * n + j];
          if (gij == 0.0) continue;
          for (int p = 0; p < k; ++p)
            ga[static_cast<size_t>(i) * k + p] +=
                gij * bv[static_cast<size_t>(p) * n + j];
        }
    }
    if (nd.parents[1]->requires_grad) {
      auto& gb = nd.parents[1]->ensure_grad();
      // dB = A^T * dOut
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const double aip = av[static_cast<size_t>(i) * k + p];
          if (aip == 0.0) continue;
          const double* grow = &g[static_cast<size_t>(i) * n];
          double* gbrow = &gb[static_cast<size_t>(p) * n];
          for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw ArgumentError("transpose: matrix required");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a.values()[static_cast<size_t>(i) * n + j];
  return make_op({n, m}, std::move(out), {a}, [m, n](detail::Node& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        g[static_cast<size_t>(i) * n + j] += nd.grad[static_cast<size_t>(j) * m + i];
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool vec = x.ndim() == 1;
  Tensor x2 = vec ? Tensor({1, x.dim(0)}, x.values(), false) : x;
  if (vec) {
    // Preserve grad flow for vector input by reshaping through make_op.
    x2 = make_op({1, x.dim(0)}, x.values(), {x}, [](detail::Node& n) {
      auto& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
  }
  if (b.ndim() != 1 || b.dim(0) != w.dim(1))
    throw ArgumentError("affine: bias width mismatch");
  Tensor mm = matmul(x2, w);
  const int m = mm.dim(0), n = mm.dim(1);
  std::vector<double> out(mm.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = mm.values()[static_cast<size_t>(i) * n + j] + b[static_cast<size_t>(j)];
  Tensor res = make_op({m, n}, std::move(out), {mm, b}, [m, n](detail::Node& nd) {
    if (nd.parents[0]->requires_grad) {
      auto& g = nd.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
    }
    if (nd.parents[1]->requires_grad) {
      auto& gb = nd.parents[1]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gb[static_cast<size_t>(j)] += nd.grad[static_cast<size_t>(i) * n + j];
    }
  });
  if (!vec) return res;
  return make_op({n}, res.values(), {res}, [](detail::Node& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
    throw ArgumentError("add_rowvec: width mismatch");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = x.values()[static_cast<size_t>(i) * n + j] + b[static_cast<size_t>(j)];
  return make_op({m, n}, std::move(out), {x, b}, [m, n](detail::Node& nd) {
    if (nd.parents[0]->requires_grad) {
      auto& g = nd.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
    }
    if (nd.parents[1]->requires_grad) {
      auto& gb = nd.parents[1]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gb[static_cast<size_t>(j)] += nd.grad[static_cast<size_t>(i) * n + j];
    }
  });
}

// --- reductions and reshaping ----------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i];
  return make_op({1}, {s}, {a}, [](detail::Node& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean_rows(const Tensor& a) {
  if (a.ndim() != 2) throw ArgumentError("mean_rows: matrix required");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j)] += a.values()[static_cast<size_t>(i) * n + j];
  for (auto& v : out) v /= m;
  return make_op({n}, std::move(out), {a}, [m, n](detail::Node& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    const double inv = 1.0 / m;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        g[static_cast<size_t>(i) * n + j] += nd.grad[static_cast<size_t>(j)] * inv;
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ArgumentError("stack_rows: empty input");
  const int n = rows[0].dim(0);
  const int m = static_cast<int>(rows.size());
  std::vector<double> out;
  out.reserve(static_cast<size_t>(m) * n);
  for (const auto& r : rows) {
    if (r.ndim() != 1 || r.dim(0) != n)
      throw ArgumentError("stack_rows: rows must be 1-D of equal length");
    out.insert(out.end(), r.values().begin(), r.values().end());
  }
  return make_op({m, n}, std::move(out), rows, [n](detail::Node& nd) {
    for (size_t r = 0; r < nd.parents.size(); ++r) {
      auto& p = nd.parents[r];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (int j = 0; j < n; ++j) g[static_cast<size_t>(j)] += nd.grad[r * n + j];
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 1 || b.ndim() != 1)
    throw ArgumentError("concat: 1-D tensors required");
  std::vector<double> out(a.values());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const size_t na = a.size();
  const int total = static_cast<int>(out.size());
  return make_op({total}, std::move(out), {a, b},
                 [na](detail::Node& n) {
                   if (n.parents[0]->requires_grad) {
                     auto& g = n.parents[0]->ensure_grad();
                     for (size_t i = 0; i < na; ++i) g[i] += n.grad[i];
                   }
                   if (n.parents[1]->requires_grad) {
                     auto& g = n.parents[1]->ensure_grad();
                     for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[na + i];
                   }
                 });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw ArgumentError("concat_rows: column counts must agree");
  std::vector<double> out(a.values());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const size_t na = a.size();
  return make_op({a.dim(0) + b.dim(0), a.dim(1)}, std::move(out), {a, b},
                 [na](detail::Node& n) {
                   if (n.parents[0]->requires_grad) {
                     auto& g = n.parents[0]->ensure_grad();
                     for (size_t i = 0; i < na; ++i) g[i] += n.grad[i];
                   }
                   if (n.parents[1]->requires_grad) {
                     auto& g = n.parents[1]->ensure_grad();
                     for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[na + i];
                   }
                 });
}

Tensor row(const Tensor& a, int r) {
  if (a.ndim() != 2 || r < 0 || r >= a.dim(0))
    throw ArgumentError("row: index out of range");
  const int n = a.dim(1);
  std::vector<double> out(a.values().begin() + static_cast<size_t>(r) * n,
                          a.values().begin() + static_cast<size_t>(r + 1) * n);
  return make_op({n}, std::move(out), {a}, [r, n](detail::Node& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (int j = 0; j < n; ++j) g[static_cast<size_t>(r) * n + j] += nd.grad[static_cast<size_t>(j)];
  });
}

Tensor column(const Tensor& a, int c) {
  if (a.ndim() != 2 || c < 0 || c >= a.dim(1))
    throw ArgumentError("column: index out of range");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) out[static_cast<size_t>(i)] = a.values()[static_cast<size_t>(i) * n + c];
  return make_op({m}, std::move(out), {a}, [c, n](detail::Node& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) g[i * n + c] += nd.grad[i];
  });
}

Tensor pick(const Tensor& a, int i) {
  if (a.ndim() != 1 || i < 0 || i >= a.dim(0))
    throw ArgumentError("pick: index out of range");
  return make_op({1}, {a[static_cast<size_t>(i)]}, {a}, [i](detail::Node& n) {
    n.parents[0]->ensure_grad()[static_cast<size_t>(i)] += n.grad[0];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.ndim() != 2 || gain.dim(0) != x.dim(1) || bias.dim(0) != x.dim(1))
    throw ArgumentError("layer_norm: width mismatch");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.size());
  std::vector<double> mu(static_cast<size_t>(m)), inv_sd(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* xr = &x.values()[static_cast<size_t>(i) * n];
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += xr[j];
    const double u = s / n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xr[j] - u) * (xr[j] - u);
    var /= n;
    const double isd = 1.0 / std::sqrt(var + eps);
    mu[static_cast<size_t>(i)] = u;
    inv_sd[static_cast<size_t>(i)] = isd;
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = (xr[j] - u) * isd * gain[static_cast<size_t>(j)] + bias[static_cast<size_t>(j)];
  }
  return make_op({m, n}, std::move(out), {x, gain, bias},
                 [m, n, mu, inv_sd](detail::Node& nd) {
    const auto& xv = nd.parents[0]->values;
    const auto& gv = nd.parents[1]->values;
    for (int i = 0; i < m; ++i) {
      const double* xr = &xv[static_cast<size_t>(i) * n];
      const double* gr = &nd.grad[static_cast<size_t>(i) * n];
      const double u = mu[static_cast<size_t>(i)], isd = inv_sd[static_cast<size_t>(i)];
      if (nd.parents[1]->requires_grad || nd.parents[2]->requires_grad) {
        auto& gg = nd.parents[1]->ensure_grad();
        auto& gb = nd.parents[2]->ensure_grad();
        for (int j = 0; j < n; ++j) {
          gg[static_cast<size_t>(j)] += gr[j] * (xr[j] - u) * isd;
          gb[static_cast<size_t>(j)] += gr[j];
        }
      }
      if (nd.parents[0]->requires_grad) {
        auto& gx = nd.parents[0]->ensure_grad();
        // dL/dxhat, then the standard layer-norm backward.
        double sum_dh = 0.0, sum_dh_xhat = 0.0;
        std::vector<double> dh(static_cast<size_t>(n));
        for (int j = 0; j < n; ++j) {
          dh[static_cast<size_t>(j)] = gr[j] * gv[static_cast<size_t>(j)];
          const double xhat = (xr[j] - u) * isd;
          sum_dh += dh[static_cast<size_t>(j)];
          sum_dh_xhat += dh[static_cast<size_t>(j)] * xhat;
        }
        for (int j = 0; j < n; ++j) {
          const double xhat = (xr[j] - u) * isd;
          gx[static_cast<size_t>(i) * n + j] +=
              isd * (dh[static_cast<size_t>(j)] - sum_dh / n - xhat * sum_dh_xhat / n);
        }
      }
    }
  });
}

// --- probabilistic ----------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  if (x.ndim() == 1) {
    if (axis != 0) throw ArgumentError("softmax: invalid axis for 1-D input");
    const int n = x.dim(0);
    std::vector<double> out(static_cast<size_t>(n));
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[static_cast<size_t>(i)]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      out[static_cast<size_t>(i)] = std::exp(x[static_cast<size_t>(i)] - mx);
      z += out[static_cast<size_t>(i)];
    }
    for (auto& v : out) v /= z;
    std::vector<double> probs = out;
    return make_op({n}, std::move(out), {x}, [probs, n](detail::Node& nd) {
      auto& g = nd.parents[0]->ensure_grad();
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += nd.grad[static_cast<size_t>(i)] * probs[static_cast<size_t>(i)];
      for (int i = 0; i < n; ++i)
        g[static_cast<size_t>(i)] += probs[static_cast<size_t>(i)] * (nd.grad[static_cast<size_t>(i)] - dot);
    });
  }
  if (x.ndim() != 2 || (axis != 0 && axis != 1))
    throw ArgumentError("softmax: invalid axis");
  Tensor in = axis == 1 ? x : transpose(x);
  const int m = in.dim(0), n = in.dim(1);
  std::vector<double> out(in.size());
  for (int i = 0; i < m; ++i) {
    const double* xr = &in.values()[static_cast<size_t>(i) * n];
    double* orow = &out[static_cast<size_t>(i) * n];
    double mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= z;
  }
  std::vector<double> probs = out;
  Tensor res = make_op({m, n}, std::move(out), {in}, [probs, m, n](detail::Node& nd) {
    auto& g = nd.parents[0]->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const double* pr = &probs[static_cast<size_t>(i) * n];
      const double* gr = &nd.grad[static_cast<size_t>(i) * n];
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += gr[j] * pr[j];
      for (int j = 0; j < n; ++j)
        g[static_cast<size_t>(i) * n + j] += pr[j] * (gr[j] - dot);
    }
  });
  return axis == 1 ? res : transpose(res);
}

Tensor kl_divergence(const Tensor& p, const Tensor& q, double eps) {
  check_same_shape(p, q, "kl_divergence");
  // sum p*(log p - log q); 0*log(0/q) := 0 via the p > 0 guard in the
  // constant term and the clamp in log_clamped for the q side.
  std::vector<double> plogp(p.size(), 0.0);
  for (size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) plogp[i] = p[i] * std::log(p[i]);
  Tensor cross = sum(mul(p.detach(), log_clamped(q, eps)));
  double ent = 0.0;
  for (double v : plogp) ent += v;
  return sub(Tensor::scalar(ent), cross);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2 || static_cast<int>(labels.size()) != logits.dim(0))
    throw ArgumentError("cross_entropy: batch size mismatch");
  const int c = logits.dim(1);
  for (int y : labels)
    if (y < 0 || y >= c) throw ArgumentError("cross_entropy: label out of range");
  Tensor probs = softmax(logits, 1);
  Tensor logp = log_clamped(probs);
  Tensor acc = Tensor::scalar(0.0);
  for (size_t i = 0; i < labels.size(); ++i)
    acc = add(acc, pick(row(logp, static_cast<int>(i)), labels[i]));
  return scale(acc, -1.0 / static_cast<double>(labels.size()));
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.ndim() == 1) {
    Tensor m = make_op({1, logits.dim(0)}, logits.values(), {logits},
                       [](detail::Node& n) {
                         auto& g = n.parents[0]->ensure_grad();
                         for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                       });
    return cross_entropy(m, std::vector<int>{label});
  }
  return cross_entropy(logits, std::vector<int>{label});
}

Tensor entropy(const Tensor& p, double eps) {
  return scale(sum(mul(p, log_clamped(p, eps))), -1.0);
}

// --- sequence ---------------------------------------------------------------

Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, int stride,
                       int padding) {
  if (x.ndim() != 2 || kernel.ndim() != 3)
    throw ArgumentError("temporal_conv1d: x (L,d_in), kernel (k,d_in,d_out)");
  const int l_in = x.dim(0), d_in = x.dim(1);
  const int k = kernel.dim(0), d_out = kernel.dim(2);
  if (kernel.dim(1) != d_in)
    throw ArgumentError("temporal_conv1d: kernel d_in mismatch");
  if (stride < 1 || padding < 0)
    throw ArgumentError("temporal_conv1d: bad stride/padding");
  const int l_out = (l_in + 2 * padding - k) / stride + 1;
  if (k > l_in + 2 * padding || l_out < 1)
    throw ArgumentError("temporal_conv1d: empty output");
  std::vector<double> out(static_cast<size_t>(l_out) * d_out, 0.0);
  const auto& xv = x.values();
  const auto& kv = kernel.values();
  for (int t = 0; t < l_out; ++t) {
    const int start = t * stride - padding;
    for (int ki = 0; ki < k; ++ki) {
      const int src = start + ki;
      if (src < 0 || src >= l_in) continue;
      const double* xr = &xv[static_cast<size_t>(src) * d_in];
      for (int ci = 0; ci < d_in; ++ci) {
        const double xval = xr[ci];
        if (xval == 0.0) continue;
        const double* krow = &kv[(static_cast<size_t>(ki) * d_in + ci) * d_out];
        double* orow = &out[static_cast<size_t>(t) * d_out];
        for (int co = 0; co < d_out; ++co) orow[co] += xval * krow[co];
      }
    }
  }
  return make_op({l_out, d_out}, std::move(out), {x, kernel},
                 [l_in, d_in, k, d_out, l_out, stride, padding](detail::Node& nd) {
    const auto& xv = nd.parents[0]->values;
    const auto& kv = nd.parents[1]->values;
    for (int t = 0; t < l_out; ++t) {
      const int start = t * stride - padding;
      const double* grow = &nd.grad[static_cast<size_t>(t) * d_out];
      for (int ki = 0; ki < k; ++ki) {
        const int src = start + ki;
        if (src < 0 || src >= l_in) continue;
        if (nd.parents[0]->requires_grad) {
          auto& gx = nd.parents[0]->ensure_grad();
          for (int ci = 0; ci < d_in; ++ci) {
            const double* krow = &kv[(static_cast<size_t>(ki) * d_in + ci) * d_out];
            double acc = 0.0;
            for (int co = 0; co < d_out; ++co) acc += grow[co] * krow[co];
            gx[static_cast<size_t>(src) * d_in + ci] += acc;
          }
        }
        if (nd.parents[1]->requires_grad) {
          auto& gk = nd.parents[1]->ensure_grad();
          const double* xr = &xv[static_cast<size_t>(src) * d_in];
          for (int ci = 0; ci < d_in; ++ci) {
            const double xval = xr[ci];
            if (xval == 0.0) continue;
            double* gkrow = &gk[(static_cast<size_t>(ki) * d_in + ci) * d_out];
            for (int co = 0; co < d_out; ++co) gkrow[co] += xval * grow[co];
          }
        }
      }
    }
  });
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    throw ArgumentError("scaled_dot_attention: matrices required");
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
    throw ArgumentError("scaled_dot_attention: dimension mismatch");
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  Tensor weights = softmax(scores, 1);
  return matmul(weights, v);
}

// --- verification -----------------------------------------------------------

double gradient_check(const std::function<Tensor()>& f,
                      std::vector<Tensor> params, double h) {
  for (auto& p : params) p.zero_grad();
  Tensor out = f();
  if (!std::isfinite(out.item()))
    throw std::runtime_error("gradient_check: non-finite function value");
  out.backward();
  std::vector<std::vector<double>> ad_grads;
  ad_grads.reserve(params.size());
  for (auto& p : params) ad_grads.push_back(p.grad());
  double max_err = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = f().item();
      vals[i] = orig - h;
      const double fm = f().item();
      vals[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = ad_grads[pi][i];
      const double denom = std::max({1.0, std::fabs(ad), std::fabs(fd)});
      max_err = std::max(max_err, std::fabs(ad - fd) / denom);
    }
  }
  return max_err;
}

// --- optimizer --------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr,
                             double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamOptimizer::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& vals = params_[pi].values();
    const auto& g = params_[pi].grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < vals.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      vals[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

}  // namespace dcr
