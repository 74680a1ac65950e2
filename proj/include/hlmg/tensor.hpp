#pragma once

// Minimal dense 2-D tensor engine with reverse-mode automatic differentiation.
// Every tensor is a row-major matrix [rows, cols]; scalars are 1x1. Ops build a
// DAG of nodes on the fly; Tensor::backward() walks it in reverse topological
// order and accumulates gradients (summing across fan-out). A graph is
// single-threaded; independent graphs may run in parallel.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hlmg/common.hpp"

namespace hlmg::ad {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<Mat<T>>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;

// Gradient recording is on by default and can be suspended per thread.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct GradModeGuard {
  bool prev;
  explicit GradModeGuard(bool on) : prev(grad_mode()) { grad_mode() = on; }
  ~GradModeGuard() { grad_mode() = prev; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

template <typename T>
struct TensorNode {
  int rows = 0, cols = 0;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on demand; same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  std::shared_ptr<TensorNode<T>> n;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : n(std::move(node)) {}

  static Tensor zeros(int rows, int cols, bool requires_grad = false) {
    return filled(rows, cols, T(0), requires_grad);
  }

  static Tensor filled(int rows, int cols, T v, bool requires_grad = false) {
    auto node = std::make_shared<TensorNode<T>>();
    node->rows = rows;
    node->cols = cols;
    node->value.assign(static_cast<size_t>(rows) * cols, v);
    node->requires_grad = requires_grad && grad_mode();
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return filled(1, 1, v, requires_grad); }

  static Tensor from_data(int rows, int cols, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<long long>(data.size()) != static_cast<long long>(rows) * cols)
      throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape [" +
                       std::to_string(rows) + "," + std::to_string(cols) + "]");
    auto node = std::make_shared<TensorNode<T>>();
    node->rows = rows;
    node->cols = cols;
    node->value = std::move(data);
    node->requires_grad = requires_grad && grad_mode();
    return Tensor(std::move(node));
  }

  static Tensor randn(int rows, int cols, T stddev, Rng& rng, bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    std::vector<T> data(static_cast<size_t>(rows) * cols);
    for (auto& x : data) x = static_cast<T>(dist(rng));
    return from_data(rows, cols, std::move(data), requires_grad);
  }

  bool defined() const { return n != nullptr; }
  int rows() const { return n->rows; }
  int cols() const { return n->cols; }
  long long size() const { return static_cast<long long>(n->rows) * n->cols; }
  bool requires_grad() const { return n && n->requires_grad; }
  const std::vector<T>& value() const { return n->value; }
  // Tensor has pointer semantics; mutating the payload of a const handle is allowed.
  std::vector<T>& value_mut() const { return n->value; }
  const std::vector<T>& grad() const { return n->grad; }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor is not scalar");
    return n->value[0];
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows()) + "," + std::to_string(cols()) + "]";
  }

  void zero_grad() const {
    if (n) n->grad.assign(n->value.size(), T(0));
  }

  // Reverse-mode sweep from this scalar. Gradients accumulate into every
  // reachable node that requires grad (leaf grads are NOT cleared first, so
  // repeated backward calls sum; used for batch accumulation).
  void backward() const {
    if (size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str());
    if (!n->requires_grad) throw Error("backward: root does not require grad");

    // iterative post-order DFS over parents
    std::vector<TensorNode<T>*> topo;
    std::unordered_set<TensorNode<T>*> visited;
    struct Frame {
      TensorNode<T>* node;
      size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({n.get(), 0});
    visited.insert(n.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        TensorNode<T>* p = f.node->parents[f.next++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(f.node);
        stack.pop_back();
      }
    }
    n->ensure_grad();
    n->grad[0] += T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }
};

namespace detail {

template <typename T>
inline Map<T> map(std::vector<T>& v, int r, int c) {
  return Map<T>(v.data(), r, c);
}
template <typename T>
inline CMap<T> cmap(const std::vector<T>& v, int r, int c) {
  return CMap<T>(v.data(), r, c);
}

template <typename T>
Tensor<T> make_result(int rows, int cols, std::vector<T> value,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(TensorNode<T>&)> backward) {
  auto node = std::make_shared<TensorNode<T>>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  bool need = false;
  if (grad_mode()) {
    for (const auto& t : inputs) need = need || t.requires_grad();
  }
  if (need) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.n);
    node->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  const int m = a.rows(), k = a.cols(), nn = b.cols();
  std::vector<T> out(static_cast<size_t>(m) * nn);
  detail::map(out, m, nn).noalias() =
      detail::cmap(a.value(), m, k) * detail::cmap(b.value(), k, nn);
  auto an = a.n, bn = b.n;
  return detail::make_result<T>(
      m, nn, std::move(out), {a, b}, [an, bn, m, k, nn](TensorNode<T>& self) {
        auto g = detail::cmap(self.grad, m, nn);
        if (an->requires_grad) {
          an->ensure_grad();
          detail::map(an->grad, m, k).noalias() += g * detail::cmap(bn->value, k, nn).transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::map(bn->grad, k, nn).noalias() += detail::cmap(an->value, m, k).transpose() * g;
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  const int r = a.rows(), c = a.cols();
  std::vector<T> out(a.value());
  detail::map(out, r, c) += detail::cmap(b.value(), r, c);
  auto an = a.n, bn = b.n;
  return detail::make_result<T>(r, c, std::move(out), {a, b}, [an, bn](TensorNode<T>& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

// Broadcast a [1,c] row over every row of x.
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& row) {
  if (row.rows() != 1 || row.cols() != x.cols())
    throw ShapeError("add_rowwise: shape mismatch " + x.shape_str() + " vs " + row.shape_str());
  const int r = x.rows(), c = x.cols();
  std::vector<T> out(x.value());
  detail::map(out, r, c).rowwise() +=
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(row.value().data(), c);
  auto xn = x.n, rn = row.n;
  return detail::make_result<T>(r, c, std::move(out), {x, row}, [xn, rn, r, c](TensorNode<T>& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }
    if (rn->requires_grad) {
      rn->ensure_grad();
      // fixed-order accumulation keeps repeated runs bit-identical
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) rn->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  const int r = a.rows(), c = a.cols();
  std::vector<T> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.n, bn = b.n;
  return detail::make_result<T>(r, c, std::move(out), {a, b}, [an, bn](TensorNode<T>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.value());
  for (auto& v : out) v *= s;
  auto an = a.n;
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [an, s](TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += s * self.grad[i];
  });
}

// Multiply by a trainable 1x1 scalar tensor (broadcast).
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: scale must be 1x1, got " + s.shape_str());
  const T sv = s.value()[0];
  std::vector<T> out(a.value());
  for (auto& v : out) v *= sv;
  auto an = a.n, sn = s.n;
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a, s},
                                [an, sn, sv](TensorNode<T>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += sv * self.grad[i];
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      T acc = 0;
      for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * an->value[i];
      sn->grad[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<T> out(a.value().size());
  detail::map(out, c, r) = detail::cmap(a.value(), r, c).transpose();
  auto an = a.n;
  return detail::make_result<T>(c, r, std::move(out), {a}, [an, r, c](TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    detail::map(an->grad, r, c) += detail::cmap(self.grad, c, r).transpose();
  });
}

// Row-wise softmax (last axis). Numerically stable; rows sum to 1.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<T> out(a.value().size());
  for (int i = 0; i < r; ++i) {
    const T* x = a.value().data() + static_cast<size_t>(i) * c;
    T* y = out.data() + static_cast<size_t>(i) * c;
    T mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = 0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= sum;
  }
  auto an = a.n;
  auto probs = std::make_shared<std::vector<T>>(out);
  return detail::make_result<T>(r, c, std::move(out), {a}, [an, probs, r, c](TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const T* p = probs->data() + static_cast<size_t>(i) * c;
      const T* g = self.grad.data() + static_cast<size_t>(i) * c;
      T* gx = an->grad.data() + static_cast<size_t>(i) * c;
      T dot = 0;
      for (int j = 0; j < c; ++j) dot += g[j] * p[j];
      for (int j = 0; j < c; ++j) gx[j] += p[j] * (g[j] - dot);
    }
  });
}

// mask[i] != 0 replaces the entry with `fill` (used with a large negative fill
// ahead of softmax; exp underflows to exactly 0 for masked slots).
template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, const std::vector<uint8_t>& mask, T fill) {
  if (mask.size() != a.value().size())
    throw ShapeError("masked_fill: mask size " + std::to_string(mask.size()) + " vs tensor " +
                     a.shape_str());
  std::vector<T> out(a.value());
  for (size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = fill;
  auto an = a.n;
  auto m = std::make_shared<std::vector<uint8_t>>(mask);
  return detail::make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [an, m](TensorNode<T>& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (!(*m)[i]) an->grad[i] += self.grad[i];
  });
}

// Per-row layer norm with affine gain/bias [1,c]. Pre-affine rows have mean 0,
// variance 1 (up to eps).
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T eps = T(1e-5)) {
  const int r = x.rows(), c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
    throw ShapeError("layer_norm: affine shape mismatch, x " + x.shape_str() + " gain " +
                     gain.shape_str() + " bias " + bias.shape_str());
  std::vector<T> out(x.value().size());
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(r);
  for (int i = 0; i < r; ++i) {
    const T* xi = x.value().data() + static_cast<size_t>(i) * c;
    T mean = 0;
    for (int j = 0; j < c; ++j) mean += xi[j];
    mean /= c;
    T var = 0;
    for (int j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= c;
    const T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = istd;
    T* xh = xhat->data() + static_cast<size_t>(i) * c;
    T* y = out.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      xh[j] = (xi[j] - mean) * istd;
      y[j] = xh[j] * gain.value()[j] + bias.value()[j];
    }
  }
  auto xn = x.n, gn = gain.n, bn = bias.n;
  return detail::make_result<T>(
      r, c, std::move(out), {x, gain, bias}, [xn, gn, bn, xhat, inv_std, r, c](TensorNode<T>& self) {
        for (int i = 0; i < r; ++i) {
          const T* g = self.grad.data() + static_cast<size_t>(i) * c;
          const T* xh = xhat->data() + static_cast<size_t>(i) * c;
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (int j = 0; j < c; ++j) gn->grad[j] += g[j] * xh[j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int j = 0; j < c; ++j) bn->grad[j] += g[j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            T* gx = xn->grad.data() + static_cast<size_t>(i) * c;
            // dxhat = g * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
            T mean_dxh = 0, mean_dxh_xh = 0;
            for (int j = 0; j < c; ++j) {
              const T dxh = g[j] * gn->value[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= c;
            mean_dxh_xh /= c;
            for (int j = 0; j < c; ++j) {
              const T dxh = g[j] * gn->value[j];
              gx[j] += (dxh - mean_dxh - xh[j] * mean_dxh_xh) * (*inv_std)[i];
            }
          }
        }
      });
}

// GELU, tanh approximation:
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<T> out(x.value().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(x.value()[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
  }
  auto xn = x.n;
  return detail::make_result<T>(x.rows(), x.cols(), std::move(out), {x}, [xn](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    constexpr double c = 0.7978845608028654;
    constexpr double a = 0.044715;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double v = static_cast<double>(xn->value[i]);
      const double th = std::tanh(c * (v + a * v * v * v));
      const double du = c * (1.0 + 3.0 * a * v * v);
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      xn->grad[i] += self.grad[i] * static_cast<T>(d);
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.value().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x.value()[i]))));
  auto xn = x.n;
  auto y = std::make_shared<std::vector<T>>(out);
  return detail::make_result<T>(x.rows(), x.cols(), std::move(out), {x}, [xn, y](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[i] += self.grad[i] * (*y)[i] * (T(1) - (*y)[i]);
  });
}

// Inverted dropout: kept entries are scaled by 1/(1-rate) at train time so
// evaluation is a no-op.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, Rng& rng) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw Error("dropout: rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  auto mask = std::make_shared<std::vector<T>>(x.value().size());
  std::vector<T> out(x.value().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const T m = dist(rng) < rate ? T(0) : keep_scale;
    (*mask)[i] = m;
    out[i] = x.value()[i] * m;
  }
  auto xn = x.n;
  return detail::make_result<T>(x.rows(), x.cols(), std::move(out), {x}, [xn, mask](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * (*mask)[i];
  });
}

// Gather rows of an embedding table; backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  const int c = table.cols();
  const int r = static_cast<int>(ids.size());
  std::vector<T> out(static_cast<size_t>(r) * c);
  for (int i = 0; i < r; ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw ShapeError("embedding_rows: id " + std::to_string(ids[i]) + " out of range for table " +
                       table.shape_str());
    std::copy_n(table.value().data() + static_cast<size_t>(ids[i]) * c, c,
                out.data() + static_cast<size_t>(i) * c);
  }
  auto tn = table.n;
  auto idx = std::make_shared<std::vector<int>>(ids);
  return detail::make_result<T>(r, c, std::move(out), {table}, [tn, idx, c](TensorNode<T>& self) {
    if (!tn->requires_grad) return;
    tn->ensure_grad();
    for (size_t i = 0; i < idx->size(); ++i) {
      const T* g = self.grad.data() + i * c;
      T* dst = tn->grad.data() + static_cast<size_t>((*idx)[i]) * c;
      for (int j = 0; j < c; ++j) dst[j] += g[j];
    }
  });
}

// Mean of rows [r0, r1) -> [1, c].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x, int r0, int r1) {
  if (r0 < 0 || r1 > x.rows() || r0 >= r1)
    throw ShapeError("mean_rows: empty or invalid row span [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") of " + x.shape_str());
  const int c = x.cols();
  const int span = r1 - r0;
  std::vector<T> out(c, T(0));
  for (int i = r0; i < r1; ++i)
    for (int j = 0; j < c; ++j) out[j] += x.value()[static_cast<size_t>(i) * c + j];
  for (int j = 0; j < c; ++j) out[j] /= span;
  auto xn = x.n;
  return detail::make_result<T>(1, c, std::move(out), {x}, [xn, r0, r1, c, span](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < c; ++j)
        xn->grad[static_cast<size_t>(i) * c + j] += self.grad[j] / span;
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int r0, int r1) {
  if (r0 < 0 || r1 > x.rows() || r0 >= r1)
    throw ShapeError("slice_rows: invalid span [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") of " + x.shape_str());
  const int c = x.cols();
  std::vector<T> out(x.value().begin() + static_cast<size_t>(r0) * c,
                     x.value().begin() + static_cast<size_t>(r1) * c);
  auto xn = x.n;
  return detail::make_result<T>(r1 - r0, c, std::move(out), {x}, [xn, r0, c](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const size_t off = static_cast<size_t>(r0) * c;
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[off + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw ShapeError("slice_cols: invalid span [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") of " + x.shape_str());
  const int r = x.rows(), c = x.cols(), w = c1 - c0;
  std::vector<T> out(static_cast<size_t>(r) * w);
  for (int i = 0; i < r; ++i)
    std::copy_n(x.value().data() + static_cast<size_t>(i) * c + c0, w,
                out.data() + static_cast<size_t>(i) * w);
  auto xn = x.n;
  return detail::make_result<T>(r, w, std::move(out), {x}, [xn, c0, r, c, w](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        xn->grad[static_cast<size_t>(i) * c + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int c = parts[0].cols();
  int r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch " + parts[0].shape_str() + " vs " +
                       p.shape_str());
    r += p.rows();
  }
  std::vector<T> out;
  out.reserve(static_cast<size_t>(r) * c);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  auto nodes = std::make_shared<std::vector<std::shared_ptr<TensorNode<T>>>>();
  for (const auto& p : parts) nodes->push_back(p.n);
  return detail::make_result<T>(r, c, std::move(out), parts, [nodes](TensorNode<T>& self) {
    size_t off = 0;
    for (auto& p : *nodes) {
      const size_t len = p->value.size();
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < len; ++i) p->grad[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows())
    throw ShapeError("concat_cols: row mismatch " + a.shape_str() + " vs " + b.shape_str());
  const int r = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<T> out(static_cast<size_t>(r) * (ca + cb));
  for (int i = 0; i < r; ++i) {
    std::copy_n(a.value().data() + static_cast<size_t>(i) * ca, ca,
                out.data() + static_cast<size_t>(i) * (ca + cb));
    std::copy_n(b.value().data() + static_cast<size_t>(i) * cb, cb,
                out.data() + static_cast<size_t>(i) * (ca + cb) + ca);
  }
  auto an = a.n, bn = b.n;
  return detail::make_result<T>(r, ca + cb, std::move(out), {a, b},
                                [an, bn, r, ca, cb](TensorNode<T>& self) {
    for (int i = 0; i < r; ++i) {
      const T* g = self.grad.data() + static_cast<size_t>(i) * (ca + cb);
      if (an->requires_grad) {
        an->ensure_grad();
        for (int j = 0; j < ca; ++j) an->grad[static_cast<size_t>(i) * ca + j] += g[j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < cb; ++j) bn->grad[static_cast<size_t>(i) * cb + j] += g[ca + j];
      }
    }
  });
}

// Cross entropy of a [1,C] logits row against one label index (log-sum-exp form).
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, int label) {
  if (logits.rows() != 1) throw ShapeError("cross_entropy: expected [1,C], got " + logits.shape_str());
  const int c = logits.cols();
  if (label < 0 || label >= c)
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     logits.shape_str());
  const T* x = logits.value().data();
  T mx = x[0];
  for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
  T sum = 0;
  auto probs = std::make_shared<std::vector<T>>(c);
  for (int j = 0; j < c; ++j) {
    (*probs)[j] = std::exp(x[j] - mx);
    sum += (*probs)[j];
  }
  for (int j = 0; j < c; ++j) (*probs)[j] /= sum;
  const T loss = std::log(sum) + mx - x[label];
  auto ln = logits.n;
  return detail::make_result<T>(1, 1, std::vector<T>{loss}, {logits},
                                [ln, probs, label, c](TensorNode<T>& self) {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    const T g = self.grad[0];
    for (int j = 0; j < c; ++j)
      ln->grad[j] += g * ((*probs)[j] - (j == label ? T(1) : T(0)));
  });
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, int r, int c) {
  if (r < 0 || r >= x.rows() || c < 0 || c >= x.cols())
    throw ShapeError("select: index (" + std::to_string(r) + "," + std::to_string(c) +
                     ") out of range for " + x.shape_str());
  const int cols = x.cols();
  auto xn = x.n;
  return detail::make_result<T>(1, 1, std::vector<T>{x.value()[static_cast<size_t>(r) * cols + c]},
                                {x}, [xn, r, c, cols](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    xn->grad[static_cast<size_t>(r) * cols + c] += self.grad[0];
  });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.value()) acc += v;
  auto xn = x.n;
  return detail::make_result<T>(1, 1, std::vector<T>{acc}, {x}, [xn](TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (auto& g : xn->grad) g += self.grad[0];
  });
}

inline int argmax_row(const std::vector<float>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}
inline int argmax_row(const std::vector<double>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

// --- finite-difference gradient verification ------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  long long checked_coords = 0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central finite differences against reverse-mode gradients. `f` must be a
// deterministic scalar-valued computation over the given parameter tensors
// (dropout disabled). For large tensors a seeded coordinate subset is checked.
// Relative error: |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& f,
                           const std::vector<std::pair<std::string, Tensor<T>>>& params,
                           T eps, int max_coords_per_tensor = 64, uint64_t seed = 0) {
  for (auto& [name, p] : params) p.zero_grad();
  Tensor<T> loss = f();
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw Error("grad_check: non-finite loss");
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params)
    analytic.push_back(p.n->grad.empty() ? std::vector<T>(p.value().size(), T(0)) : p.n->grad);

  GradCheckReport report;
  Rng rng(mix_seed(seed, 0xfd));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi].second;
    std::vector<size_t> coords;
    const size_t total = p.value().size();
    if (static_cast<long long>(total) <= max_coords_per_tensor) {
      coords.resize(total);
      for (size_t i = 0; i < total; ++i) coords[i] = i;
    } else {
      std::uniform_int_distribution<size_t> dist(0, total - 1);
      for (int i = 0; i < max_coords_per_tensor; ++i) coords.push_back(dist(rng));
    }
    for (size_t ci : coords) {
      const T orig = p.value()[ci];
      T f_plus, f_minus;
      {
        NoGradGuard ng;
        p.value_mut()[ci] = orig + eps;
        f_plus = f().item();
        p.value_mut()[ci] = orig - eps;
        f_minus = f().item();
        p.value_mut()[ci] = orig;
      }
      if (!std::isfinite(static_cast<double>(f_plus)) ||
          !std::isfinite(static_cast<double>(f_minus)))
        throw Error("grad_check: non-finite value while perturbing " + params[pi].first);
      const double fd = (static_cast<double>(f_plus) - static_cast<double>(f_minus)) /
                        (2.0 * static_cast<double>(eps));
      const double ga = static_cast<double>(analytic[pi][ci]);
      const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
      ++report.checked_coords;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].first;
      }
    }
  }
  return report;
}

}  // namespace hlmg::ad
