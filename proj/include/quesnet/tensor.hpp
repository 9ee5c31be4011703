#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"

namespace quesnet {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value once touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::uint64_t stamp = 0;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline std::uint64_t next_stamp() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

}  // namespace detail

// Whether newly created ops record backward closures. Off inside NoGradGuard
// (inference paths); thread-local so independent models on distinct threads
// do not interact.
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev; }
};

// Dense 64-bit real tensor with reverse-mode gradients. A Tensor is a cheap
// handle onto a graph node; ops build the graph define-by-run.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->value.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t ndim() const { return n_->shape.size(); }
  std::size_t size() const { return n_->value.size(); }
  std::size_t dim(std::size_t i) const { return n_->shape[i]; }

  std::vector<double>& data() { return n_->value; }
  const std::vector<double>& data() const { return n_->value; }

  double item() const {
    if (size() != 1)
      throw UsageError("item: tensor " + shape_str(shape()) + " is not scalar");
    return n_->value[0];
  }

  bool requires_grad() const { return n_->requires_grad; }

  std::vector<double>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<double>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }

  void zero_grad() {
    n_->ensure_grad();
    std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  }

  detail::Node* node() const { return n_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return n_; }

  // Reverse-mode accumulation from a scalar. Builds the reverse topological
  // order over grad-requiring nodes, seeds d(loss)/d(loss)=1, then runs each
  // recorded backward exactly once. Repeated calls accumulate additively.
  void backward() const;

 private:
  std::shared_ptr<detail::Node> n_;
};

// Record of one backward traversal: nodes in topological order (inputs
// last). Built per backward() call; exposed for inspection in tests.
struct Graph {
  std::vector<detail::Node*> order;

  static Graph trace(detail::Node* root) {
    Graph g;
    std::uint64_t stamp = detail::next_stamp();
    // Iterative post-order DFS.
    struct Frame {
      detail::Node* node;
      std::size_t next_child;
    };
    std::vector<Frame> stack;
    if (root->requires_grad) stack.push_back({root, 0});
    root->stamp = stamp;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_child < f.node->parents.size()) {
        detail::Node* child = f.node->parents[f.next_child++].get();
        if (child->stamp != stamp && child->requires_grad) {
          child->stamp = stamp;
          stack.push_back({child, 0});
        }
      } else {
        g.order.push_back(f.node);
        stack.pop_back();
      }
    }
    // Post-order has inputs first; reverse for consumer-first traversal.
    std::reverse(g.order.begin(), g.order.end());
    return g;
  }
};

inline void Tensor::backward() const {
  if (size() != 1)
    throw UsageError("backward: loss must be scalar, got " +
                     shape_str(shape()));
  if (!n_->requires_grad) return;
  Graph g = Graph::trace(n_.get());
  n_->ensure_grad();
  n_->grad[0] += 1.0;
  for (detail::Node* node : g.order) {
    if (node->backward) node->backward(*node);
    // Interior grads are scratch for this traversal; only leaves (inputs,
    // parameters) accumulate across backward calls.
    if (!node->parents.empty())
      std::fill(node->grad.begin(), node->grad.end(), 0.0);
  }
}

namespace detail {

inline bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline Tensor make_op(Shape shape, std::vector<double> value, bool rec,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = rec;
  if (rec) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.handle());
    n->backward = std::move(backward);
  }
  return Tensor(n);
}

inline void check_same_shape(const char* op, const Tensor& a,
                             const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes disagree: " +
                         shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return detail::make_op(a.shape(), std::move(v), detail::recording({&a, &b}),
                         {a, b}, [](detail::Node& n) {
                           auto& g = n.grad;
                           for (int p = 0; p < 2; ++p) {
                             auto& par = *n.parents[p];
                             if (!par.requires_grad) continue;
                             par.ensure_grad();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               par.grad[i] += g[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return detail::make_op(a.shape(), std::move(v), detail::recording({&a, &b}),
                         {a, b}, [](detail::Node& n) {
                           auto& g = n.grad;
                           auto& pa = *n.parents[0];
                           auto& pb = *n.parents[1];
                           if (pa.requires_grad) {
                             pa.ensure_grad();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               pa.grad[i] += g[i];
                           }
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               pb.grad[i] -= g[i];
                           }
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return detail::make_op(a.shape(), std::move(v), detail::recording({&a, &b}),
                         {a, b}, [](detail::Node& n) {
                           auto& g = n.grad;
                           auto& pa = *n.parents[0];
                           auto& pb = *n.parents[1];
                           if (pa.requires_grad) {
                             pa.ensure_grad();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               pa.grad[i] += g[i] * pb.value[i];
                           }
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (std::size_t i = 0; i < g.size(); ++i)
                               pb.grad[i] += g[i] * pa.value[i];
                           }
                         });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  return detail::make_op(a.shape(), std::move(v), detail::recording({&a}),
                         {a}, [c](detail::Node& n) {
                           auto& pa = *n.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                             pa.grad[i] += c * n.grad[i];
                         });
}

inline Tensor add_const(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + c;
  return detail::make_op(a.shape(), std::move(v), detail::recording({&a}),
                         {a}, [](detail::Node& n) {
                           auto& pa = *n.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                             pa.grad[i] += n.grad[i];
                         });
}

// Elementwise sum of several same-shape tensors in one node.
inline Tensor add_all(const std::vector<Tensor>& ts) {
  if (ts.empty()) throw UsageError("add_all: empty input list");
  std::vector<double> v(ts[0].size(), 0.0);
  bool rec = false;
  for (const Tensor& t : ts) {
    detail::check_same_shape("add_all", ts[0], t);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += t.data()[i];
    if (grad_enabled() && t.requires_grad()) rec = true;
  }
  return detail::make_op(ts[0].shape(), std::move(v), rec, ts,
                         [](detail::Node& n) {
                           for (auto& p : n.parents) {
                             if (!p->requires_grad) continue;
                             p->ensure_grad();
                             for (std::size_t i = 0; i < n.grad.size(); ++i)
                               p->grad[i] += n.grad[i];
                           }
                         });
}

// ---- activations ----

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return detail::make_op(a.shape(), std::move(v), detail::recording({&a}),
                         {a}, [](detail::Node& n) {
                           auto& pa = *n.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i) {
                             double y = n.value[i];
                             pa.grad[i] += n.grad[i] * y * (1.0 - y);
                           }
                         });
}

inline Tensor tanh_op(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.data()[i]);
  return detail::make_op(a.shape(), std::move(v), detail::recording({&a}),
                         {a}, [](detail::Node& n) {
                           auto& pa = *n.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i) {
                             double y = n.value[i];
                             pa.grad[i] += n.grad[i] * (1.0 - y * y);
                           }
                         });
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.01) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x = a.data()[i];
    v[i] = x > 0.0 ? x : slope * x;
  }
  return detail::make_op(a.shape(), std::move(v), detail::recording({&a}),
                         {a}, [slope](detail::Node& n) {
                           auto& pa = *n.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                             pa.grad[i] += n.grad[i] *
                                 (pa.value[i] > 0.0 ? 1.0 : slope);
                         });
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return detail::make_op({1}, {s}, detail::recording({&a}), {a},
                         [](detail::Node& n) {
                           auto& pa = *n.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           double g = n.grad[0];
                           for (double& d : pa.grad) d += g;
                         });
}

inline Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  double inv = 1.0 / static_cast<double>(a.size());
  return detail::make_op({1}, {s * inv}, detail::recording({&a}), {a},
                         [inv](detail::Node& n) {
                           auto& pa = *n.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           double g = n.grad[0] * inv;
                           for (double& d : pa.grad) d += g;
                         });
}

// ---- matrix ops ----

// a [m x k] times b [k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      double aik = pa[i * k + kk];
      const double* brow = pb + kk * n;
      double* vrow = v.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) vrow[j] += aik * brow[j];
    }
  return detail::make_op(
      {m, n}, std::move(v), detail::recording({&a, &b}), {a, b},
      [m, k, n](detail::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const double* g = node.grad.data();
        if (pa.requires_grad) {
          pa.ensure_grad();
          // da = g . b^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double s = 0.0;
              const double* brow = pb.value.data() + kk * n;
              const double* grow = g + i * n;
              for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
              pa.grad[i * k + kk] += s;
            }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          // db = a^T . g
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double aik = pa.value[i * k + kk];
              const double* grow = g + i * n;
              double* drow = pb.grad.data() + kk * n;
              for (std::size_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
            }
        }
      });
}

// a [m x k] times b^T where b is [n x k]; rows dotted against rows.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: incompatible shapes " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data().data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data().data() + j * k;
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      v[i * n + j] = s;
    }
  }
  return detail::make_op(
      {m, n}, std::move(v), detail::recording({&a, &b}), {a, b},
      [m, k, n](detail::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const double* g = node.grad.data();
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              double gij = g[i * n + j];
              const double* brow = pb.value.data() + j * k;
              double* drow = pa.grad.data() + i * k;
              for (std::size_t kk = 0; kk < k; ++kk)
                drow[kk] += gij * brow[kk];
            }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              double gij = g[i * n + j];
              const double* arow = pa.value.data() + i * k;
              double* drow = pb.grad.data() + j * k;
              for (std::size_t kk = 0; kk < k; ++kk)
                drow[kk] += gij * arow[kk];
            }
        }
      });
}

// y = W x + b with W [m x k], x [k], b [m].
inline Tensor affine(const Tensor& w, const Tensor& x, const Tensor& b) {
  if (w.ndim() != 2 || x.ndim() != 1 || w.dim(1) != x.dim(0))
    throw DimensionError("affine: weight " + shape_str(w.shape()) +
                         " does not accept input " + shape_str(x.shape()));
  std::size_t m = w.dim(0), k = w.dim(1);
  if (b.ndim() != 1 || b.dim(0) != m)
    throw DimensionError("affine: bias " + shape_str(b.shape()) +
                         " does not match output " + shape_str({m}));
  std::vector<double> v(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = w.data().data() + i * k;
    double s = b.data()[i];
    for (std::size_t j = 0; j < k; ++j) s += row[j] * x.data()[j];
    v[i] = s;
  }
  return detail::make_op(
      {m}, std::move(v), detail::recording({&w, &x, &b}), {w, x, b},
      [m, k](detail::Node& node) {
        auto& pw = *node.parents[0];
        auto& px = *node.parents[1];
        auto& pb = *node.parents[2];
        const double* g = node.grad.data();
        if (pw.requires_grad) {
          pw.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            double gi = g[i];
            double* drow = pw.grad.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) drow[j] += gi * px.value[j];
          }
        }
        if (px.requires_grad) {
          px.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            double gi = g[i];
            const double* row = pw.value.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) px.grad[j] += gi * row[j];
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < m; ++i) pb.grad[i] += g[i];
        }
      });
}

// Y = X W + bias per row; X [t x k], W [k x n], bias [n] (optional).
inline Tensor mat_affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y = matmul(x, w);
  if (!bias.defined()) return y;
  if (bias.ndim() != 1 || bias.dim(0) != y.dim(1))
    throw DimensionError("mat_affine: bias " + shape_str(bias.shape()) +
                         " does not match output " + shape_str(y.shape()));
  std::size_t t = y.dim(0), n = y.dim(1);
  std::vector<double> v = y.data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] += bias.data()[j];
  return detail::make_op({t, n}, std::move(v),
                         detail::recording({&y, &bias}), {y, bias},
                         [t, n](detail::Node& node) {
                           auto& py = *node.parents[0];
                           auto& pb = *node.parents[1];
                           if (py.requires_grad) {
                             py.ensure_grad();
                             for (std::size_t i = 0; i < t * n; ++i)
                               py.grad[i] += node.grad[i];
                           }
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (std::size_t i = 0; i < t; ++i)
                               for (std::size_t j = 0; j < n; ++j)
                                 pb.grad[j] += node.grad[i * n + j];
                           }
                         });
}

// ---- assembly ----

inline Tensor concat_vec(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_vec: empty input list");
  std::size_t total = 0;
  bool rec = false;
  for (const Tensor& p : parts) {
    if (p.ndim() != 1)
      throw DimensionError("concat_vec: expected vectors, got " +
                           shape_str(p.shape()));
    total += p.size();
    if (grad_enabled() && p.requires_grad()) rec = true;
  }
  std::vector<double> v;
  v.reserve(total);
  for (const Tensor& p : parts)
    v.insert(v.end(), p.data().begin(), p.data().end());
  return detail::make_op({total}, std::move(v), rec, parts,
                         [](detail::Node& n) {
                           std::size_t off = 0;
                           for (auto& p : n.parents) {
                             std::size_t len = p->value.size();
                             if (p->requires_grad) {
                               p->ensure_grad();
                               for (std::size_t i = 0; i < len; ++i)
                                 p->grad[i] += n.grad[off + i];
                             }
                             off += len;
                           }
                         });
}

inline Tensor slice_vec(const Tensor& a, std::size_t off, std::size_t len) {
  if (a.ndim() != 1 || off + len > a.size())
    throw DimensionError("slice_vec: range [" + std::to_string(off) + ", " +
                         std::to_string(off + len) + ") out of " +
                         shape_str(a.shape()));
  std::vector<double> v(a.data().begin() + off, a.data().begin() + off + len);
  return detail::make_op({len}, std::move(v), detail::recording({&a}), {a},
                         [off, len](detail::Node& n) {
                           auto& pa = *n.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < len; ++i)
                             pa.grad[off + i] += n.grad[i];
                         });
}

inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw UsageError("stack_rows: empty input list");
  std::size_t d = rows[0].size();
  bool rec = false;
  for (const Tensor& r : rows) {
    if (r.ndim() != 1 || r.size() != d)
      throw DimensionError("stack_rows: row " + shape_str(r.shape()) +
                           " does not match " + shape_str(rows[0].shape()));
    if (grad_enabled() && r.requires_grad()) rec = true;
  }
  std::vector<double> v;
  v.reserve(rows.size() * d);
  for (const Tensor& r : rows)
    v.insert(v.end(), r.data().begin(), r.data().end());
  return detail::make_op({rows.size(), d}, std::move(v), rec, rows,
                         [d](detail::Node& n) {
                           for (std::size_t r = 0; r < n.parents.size(); ++r) {
                             auto& p = *n.parents[r];
                             if (!p.requires_grad) continue;
                             p.ensure_grad();
                             for (std::size_t i = 0; i < d; ++i)
                               p.grad[i] += n.grad[r * d + i];
                           }
                         });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
    throw DimensionError("concat_cols: row counts disagree: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::size_t t = a.dim(0), da = a.dim(1), db = b.dim(1);
  std::vector<double> v(t * (da + db));
  for (std::size_t i = 0; i < t; ++i) {
    std::copy_n(a.data().data() + i * da, da, v.data() + i * (da + db));
    std::copy_n(b.data().data() + i * db, db, v.data() + i * (da + db) + da);
  }
  return detail::make_op(
      {t, da + db}, std::move(v), detail::recording({&a, &b}), {a, b},
      [t, da, db](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        std::size_t w = da + db;
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < da; ++j)
              pa.grad[i * da + j] += n.grad[i * w + j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < db; ++j)
              pb.grad[i * db + j] += n.grad[i * w + da + j];
        }
      });
}

// ---- softmax ----

// Softmax along `axis` (negative counts from the end). Shift-invariant:
// the max is subtracted before exponentiation.
inline Tensor softmax(const Tensor& a, int axis = -1) {
  int nd = static_cast<int>(a.ndim());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw UsageError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(a.shape()));
  std::size_t n = a.shape()[axis];
  std::size_t inner = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= a.shape()[i];
  std::size_t outer = a.size() / (n * inner);
  std::vector<double> v(a.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t base = o * n * inner + in;
      double mx = -1e300;
      for (std::size_t i = 0; i < n; ++i)
        mx = std::max(mx, a.data()[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double e = std::exp(a.data()[base + i * inner] - mx);
        v[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < n; ++i) v[base + i * inner] /= z;
    }
  return detail::make_op(
      a.shape(), std::move(v), detail::recording({&a}), {a},
      [n, inner, outer](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = o * n * inner + in;
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i)
              dot += node.grad[base + i * inner] * node.value[base + i * inner];
            for (std::size_t i = 0; i < n; ++i) {
              std::size_t idx = base + i * inner;
              pa.grad[idx] += node.value[idx] * (node.grad[idx] - dot);
            }
          }
      });
}

// ---- losses ----

// -log softmax(logits)[target]; logits is a vector.
inline Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.ndim() != 1)
    throw DimensionError("cross_entropy: logits must be a vector, got " +
                         shape_str(logits.shape()));
  std::size_t n = logits.size();
  if (target >= n)
    throw IndexError("cross_entropy: target " + std::to_string(target) +
                     " out of range for " + std::to_string(n) + " classes");
  double mx = *std::max_element(logits.data().begin(), logits.data().end());
  double z = 0.0;
  for (double x : logits.data()) z += std::exp(x - mx);
  double lse = mx + std::log(z);
  double loss = lse - logits.data()[target];
  return detail::make_op(
      {1}, {loss}, detail::recording({&logits}), {logits},
      [target, mx, lse](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        double g = node.grad[0];
        for (std::size_t i = 0; i < pa.value.size(); ++i) {
          double p = std::exp(pa.value[i] - lse);
          pa.grad[i] += g * (p - (i == target ? 1.0 : 0.0));
        }
        (void)mx;
      });
}

// Mean squared difference over all elements.
inline Tensor mse(const Tensor& pred, const Tensor& target) {
  detail::check_same_shape("mse", pred, target);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred.data()[i] - target.data()[i];
    s += d * d;
  }
  double inv = 1.0 / static_cast<double>(pred.size());
  return detail::make_op(
      {1}, {s * inv}, detail::recording({&pred, &target}), {pred, target},
      [inv](detail::Node& node) {
        auto& pp = *node.parents[0];
        auto& pt = *node.parents[1];
        double g = node.grad[0] * 2.0 * inv;
        if (pp.requires_grad) {
          pp.ensure_grad();
          for (std::size_t i = 0; i < pp.value.size(); ++i)
            pp.grad[i] += g * (pp.value[i] - pt.value[i]);
        }
        if (pt.requires_grad) {
          pt.ensure_grad();
          for (std::size_t i = 0; i < pt.value.size(); ++i)
            pt.grad[i] -= g * (pp.value[i] - pt.value[i]);
        }
      });
}

// Binary cross entropy on a single pre-sigmoid logit, stable form.
inline Tensor bce_with_logit(const Tensor& logit, double label) {
  if (logit.size() != 1)
    throw DimensionError("bce_with_logit: logit must be scalar, got " +
                         shape_str(logit.shape()));
  double z = logit.data()[0];
  double loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  return detail::make_op({1}, {loss}, detail::recording({&logit}), {logit},
                         [label](detail::Node& node) {
                           auto& pa = *node.parents[0];
                           if (!pa.requires_grad) return;
                           pa.ensure_grad();
                           double z = pa.value[0];
                           double s = 1.0 / (1.0 + std::exp(-z));
                           pa.grad[0] += node.grad[0] * (s - label);
                         });
}

// ---- misc ----

inline bool all_finite(const Tensor& t) {
  for (double x : t.data())
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace quesnet
