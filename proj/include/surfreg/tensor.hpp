#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors.
//
// Tensors are handles to graph nodes. Every op records its parents and a
// backward closure only when at least one input requires a gradient, so
// constant sub-expressions cost nothing at backward time. Broadcasting is
// limited to leading-axis expansion: the right operand's shape must equal
// a suffix of the left operand's shape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace surfreg::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::invalid_argument shape_error(const char* op, const Shape& a, const Shape& b) {
  return std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                               " and " + shape_str(b));
}

/// Runtime switch for the per-op finiteness check.
inline bool& debug_checks() {
#ifdef NDEBUG
  static bool on = false;
#else
  static bool on = true;
#endif
  return on;
}

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<Real>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
    return grad;
  }
};

template <typename Real>
class Tensor {
public:
  using NodePtr = std::shared_ptr<Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<Real>>();
    n->value.assign(numel(shape), Real(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor full(Shape shape, Real v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false) {
    if (numel(shape) != data.size())
      throw std::invalid_argument("Tensor::from: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from(Shape{}, std::vector<Real>{v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  std::span<const Real> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  Real item() const {
    if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  Real operator[](std::size_t i) const { return node_->value[i]; }

  void zero_grad() { node_->grad.clear(); }

  /// A new leaf sharing no graph history.
  Tensor detach() const { return from(shape(), node_->value, false); }

  /// Accumulates d(this)/d(leaf) into every reachable leaf with
  /// requires_grad. A no-op when this tensor does not require a gradient.
  void backward() const;

  Node<Real>& node() const { return *node_; }
  const NodePtr& ptr() const { return node_; }

private:
  NodePtr node_;
};

/// Build an op output. Parents and the backward closure are kept only when
/// some parent requires a gradient.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value,
                         std::vector<std::shared_ptr<Node<Real>>> parents,
                         std::function<void(Node<Real>&)> backward) {
  auto n = std::make_shared<Node<Real>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (debug_checks()) {
    for (const Real v : n->value)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("non-finite value produced by forward op");
  }
  const bool need = std::any_of(parents.begin(), parents.end(),
                                [](const auto& p) { return p && p->requires_grad; });
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor<Real>(n);
}

template <typename Real>
void Tensor<Real>::backward() const {
  if (!node_->requires_grad) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<Real>* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& g = node_->grad_buffer();
  std::fill(g.begin(), g.end(), Real(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

namespace detail {

inline std::size_t norm_axis(long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  if (axis < -r || axis >= r)
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(rank));
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Split a shape around an axis into (outer, n, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline bool is_suffix(const Shape& full, const Shape& suf) {
  if (suf.size() > full.size()) return false;
  return std::equal(suf.begin(), suf.end(), full.end() - static_cast<long>(suf.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with leading-axis expansion of the right operand.

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!detail::is_suffix(a.shape(), b.shape())) throw shape_error("add", a.shape(), b.shape());
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t m = bv.size();
  std::vector<Real> out(av.begin(), av.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % m];
  return make_result<Real>(a.shape(), std::move(out), {a.ptr(), b.ptr()}, [m](Node<Real>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % m] += self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!detail::is_suffix(a.shape(), b.shape())) throw shape_error("sub", a.shape(), b.shape());
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t m = bv.size();
  std::vector<Real> out(av.begin(), av.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % m];
  return make_result<Real>(a.shape(), std::move(out), {a.ptr(), b.ptr()}, [m](Node<Real>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % m] -= self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!detail::is_suffix(a.shape(), b.shape())) throw shape_error("mul", a.shape(), b.shape());
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t m = bv.size();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % m];
  return make_result<Real>(a.shape(), std::move(out), {a.ptr(), b.ptr()}, [m](Node<Real>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * pb.value[i % m];
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % m] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result<Real>(a.shape(), std::move(out), {a.ptr()}, [s](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n], computed by Eigen's GEMM.
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) == 0 || a.dim(1) != b.dim(0))
    throw shape_error("matmul", a.shape(), b.shape());
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<Real> out(static_cast<std::size_t>(m * n));
  MMap(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  return make_result<Real>({a.dim(0), b.dim(1)}, std::move(out), {a.ptr(), b.ptr()},
                           [m, k, n](Node<Real>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    CMap g(self.grad.data(), m, n);
    if (pa.requires_grad)
      MMap(pa.grad_buffer().data(), m, k).noalias() += g * CMap(pb.value.data(), k, n).transpose();
    if (pb.requires_grad)
      MMap(pb.grad_buffer().data(), k, n).noalias() += CMap(pa.value.data(), m, k).transpose() * g;
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a, long axis) {
  const std::size_t ax = detail::norm_axis(axis, a.rank());
  const auto sp = detail::split_at(a.shape(), ax);
  Shape os = a.shape();
  os.erase(os.begin() + static_cast<long>(ax));
  std::vector<Real> out(sp.outer * sp.inner, Real(0));
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j) {
      const Real* src = av.data() + (o * sp.n + j) * sp.inner;
      Real* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  return make_result<Real>(os, std::move(out), {a.ptr()}, [sp](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.n; ++j) {
        Real* dst = ga.data() + (o * sp.n + j) * sp.inner;
        const Real* src = self.grad.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a, long axis) {
  const std::size_t ax = detail::norm_axis(axis, a.rank());
  if (a.dim(ax) == 0) throw std::invalid_argument("mean over empty axis");
  return scale(sum(a, axis), Real(1) / static_cast<Real>(a.dim(ax)));
}

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& a) {
  Real s = 0;
  for (const Real v : a.data()) s += v;
  return make_result<Real>(Shape{}, std::vector<Real>{s}, {a.ptr()}, [](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (auto& g : ga) g += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& a) {
  return scale(sum_all(a), Real(1) / static_cast<Real>(a.size()));
}

template <typename Real>
struct MaxResult {
  Tensor<Real> values;
  std::vector<std::size_t> argmax;  // one per output element, index along the axis
};

/// Max over an axis. Ties resolve to the lowest index, and the gradient goes
/// to that index only.
template <typename Real>
MaxResult<Real> max_axis(const Tensor<Real>& a, long axis) {
  const std::size_t ax = detail::norm_axis(axis, a.rank());
  const auto sp = detail::split_at(a.shape(), ax);
  if (sp.n == 0) throw std::invalid_argument("max over empty axis");
  Shape os = a.shape();
  os.erase(os.begin() + static_cast<long>(ax));
  std::vector<Real> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(sp.outer * sp.inner, 0);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      Real bv = av[o * sp.n * sp.inner + i];
      for (std::size_t j = 1; j < sp.n; ++j) {
        const Real v = av[(o * sp.n + j) * sp.inner + i];
        if (v > bv) {
          bv = v;
          best = j;
        }
      }
      out[o * sp.inner + i] = bv;
      arg[o * sp.inner + i] = best;
    }
  auto t = make_result<Real>(os, std::move(out), {a.ptr()}, [sp, arg](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i)
        ga[(o * sp.n + arg[o * sp.inner + i]) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
  return {t, std::move(arg)};
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (numel(shape) != a.size()) throw shape_error("reshape", a.shape(), shape);
  std::vector<Real> out(a.data().begin(), a.data().end());
  return make_result<Real>(std::move(shape), std::move(out), {a.ptr()}, [](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

/// out.shape[i] = a.shape[axes[i]]
template <typename Real>
Tensor<Real> permute(const Tensor<Real>& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) throw std::invalid_argument("permute: axes length does not match rank");
  std::vector<bool> used(r, false);
  for (auto ax : axes) {
    if (ax >= r || used[ax]) throw std::invalid_argument("permute: invalid axes");
    used[ax] = true;
  }
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = a.dim(axes[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.dim(i);
  // map[out_index] = in_index
  const std::size_t n = a.size();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t in = 0;
    for (std::size_t i = 0; i < r; ++i) in += idx[i] * in_strides[axes[i]];
    map[o] = in;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < os[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<Real> out(n);
  const auto av = a.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = av[map[o]];
  return make_result<Real>(os, std::move(out), {a.ptr()}, [map](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < map.size(); ++o) ga[map[o]] += self.grad[o];
  });
}

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, long axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const std::size_t ax = detail::norm_axis(axis, parts[0].rank());
  Shape os = parts[0].shape();
  os[ax] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw shape_error("concat", b, a);
    a[ax] = b[ax] = 0;
    if (a != b) throw shape_error("concat", parts[0].shape(), p.shape());
    os[ax] += p.dim(ax);
  }
  const auto sp = detail::split_at(os, ax);
  std::vector<Real> out(numel(os));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  std::vector<std::shared_ptr<Node<Real>>> parents;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(ax) * sp.inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy(pv.begin() + static_cast<long>(o * w), pv.begin() + static_cast<long>((o + 1) * w),
                out.begin() + static_cast<long>(o * sp.n * sp.inner + off));
    offsets.push_back(off);
    off += w;
    parents.push_back(p.ptr());
  }
  return make_result<Real>(os, std::move(out), std::move(parents), [sp, offsets](Node<Real>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& gp = p.grad_buffer();
      const std::size_t w = gp.size() / sp.outer;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < w; ++i)
          gp[o * w + i] += self.grad[o * sp.n * sp.inner + offsets[k] + i];
    }
  });
}

/// Contiguous range [start, start+len) along an axis.
template <typename Real>
Tensor<Real> slice(const Tensor<Real>& a, long axis, std::size_t start, std::size_t len) {
  const std::size_t ax = detail::norm_axis(axis, a.rank());
  if (start + len > a.dim(ax)) throw std::invalid_argument("slice out of range");
  const auto sp = detail::split_at(a.shape(), ax);
  Shape os = a.shape();
  os[ax] = len;
  std::vector<Real> out(sp.outer * len * sp.inner);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(av.begin() + static_cast<long>((o * sp.n + start) * sp.inner), len * sp.inner,
                out.begin() + static_cast<long>(o * len * sp.inner));
  return make_result<Real>(os, std::move(out), {a.ptr()}, [sp, start, len](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < len * sp.inner; ++i)
        ga[(o * sp.n + start) * sp.inner + i] += self.grad[o * len * sp.inner + i];
  });
}

/// Select entries along an axis by index (repeats allowed). Backward
/// scatter-adds.
template <typename Real>
Tensor<Real> gather(const Tensor<Real>& a, long axis, const std::vector<std::size_t>& index) {
  const std::size_t ax = detail::norm_axis(axis, a.rank());
  const auto sp = detail::split_at(a.shape(), ax);
  for (auto i : index)
    if (i >= sp.n) throw std::invalid_argument("gather index out of range");
  Shape os = a.shape();
  os[ax] = index.size();
  const std::size_t m = index.size();
  std::vector<Real> out(sp.outer * m * sp.inner);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(av.begin() + static_cast<long>((o * sp.n + index[j]) * sp.inner), sp.inner,
                  out.begin() + static_cast<long>((o * m + j) * sp.inner));
  return make_result<Real>(os, std::move(out), {a.ptr()}, [sp, index](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    const std::size_t m = index.size();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < m; ++j) {
        Real* dst = ga.data() + (o * sp.n + index[j]) * sp.inner;
        const Real* src = self.grad.data() + (o * m + j) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > Real(0) ? v : Real(0);
  return make_result<Real>(a.shape(), std::move(out), {a.ptr()}, [](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (self.value[i] > Real(0)) ga[i] += self.grad[i];
  });
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = std::tanh(v);
  return make_result<Real>(a.shape(), std::move(out), {a.ptr()}, [](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += self.grad[i] * (Real(1) - self.value[i] * self.value[i]);
  });
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a, long axis) {
  const std::size_t ax = detail::norm_axis(axis, a.rank());
  const auto sp = detail::split_at(a.shape(), ax);
  std::vector<Real> out(a.size());
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
      Real mx = av[at(0)];
      for (std::size_t j = 1; j < sp.n; ++j) mx = std::max(mx, av[at(j)]);
      Real z = 0;
      for (std::size_t j = 0; j < sp.n; ++j) z += (out[at(j)] = std::exp(av[at(j)] - mx));
      for (std::size_t j = 0; j < sp.n; ++j) out[at(j)] /= z;
    }
  return make_result<Real>(a.shape(), std::move(out), {a.ptr()}, [sp](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
        Real dot = 0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += self.grad[at(j)] * self.value[at(j)];
        for (std::size_t j = 0; j < sp.n; ++j)
          ga[at(j)] += self.value[at(j)] * (self.grad[at(j)] - dot);
      }
  });
}

/// x / ||x|| along an axis. Throws on a zero vector.
template <typename Real>
Tensor<Real> l2_normalize(const Tensor<Real>& a, long axis) {
  const std::size_t ax = detail::norm_axis(axis, a.rank());
  const auto sp = detail::split_at(a.shape(), ax);
  std::vector<Real> out(a.size());
  std::vector<Real> norms(sp.outer * sp.inner);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
      Real ss = 0;
      for (std::size_t j = 0; j < sp.n; ++j) ss += av[at(j)] * av[at(j)];
      const Real nrm = std::sqrt(ss);
      if (!(nrm > Real(0))) throw std::invalid_argument("l2_normalize of a zero vector");
      norms[o * sp.inner + i] = nrm;
      for (std::size_t j = 0; j < sp.n; ++j) out[at(j)] = av[at(j)] / nrm;
    }
  return make_result<Real>(a.shape(), std::move(out), {a.ptr()}, [sp, norms](Node<Real>& self) {
    auto& ga = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
        Real dot = 0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += self.grad[at(j)] * self.value[at(j)];
        const Real nrm = norms[o * sp.inner + i];
        for (std::size_t j = 0; j < sp.n; ++j)
          ga[at(j)] += (self.grad[at(j)] - self.value[at(j)] * dot) / nrm;
      }
  });
}

// ---------------------------------------------------------------------------
// Pose ops

/// Unit quaternion [4] (w, x, y, z) -> rotation matrix [3,3], using the
/// formula valid for unit input; gradients are those of that formula.
template <typename Real>
Tensor<Real> quat_to_rotation(const Tensor<Real>& q) {
  if (q.shape() != Shape{4}) throw shape_error("quat_to_rotation", q.shape(), Shape{4});
  const Real w = q[0], x = q[1], y = q[2], z = q[3];
  std::vector<Real> r = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
                         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
  return make_result<Real>({3, 3}, std::move(r), {q.ptr()}, [](Node<Real>& self) {
    auto& p = *self.parents[0];
    const Real w = p.value[0], x = p.value[1], y = p.value[2], z = p.value[3];
    const auto& g = self.grad;
    auto& gq = p.grad_buffer();
    // d r_k / d (w, x, y, z), row-major k = 0..8
    const Real d[9][4] = {{0, 0, -4 * y, -4 * z},   {-2 * z, 2 * y, 2 * x, -2 * w},
                          {2 * y, 2 * z, 2 * w, 2 * x}, {2 * z, 2 * y, 2 * x, 2 * w},
                          {0, -4 * x, 0, -4 * z},   {-2 * x, -2 * w, 2 * z, 2 * y},
                          {-2 * y, 2 * z, -2 * w, 2 * x}, {2 * x, 2 * w, 2 * z, 2 * y},
                          {0, -4 * x, -4 * y, 0}};
    for (int k = 0; k < 9; ++k)
      for (int c = 0; c < 4; ++c) gq[c] += g[k] * d[k][c];
  });
}

enum class RowLoss { huber, l1, l2 };

/// Mean over rows of a per-row robust loss of the row's Euclidean norm e:
///   huber: 0.5 e^2 if e <= delta else delta (e - 0.5 delta)
///   l1:    e            (zero subgradient at e = 0)
///   l2:    0.5 e^2
template <typename Real>
Tensor<Real> row_loss(const Tensor<Real>& residuals, RowLoss kind, Real delta) {
  if (residuals.rank() != 2 || residuals.dim(0) == 0)
    throw std::invalid_argument("row_loss expects a nonempty [M, D] tensor, got " +
                                shape_str(residuals.shape()));
  if (kind == RowLoss::huber && !(delta > Real(0)))
    throw std::invalid_argument("huber threshold must be positive");
  const std::size_t m = residuals.dim(0), d = residuals.dim(1);
  const auto rv = residuals.data();
  std::vector<Real> norms(m);
  Real total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    Real ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += rv[i * d + j] * rv[i * d + j];
    const Real e = std::sqrt(ss);
    norms[i] = e;
    switch (kind) {
      case RowLoss::huber: total += e <= delta ? Real(0.5) * ss : delta * (e - Real(0.5) * delta); break;
      case RowLoss::l1: total += e; break;
      case RowLoss::l2: total += Real(0.5) * ss; break;
    }
  }
  const Real inv_m = Real(1) / static_cast<Real>(m);
  return make_result<Real>(Shape{}, std::vector<Real>{total * inv_m}, {residuals.ptr()},
                           [m, d, kind, delta, norms, inv_m](Node<Real>& self) {
    auto& p = *self.parents[0];
    auto& gr = p.grad_buffer();
    const Real g0 = self.grad[0] * inv_m;
    for (std::size_t i = 0; i < m; ++i) {
      const Real e = norms[i];
      Real coef;  // dL/dr = coef * r
      switch (kind) {
        case RowLoss::huber: coef = e <= delta ? Real(1) : delta / e; break;
        case RowLoss::l1: coef = e > Real(0) ? Real(1) / e : Real(0); break;
        default: coef = Real(1); break;
      }
      for (std::size_t j = 0; j < d; ++j) gr[i * d + j] += g0 * coef * p.value[i * d + j];
    }
  });
}

}  // namespace surfreg::ad
