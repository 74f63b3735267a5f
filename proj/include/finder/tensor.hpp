#pragma once

// Minimal reverse-mode differentiable tensor engine.
//
// Tensors are reference-counted dense arrays. Operations on tensors that
// require gradients are recorded on the thread's active Tape; Tape::backward
// replays the recorded adjoints in reverse order. The primitive set is fixed:
// every model computation composes the functions in this header.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace finder {

using Shape = std::vector<std::size_t>;
using Index = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

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

namespace detail {
inline bool& strict_flag() {
  thread_local bool on = false;
  return on;
}
}  // namespace detail

// When enabled, every primitive rejects non-finite inputs.
inline void set_strict_checks(bool on) { detail::strict_flag() = on; }
inline bool strict_checks() { return detail::strict_flag(); }

// Storage aligned to Eigen's packet size, so vectorised kernels take the same
// path (and round the same way) no matter where malloc puts a buffer.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct TensorImpl {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Buffer<T> data(numel(shape), T(0));
    return from_buffer(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor from_data(Shape shape, const std::vector<T>& data, bool requires_grad = false) {
    return from_buffer(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad);
  }

  static Tensor from_buffer(Shape shape, Buffer<T> data, bool requires_grad = false) {
    for (auto d : shape)
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
    if (numel(shape) != data.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool is_leaf() const { return impl_->leaf; }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return impl_->data[0];
  }

  T operator()(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape[1] + c]; }

  // Value copy with no gradient history.
  Tensor detach() const { return from_buffer(shape(), impl_->data, false); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Ordered record of primitive applications and their adjoint closures.
template <typename T>
class Tape {
 public:
  using Adjoint = std::function<void()>;

  void record(std::string_view op, std::shared_ptr<TensorImpl<T>> out, Adjoint adjoint) {
    entries_.push_back({std::string(op), std::move(out), std::move(adjoint)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  std::vector<std::string> ops() const {
    std::vector<std::string> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.push_back(e.op);
    return names;
  }

  // Populates grads of every requires_grad leaf reachable from `loss`.
  // Leaf grads accumulate across calls; intermediate grads are reset.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const Entry& e) { return e.out == loss.impl(); });
    if (it == entries_.end()) throw std::invalid_argument("backward: loss is not recorded on this tape");
    for (auto& e : entries_) e.out->grad.clear();
    loss.impl()->grad.assign(1, T(1));
    for (auto e = entries_.rbegin(); e != entries_.rend(); ++e) {
      if (e->out->grad.empty()) continue;
      e->adjoint();
    }
  }

 private:
  struct Entry {
    std::string op;
    std::shared_ptr<TensorImpl<T>> out;
    Adjoint adjoint;
  };
  std::vector<Entry> entries_;
};

template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

// Makes `tape` the recording target for this thread within the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> vec_map(std::span<T> s) {
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}
template <typename T>
Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> vec_map(std::span<const T> s) {
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

template <typename T>
Buffer<T>& grad_ref(TensorImpl<T>& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), T(0));
  return t.grad;
}

template <typename T>
void check_finite(std::string_view op, const Tensor<T>& t) {
  if (!strict_checks()) return;
  for (T v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
}

template <typename T>
Tensor<T> make_output(Shape shape, Buffer<T> data, std::initializer_list<const Tensor<T>*> inputs) {
  auto out = Tensor<T>::from_buffer(std::move(shape), std::move(data));
  bool needs = false;
  for (auto* in : inputs) needs = needs || in->requires_grad();
  if (needs && active_tape<T>() != nullptr) {
    out.impl()->requires_grad = true;
    out.impl()->leaf = false;
  }
  return out;
}

template <typename T>
bool recording(const Tensor<T>& out) {
  return out.requires_grad() && !out.is_leaf();
}

[[noreturn]] inline void mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(std::string_view op, const Shape& s, std::size_t rank) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

// Numpy-style broadcast of up to rank-4 shapes.
struct Broadcast {
  static constexpr std::size_t kMaxRank = 4;
  Shape out;
  std::size_t rank = 0;
  std::size_t dims[kMaxRank] = {1, 1, 1, 1};
  std::size_t stride_a[kMaxRank] = {0, 0, 0, 0};
  std::size_t stride_b[kMaxRank] = {0, 0, 0, 0};
  bool same = false;

  Broadcast(std::string_view op, const Shape& a, const Shape& b) {
    if (a == b) same = true;
    rank = std::max(a.size(), b.size());
    if (rank > kMaxRank) throw ShapeError(std::string(op) + ": rank above 4 unsupported");
    out.assign(rank, 1);
    Shape pa(rank - a.size(), 1), pb(rank - b.size(), 1);
    pa.insert(pa.end(), a.begin(), a.end());
    pb.insert(pb.end(), b.begin(), b.end());
    for (std::size_t i = 0; i < rank; ++i) {
      if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) mismatch(op, a, b);
      out[i] = std::max(pa[i], pb[i]);
    }
    std::size_t sa = 1, sb = 1;
    for (std::size_t i = rank; i-- > 0;) {
      dims[i] = out[i];
      stride_a[i] = pa[i] == 1 ? 0 : sa;
      stride_b[i] = pb[i] == 1 ? 0 : sb;
      sa *= pa[i];
      sb *= pb[i];
    }
  }

  // Calls f(out_index, a_index, b_index) over every output element.
  template <typename F>
  void for_each(F&& f) const {
    if (same) {
      const std::size_t n = numel(out);
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    }
    std::size_t d[kMaxRank] = {1, 1, 1, 1};
    std::size_t sa[kMaxRank] = {0, 0, 0, 0}, sb[kMaxRank] = {0, 0, 0, 0};
    const std::size_t off = kMaxRank - rank;
    for (std::size_t i = 0; i < rank; ++i) {
      d[off + i] = dims[i];
      sa[off + i] = stride_a[i];
      sb[off + i] = stride_b[i];
    }
    // Constant inner strides let the innermost loop vectorise.
    auto run = [&](auto inner_a, auto inner_b) {
      std::size_t o = 0;
      for (std::size_t i0 = 0; i0 < d[0]; ++i0)
        for (std::size_t i1 = 0; i1 < d[1]; ++i1)
          for (std::size_t i2 = 0; i2 < d[2]; ++i2, o += d[3]) {
            const std::size_t ia = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
            const std::size_t ib = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
            for (std::size_t i3 = 0; i3 < d[3]; ++i3) f(o + i3, ia + i3 * inner_a, ib + i3 * inner_b);
          }
    };
    using One = std::integral_constant<std::size_t, 1>;
    using Zero = std::integral_constant<std::size_t, 0>;
    if (sa[3] == 1 && sb[3] == 1) run(One{}, One{});
    else if (sa[3] == 1 && sb[3] == 0) run(One{}, Zero{});
    else if (sa[3] == 0 && sb[3] == 1) run(Zero{}, One{});
    else run(sa[3], sb[3]);
  }
};

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

template <typename T>
void same_shape_adjoint(TensorImpl<T>& a, TensorImpl<T>& b, const T* g, BinaryKind kind) {
  const std::size_t n = a.data.size();
  const T* va = a.data.data();
  const T* vb = b.data.data();
  if (a.requires_grad) {
    T* ga = grad_ref(a).data();
    switch (kind) {
      case BinaryKind::kAdd:
      case BinaryKind::kSub: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i]; break;
      case BinaryKind::kMul: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i]; break;
      case BinaryKind::kDiv: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / vb[i]; break;
    }
  }
  if (b.requires_grad) {
    T* gb = grad_ref(b).data();
    switch (kind) {
      case BinaryKind::kAdd: for (std::size_t i = 0; i < n; ++i) gb[i] += g[i]; break;
      case BinaryKind::kSub: for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i]; break;
      case BinaryKind::kMul: for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * va[i]; break;
      case BinaryKind::kDiv: for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]); break;
    }
  }
}

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, std::string_view op) {
  check_finite(op, a);
  check_finite(op, b);
  Broadcast bc(op, a.shape(), b.shape());
  Buffer<T> out(numel(bc.out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (bc.same) {
    const std::size_t n = out.size();
    T* po = out.data();
    switch (kind) {
      case BinaryKind::kAdd: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case BinaryKind::kSub: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case BinaryKind::kMul: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
      case BinaryKind::kDiv: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
    }
  } else {
    switch (kind) {
      case BinaryKind::kAdd: bc.for_each([&](auto o, auto i, auto j) { out[o] = pa[i] + pb[j]; }); break;
      case BinaryKind::kSub: bc.for_each([&](auto o, auto i, auto j) { out[o] = pa[i] - pb[j]; }); break;
      case BinaryKind::kMul: bc.for_each([&](auto o, auto i, auto j) { out[o] = pa[i] * pb[j]; }); break;
      case BinaryKind::kDiv: bc.for_each([&](auto o, auto i, auto j) { out[o] = pa[i] / pb[j]; }); break;
    }
  }
  auto result = make_output<T>(bc.out, std::move(out), {&a, &b});
  if (recording(result)) {
    active_tape<T>()->record(op, result.impl(), [ai = a.impl(), bi = b.impl(), oi = result.impl().get(), bc, kind]() {
      const T* g = oi->grad.data();
      const T* va = ai->data.data();
      const T* vb = bi->data.data();
      if (bc.same) {
        same_shape_adjoint(*ai, *bi, g, kind);
        return;
      }
      if (ai->requires_grad) {
        T* ga = grad_ref(*ai).data();
        switch (kind) {
          case BinaryKind::kAdd:
          case BinaryKind::kSub: bc.for_each([&](auto o, auto i, auto) { ga[i] += g[o]; }); break;
          case BinaryKind::kMul: bc.for_each([&](auto o, auto i, auto j) { ga[i] += g[o] * vb[j]; }); break;
          case BinaryKind::kDiv: bc.for_each([&](auto o, auto i, auto j) { ga[i] += g[o] / vb[j]; }); break;
        }
      }
      if (bi->requires_grad) {
        T* gb = grad_ref(*bi).data();
        switch (kind) {
          case BinaryKind::kAdd: bc.for_each([&](auto o, auto, auto j) { gb[j] += g[o]; }); break;
          case BinaryKind::kSub: bc.for_each([&](auto o, auto, auto j) { gb[j] -= g[o]; }); break;
          case BinaryKind::kMul: bc.for_each([&](auto o, auto i, auto j) { gb[j] += g[o] * va[i]; }); break;
          case BinaryKind::kDiv:
            bc.for_each([&](auto o, auto i, auto j) { gb[j] -= g[o] * va[i] / (vb[j] * vb[j]); });
            break;
        }
      }
    });
  }
  return result;
}

}  // namespace detail

// (n x k) . (k x m)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  if (a.dim(1) != b.dim(0)) detail::mismatch("matmul", a.shape(), b.shape());
  detail::check_finite("matmul", a);
  detail::check_finite("matmul", b);
  const auto n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Buffer<T> out(n * m);
  detail::MatMap<T>(out.data(), n, m).noalias() =
      detail::ConstMatMap<T>(a.data().data(), n, k) * detail::ConstMatMap<T>(b.data().data(), k, m);
  auto result = detail::make_output<T>({n, m}, std::move(out), {&a, &b});
  if (detail::recording(result)) {
    active_tape<T>()->record("matmul", result.impl(), [ai = a.impl(), bi = b.impl(), oi = result.impl().get(), n, k, m]() {
      detail::ConstMatMap<T> g(oi->grad.data(), n, m);
      if (ai->requires_grad)
        detail::MatMap<T>(detail::grad_ref(*ai).data(), n, k).noalias() +=
            g * detail::ConstMatMap<T>(bi->data.data(), k, m).transpose();
      if (bi->requires_grad)
        detail::MatMap<T>(detail::grad_ref(*bi).data(), k, m).noalias() +=
            detail::ConstMatMap<T>(ai->data.data(), n, k).transpose() * g;
    });
  }
  return result;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::kAdd, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::kSub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::kMul, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::kDiv, "div");
}

// a * scale + shift, element-wise.
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T scale, T shift) {
  detail::check_finite("affine", a);
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * scale + shift;
  auto result = detail::make_output<T>(a.shape(), std::move(out), {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("affine", result.impl(), [ai = a.impl(), oi = result.impl().get(), scale]() {
      auto& ga = detail::grad_ref(*ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * scale;
    });
  }
  return result;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  detail::check_finite("exp", a);
  Buffer<T> out(a.size());
  detail::vec_map(std::span<T>(out)) = detail::vec_map(a.data()).array().exp().matrix();
  auto result = detail::make_output<T>(a.shape(), std::move(out), {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("exp", result.impl(), [ai = a.impl(), oi = result.impl().get()]() {
      auto& ga = detail::grad_ref(*ai);
      const T* g = oi->grad.data();
      const T* y = oi->data.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
    });
  }
  return result;
}

// Subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  detail::check_finite("relu", a);
  Buffer<T> out(a.size());
  const T* x = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  auto result = detail::make_output<T>(a.shape(), std::move(out), {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("relu", result.impl(), [ai = a.impl(), oi = result.impl().get()]() {
      auto& ga = detail::grad_ref(*ai);
      const T* x = ai->data.data();
      const T* g = oi->grad.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += x[i] > T(0) ? g[i] : T(0);
    });
  }
  return result;
}

// Sum of a rank-2 tensor over `axis`, keeping the reduced axis as size 1.
template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis) {
  detail::require_rank("sum", a.shape(), 2);
  if (axis > 1) throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
  detail::check_finite("sum", a);
  const auto r = a.dim(0), c = a.dim(1);
  Shape shape = axis == 0 ? Shape{1, c} : Shape{r, 1};
  Buffer<T> out(numel(shape), T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += a.data()[i * c + j];
  auto result = detail::make_output<T>(shape, std::move(out), {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("sum", result.impl(), [ai = a.impl(), oi = result.impl().get(), r, c, axis]() {
      auto& ga = detail::grad_ref(*ai);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += oi->grad[axis == 0 ? j : i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
  detail::require_rank("mean", a.shape(), 2);
  if (axis > 1) throw ShapeError("mean: axis out of range");
  return affine(sum(a, axis), T(1) / static_cast<T>(a.dim(axis)), T(0));
}

// Sum over every element, shape [1].
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  detail::check_finite("sum_all", a);
  const T acc = detail::vec_map(a.data()).sum();
  auto result = detail::make_output<T>({1}, {acc}, {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("sum_all", result.impl(), [ai = a.impl(), oi = result.impl().get()]() {
      auto& ga = detail::grad_ref(*ai);
      const T g0 = oi->grad[0];
      for (auto& g : ga) g += g0;
    });
  }
  return result;
}

// Sum of squared entries.
template <typename T>
Tensor<T> sum_squares(const Tensor<T>& a) {
  detail::check_finite("sum_squares", a);
  const T acc = detail::vec_map(a.data()).squaredNorm();
  auto result = detail::make_output<T>({1}, {acc}, {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("sum_squares", result.impl(), [ai = a.impl(), oi = result.impl().get()]() {
      auto& ga = detail::grad_ref(*ai);
      const T g2 = T(2) * oi->grad[0];
      const T* x = ai->data.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g2 * x[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return affine(sum_all(a), T(1) / static_cast<T>(a.size()), T(0));
}

// Concatenation of rank-2 tensors with equal row counts along the last axis.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat", p.shape(), 2);
    if (p.dim(0) != rows) detail::mismatch("concat", parts.front().shape(), p.shape());
    detail::check_finite("concat", p);
    cols += p.dim(1);
  }
  Buffer<T> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto pc = p.dim(1);
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(p.data().data() + i * pc, pc, out.data() + i * cols + offset);
    offset += pc;
  }
  auto result = Tensor<T>::from_buffer({rows, cols}, std::move(out));
  bool needs = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (needs && active_tape<T>() != nullptr) {
    result.impl()->requires_grad = true;
    result.impl()->leaf = false;
    std::vector<std::shared_ptr<TensorImpl<T>>> ins;
    for (const auto& p : parts) ins.push_back(p.impl());
    active_tape<T>()->record("concat", result.impl(), [ins, oi = result.impl().get(), rows, cols]() {
      std::size_t off = 0;
      for (const auto& in : ins) {
        const auto pc = in->shape[1];
        if (in->requires_grad) {
          auto& g = detail::grad_ref(*in);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += oi->grad[i * cols + off + j];
        }
        off += pc;
      }
    });
  }
  return result;
}

// out[r] = a[index[r]] for a rank-2 `a`.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const Index& index) {
  detail::require_rank("gather_rows", a.shape(), 2);
  if (index.empty()) throw ShapeError("gather_rows: empty index list");
  detail::check_finite("gather_rows", a);
  const auto rows = a.dim(0), cols = a.dim(1);
  Buffer<T> out(index.size() * cols);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows)
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of range for " + shape_str(a.shape()));
    std::copy_n(a.data().data() + index[r] * cols, cols, out.data() + r * cols);
  }
  auto result = detail::make_output<T>({index.size(), cols}, std::move(out), {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("gather_rows", result.impl(), [ai = a.impl(), oi = result.impl().get(), index, cols]() {
      auto& ga = detail::grad_ref(*ai);
      for (std::size_t r = 0; r < index.size(); ++r)
        for (std::size_t j = 0; j < cols; ++j) ga[index[r] * cols + j] += oi->grad[r * cols + j];
    });
  }
  return result;
}

// Row-wise mean grouped by segment id; segments with no rows yield zeros.
template <typename T>
Tensor<T> segment_mean(const Tensor<T>& a, const Index& ids, std::size_t num_segments) {
  detail::require_rank("segment_mean", a.shape(), 2);
  if (ids.size() != a.dim(0))
    throw ShapeError("segment_mean: " + std::to_string(ids.size()) + " ids for " + shape_str(a.shape()));
  if (num_segments == 0) throw ShapeError("segment_mean: zero segments");
  detail::check_finite("segment_mean", a);
  const auto cols = a.dim(1);
  std::vector<std::size_t> counts(num_segments, 0);
  for (auto s : ids) {
    if (s >= num_segments) throw ShapeError("segment_mean: segment id " + std::to_string(s) + " out of range");
    ++counts[s];
  }
  Buffer<T> out(num_segments * cols, T(0));
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t j = 0; j < cols; ++j) out[ids[r] * cols + j] += a.data()[r * cols + j];
  for (std::size_t s = 0; s < num_segments; ++s)
    if (counts[s] > 0)
      for (std::size_t j = 0; j < cols; ++j) out[s * cols + j] /= static_cast<T>(counts[s]);
  auto result = detail::make_output<T>({num_segments, cols}, std::move(out), {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("segment_mean", result.impl(), [ai = a.impl(), oi = result.impl().get(), ids, counts, cols]() {
      auto& ga = detail::grad_ref(*ai);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        const T inv = T(1) / static_cast<T>(counts[ids[r]]);
        for (std::size_t j = 0; j < cols; ++j) ga[r * cols + j] += oi->grad[ids[r] * cols + j] * inv;
      }
    });
  }
  return result;
}

// Stride-1 "same"-padded 1-D convolution.
// x: [batch, length, in_channels], w: [kernel, in_channels, out_channels],
// b: [out_channels]  ->  [batch, length, out_channels].
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank("conv1d", x.shape(), 3);
  detail::require_rank("conv1d", w.shape(), 3);
  detail::require_rank("conv1d", b.shape(), 1);
  const auto batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
  const auto k = w.dim(0), cout = w.dim(2);
  if (w.dim(1) != cin) detail::mismatch("conv1d", x.shape(), w.shape());
  if (b.dim(0) != cout) detail::mismatch("conv1d", w.shape(), b.shape());
  if (k % 2 == 0) throw ShapeError("conv1d: kernel width must be odd for same padding, got " + std::to_string(k));
  detail::check_finite("conv1d", x);
  detail::check_finite("conv1d", w);
  detail::check_finite("conv1d", b);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto rows = batch * len, width = k * cin;

  auto im2col = [=](const T* src) {
    detail::RowMat<T> cols = detail::RowMat<T>::Zero(rows, width);
    for (std::size_t bi = 0; bi < batch; ++bi)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t kk = 0; kk < k; ++kk) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(kk) - pad;
          if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
          for (std::size_t c = 0; c < cin; ++c)
            cols(bi * len + l, kk * cin + c) = src[(bi * len + pos) * cin + c];
        }
    return cols;
  };

  detail::RowMat<T> cols = im2col(x.data().data());
  Buffer<T> out(rows * cout);
  detail::MatMap<T> y(out.data(), rows, cout);
  y.noalias() = cols * detail::ConstMatMap<T>(w.data().data(), width, cout);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), cout);
  auto result = detail::make_output<T>({batch, len, cout}, std::move(out), {&x, &w, &b});
  if (detail::recording(result)) {
    active_tape<T>()->record("conv1d", result.impl(),
                             [xi = x.impl(), wi = w.impl(), bi_ = b.impl(), oi = result.impl().get(), im2col, batch, len,
                              cin, k, cout, pad, rows, width]() {
      detail::ConstMatMap<T> g(oi->grad.data(), rows, cout);
      if (wi->requires_grad) {
        detail::RowMat<T> cols = im2col(xi->data.data());
        detail::MatMap<T>(detail::grad_ref(*wi).data(), width, cout).noalias() += cols.transpose() * g;
      }
      if (bi_->requires_grad) {
        auto& gb = detail::grad_ref(*bi_);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cout; ++c) gb[c] += g(r, c);
      }
      if (xi->requires_grad) {
        detail::RowMat<T> dcols = g * detail::ConstMatMap<T>(wi->data.data(), width, cout).transpose();
        auto& gx = detail::grad_ref(*xi);
        for (std::size_t bb = 0; bb < batch; ++bb)
          for (std::size_t l = 0; l < len; ++l)
            for (std::size_t kk = 0; kk < k; ++kk) {
              const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(kk) - pad;
              if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
              for (std::size_t c = 0; c < cin; ++c)
                gx[(bb * len + pos) * cin + c] += dcols(bb * len + l, kk * cin + c);
            }
      }
    });
  }
  return result;
}

// Same data, new shape.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) detail::mismatch("reshape", a.shape(), shape);
  Buffer<T> out(a.data().begin(), a.data().end());
  auto result = detail::make_output<T>(std::move(shape), std::move(out), {&a});
  if (detail::recording(result)) {
    active_tape<T>()->record("reshape", result.impl(), [ai = a.impl(), oi = result.impl().get()]() {
      auto& ga = detail::grad_ref(*ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return affine(a, s, T(0)); }
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return affine(a, s, T(0)); }
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return affine(a, T(1), s); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return affine(a, T(-1), T(0)); }

// |a| composed from the closed primitive set.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return relu(a) + relu(-a);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  auto* tape = active_tape<T>();
  if (tape == nullptr) throw std::logic_error("backward: no active tape on this thread");
  tape->backward(loss);
}

}  // namespace finder
