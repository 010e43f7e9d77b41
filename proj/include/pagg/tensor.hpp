#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "pagg/common.hpp"

namespace pagg {

template <typename T>
class GradTape;

// Dense row-major tensor with an optional gradient buffer. Cheap handle:
// copies share storage. A tensor is written once by the op that creates it
// and treated as immutable afterwards.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false) {
    for (int64_t d : shape) check(d > 0, "Tensor: extents must be positive, got " + shape_str(shape));
    s_ = std::make_shared<Storage>();
    s_->shape = std::move(shape);
    s_->data.assign(size_t(numel_of(s_->shape)), T(0));
    s_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value) {
    Tensor t(Shape{1});
    t.data()[0] = value;
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    check(numel_of(shape) == int64_t(values.size()),
          "Tensor::from_data: shape " + shape_str(shape) + " does not match value count");
    t.s_->shape = std::move(shape);
    t.s_->data = std::move(values);
    t.s_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.s_->data) v = value;
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : t.s_->data) v = T(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  int64_t dim(size_t i) const { return s_->shape[i]; }
  size_t ndim() const { return s_->shape.size(); }
  int64_t numel() const { return int64_t(s_->data.size()); }

  T* data() { return s_->data.data(); }
  const T* data() const { return s_->data.data(); }
  std::vector<T>& vec() { return s_->data; }
  const std::vector<T>& vec() const { return s_->data; }

  T item() const {
    check(numel() == 1, "Tensor::item: tensor is not scalar, shape " + shape_str(shape()));
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool rg) { s_->requires_grad = rg; }

  bool has_grad() const { return s_ && s_->grad != nullptr; }
  T* grad() { return s_->grad->data(); }
  const T* grad() const { return s_->grad->data(); }

  T* ensure_grad() {
    if (!s_->grad) s_->grad = std::make_unique<std::vector<T>>(s_->data.size(), T(0));
    return s_->grad->data();
  }

  void zero_grad() {
    if (s_->grad) std::fill(s_->grad->begin(), s_->grad->end(), T(0));
  }

  void drop_grad() { s_->grad.reset(); }

  bool all_finite() const {
    for (const T& v : s_->data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  void assert_finite(const char* what) const {
    if (!all_finite()) fail(std::string("non-finite values in ") + what);
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  // Bookkeeping used by GradTape to detect detached graphs.
  const void* producer() const { return s_ ? s_->producer : nullptr; }
  void set_producer(const void* tape) { s_->producer = tape; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::unique_ptr<std::vector<T>> grad;
    bool requires_grad = false;
    const void* producer = nullptr;
  };

  std::shared_ptr<Storage> s_;
};

// When enabled, every op validates its output for NaN/Inf.
inline bool& finite_checks() {
  static bool enabled = false;
  return enabled;
}

// Records how close a forward pass came to a subgradient kink (relu zero
// crossings, max-pool ties, top-k selection margins). The gradient-check
// harness uses it to certify that its random inputs are kink-avoiding.
class KinkProbe {
 public:
  KinkProbe() {
    prev_ = active_;
    active_ = this;
  }
  ~KinkProbe() { active_ = prev_; }
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  static KinkProbe* active() { return active_; }

  static void note_relu(double absval) {
    if (active_ && absval < active_->min_relu_abs) active_->min_relu_abs = absval;
  }
  static void note_gap(double gap) {
    if (active_ && gap < active_->min_max_gap) active_->min_max_gap = gap;
  }

  double min_margin() const { return std::min(min_relu_abs, min_max_gap); }

  double min_relu_abs = 1e300;
  double min_max_gap = 1e300;

 private:
  KinkProbe* prev_ = nullptr;
  static thread_local KinkProbe* active_;
};

inline thread_local KinkProbe* KinkProbe::active_ = nullptr;

// Reverse-mode tape. Ops executed while a tape is active append their
// backward closure; execution order is a topological order by construction,
// so backward is a single reverse sweep visiting each node exactly once.
template <typename T>
class GradTape {
 public:
  GradTape() {
    prev_ = active_;
    active_ = this;
  }
  ~GradTape() { active_ = prev_; }

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return active_; }

  void record(Tensor<T>& out, std::function<void()> backward_fn) {
    out.set_requires_grad(true);
    out.set_producer(this);
    nodes_.push_back({out, std::move(backward_fn)});
  }

  size_t size() const { return nodes_.size(); }

  void backward(Tensor<T>& loss) {
    check(loss.defined() && loss.numel() == 1,
          "backward: loss must be a scalar tensor");
    check(!nodes_.empty() && loss.producer() == this,
          "backward: loss is not attached to this tape (detached graph)");
    // intermediate grads belong to the tape: reset them so repeated backward
    // passes from the same graph state are bit-identical
    for (auto& node : nodes_) node.output.zero_grad();
    T* g = loss.ensure_grad();
    g[0] += T(1);
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].fn();
  }

 private:
  struct Node {
    Tensor<T> output;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  GradTape* prev_ = nullptr;
  static thread_local GradTape* active_;
};

template <typename T>
thread_local GradTape<T>* GradTape<T>::active_ = nullptr;

namespace detail {

template <typename T>
inline void finish_op(Tensor<T>& out, const char* name) {
  if (finite_checks()) out.assert_finite(name);
}

template <typename T>
inline bool tracing(std::initializer_list<const Tensor<T>*> ins) {
  if (!GradTape<T>::active()) return false;
  for (const Tensor<T>* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

}  // namespace detail

// --- elementwise ops -------------------------------------------------------

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::tracing<T>({&a, &b})) {
    GradTape<T>::active()->record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const int64_t n = out.numel();
      if (a.requires_grad()) {
        T* ga = a.ensure_grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        T* gb = b.ensure_grad();
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  }
  detail::finish_op(out, "add");
  return out;
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::tracing<T>({&a, &b})) {
    GradTape<T>::active()->record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const int64_t n = out.numel();
      if (a.requires_grad()) {
        T* ga = a.ensure_grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        T* gb = b.ensure_grad();
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * a.data()[i];
      }
    });
  }
  detail::finish_op(out, "mul");
  return out;
}

// out = a * c (scalar broadcast)
template <typename T>
Tensor<T> scale(Tensor<T> a, T c) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (detail::tracing<T>({&a})) {
    GradTape<T>::active()->record(out, [a, out, c]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const T* go = out.grad();
      T* ga = a.ensure_grad();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * c;
    });
  }
  detail::finish_op(out, "scale");
  return out;
}

// out = a + c (scalar broadcast)
template <typename T>
Tensor<T> add_scalar(Tensor<T> a, T c) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  if (detail::tracing<T>({&a})) {
    GradTape<T>::active()->record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const T* go = out.grad();
      T* ga = a.ensure_grad();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
    });
  }
  detail::finish_op(out, "add_scalar");
  return out;
}

// relu backward uses subgradient 0 at the kink.
template <typename T>
Tensor<T> relu(Tensor<T> a);

template <typename T>
Tensor<T> sigmoid(Tensor<T> a) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T x = a.data()[i];
    out.data()[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                              : std::exp(x) / (T(1) + std::exp(x));
  }
  if (detail::tracing<T>({&a})) {
    GradTape<T>::active()->record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const T* go = out.grad();
      T* ga = a.ensure_grad();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) {
        const T y = out.data()[i];
        ga[i] += go[i] * y * (T(1) - y);
      }
    });
  }
  detail::finish_op(out, "sigmoid");
  return out;
}

template <typename T>
Tensor<T> exp_op(Tensor<T> a) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::exp(a.data()[i]);
  if (detail::tracing<T>({&a})) {
    GradTape<T>::active()->record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const T* go = out.grad();
      T* ga = a.ensure_grad();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * out.data()[i];
    });
  }
  detail::finish_op(out, "exp");
  return out;
}

template <typename T>
Tensor<T> log_op(Tensor<T> a) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::log(a.data()[i]);
  if (detail::tracing<T>({&a})) {
    GradTape<T>::active()->record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const T* go = out.grad();
      T* ga = a.ensure_grad();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i] / a.data()[i];
    });
  }
  detail::finish_op(out, "log");
  return out;
}

template <typename T>
Tensor<T> relu(Tensor<T> a) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  if (KinkProbe::active())
    for (int64_t i = 0; i < n; ++i) KinkProbe::note_relu(std::abs(double(a.data()[i])));
  if (detail::tracing<T>({&a})) {
    GradTape<T>::active()->record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const T* go = out.grad();
      T* ga = a.ensure_grad();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i)
        if (a.data()[i] > T(0)) ga[i] += go[i];
    });
  }
  detail::finish_op(out, "relu");
  return out;
}

template <typename T>
Tensor<T> sum(Tensor<T> a) {
  Tensor<T> out(Shape{1});
  T acc = T(0);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += a.data()[i];
  out.data()[0] = acc;
  if (detail::tracing<T>({&a})) {
    GradTape<T>::active()->record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.requires_grad()) return;
      const T g = out.grad()[0];
      T* ga = a.ensure_grad();
      const int64_t n = a.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  detail::finish_op(out, "sum");
  return out;
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  return add(a, scale(b, T(-1)));
}

}  // namespace pagg
