#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitc {

inline std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

// Dense array with shape metadata and a lazily allocated gradient buffer.
// Copies are shallow: they share the underlying storage, so a tensor handle
// can be captured inside backward closures without duplicating data.
template <typename Real>
class DiffTensor {
 public:
  DiffTensor() = default;

  explicit DiffTensor(std::vector<int64_t> shape) : s_(std::make_shared<Storage>()) {
    s_->shape = std::move(shape);
    int64_t n = 1;
    for (int64_t d : s_->shape) {
      if (d < 0) throw std::invalid_argument("DiffTensor: negative dimension in " + shape_str(s_->shape));
      n *= d;
    }
    s_->values.assign(static_cast<size_t>(n), Real(0));
  }

  static DiffTensor zeros(std::vector<int64_t> shape) { return DiffTensor(std::move(shape)); }

  static DiffTensor scalar(Real v) {
    DiffTensor t({1});
    t.data()[0] = v;
    return t;
  }

  static DiffTensor from(std::vector<int64_t> shape, std::vector<Real> values) {
    DiffTensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = std::move(shape);
    int64_t n = 1;
    for (int64_t d : t.s_->shape) n *= d;
    if (static_cast<int64_t>(values.size()) != n)
      throw std::invalid_argument("DiffTensor::from: value count does not match shape " + shape_str(t.s_->shape));
    t.s_->values = std::move(values);
    return t;
  }

  bool defined() const { return static_cast<bool>(s_); }
  const std::vector<int64_t>& shape() const { return s_->shape; }
  int64_t rank() const { return static_cast<int64_t>(s_->shape.size()); }
  int64_t dim(int64_t i) const { return s_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(s_->values.size()); }

  // rank-1 tensors are treated as a single row where a matrix view is needed
  int64_t rows() const { return rank() <= 1 ? 1 : s_->shape[0]; }
  int64_t cols() const { return rank() == 0 ? 1 : s_->shape.back(); }

  Real* data() { return s_->values.data(); }
  const Real* data() const { return s_->values.data(); }
  std::vector<Real>& values() { return s_->values; }
  const std::vector<Real>& values() const { return s_->values; }

  Real& at(int64_t r, int64_t c) { return s_->values[static_cast<size_t>(r * cols() + c)]; }
  Real at(int64_t r, int64_t c) const { return s_->values[static_cast<size_t>(r * cols() + c)]; }

  bool grad_allocated() const { return !s_->grad.empty(); }

  // allocates (zero-filled) on first use; same shape as values
  Real* grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), Real(0));
    return s_->grad.data();
  }
  const std::vector<Real>& grad_values() const { return s_->grad; }

  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), Real(0));
  }

  // deep copy (fresh storage, gradient not copied)
  DiffTensor clone() const {
    DiffTensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = s_->shape;
    t.s_->values = s_->values;
    return t;
  }

  bool same_storage(const DiffTensor& o) const { return s_ == o.s_; }

 private:
  struct Storage {
    std::vector<int64_t> shape;
    std::vector<Real> values;
    std::vector<Real> grad;
  };
  std::shared_ptr<Storage> s_;
};

// Ordered record of executed primitive ops. Replaying adjoints walks the
// record exactly once in reverse execution order. One graph is
// single-threaded; independent graphs over shared read-only weights may run
// concurrently.
template <typename Real>
class Graph {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

  void track(std::initializer_list<DiffTensor<Real>> tensors) {
    for (const auto& t : tensors) tracked_.push_back(t);
  }
  void track(const std::vector<DiffTensor<Real>>& tensors) {
    for (const auto& t : tensors) tracked_.push_back(t);
  }

  size_t num_ops() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    tracked_.clear();
  }

  // zero-grad reset for every tensor touched by this graph
  void zero_grads() {
    for (auto& t : tracked_) t.zero_grad();
  }

  // Seeds d(out)/d(out) = 1 and accumulates adjoints into every input's grad
  // buffer. Requires a scalar output. May be called repeatedly; use
  // zero_grad resets between calls for fresh gradients.
  void backward(DiffTensor<Real>& out) {
    if (out.numel() != 1)
      throw std::invalid_argument("Graph::backward: output must be scalar, got " + shape_str(out.shape()));
    out.grad()[0] += Real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<DiffTensor<Real>> tracked_;
};

}  // namespace vitc
