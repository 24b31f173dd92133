#pragma once

#include <cmath>
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
#include <utility>
#include <vector>

namespace x2t {

// Error hierarchy shared by every module.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ", ";
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

inline void validate_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const void* tape = nullptr;  // producing tape, null for leaves
  std::uint64_t serial = 0;    // 1-based position on the producing tape
};

// Shared handle to a dense row-major array. Copies alias the same storage,
// which is what lets the tape hand gradients back to parameters.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    node_->value.assign(static_cast<std::size_t>(x2t::numel(shape)), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != x2t::numel(shape)) {
      throw ShapeError("element count " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }

  // Gradient storage, allocated zero-filled on first use.
  std::span<T> grad_mut() const {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
    return node_->grad;
  }

  void zero_grad() const { node_->grad.clear(); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  Tensor clone() const {
    return Tensor(shape(), node_->value, false);
  }

  TensorNode<T>& node() const { return *node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <class T>
void check_finite(std::span<const T> xs, std::string_view what) {
  for (const T& x : xs) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite value produced by " + std::string(what));
    }
  }
}

}  // namespace detail

// Ordered record of differentiable operations. Ops append in execution
// order, so reverse traversal is a valid topological order.
template <class T>
class Tape {
 public:
  using Rule = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `output` as produced by `op` from `inputs`. Nothing is recorded
  // when no input requires a gradient.
  Tensor<T> record(std::string_view op, std::initializer_list<Tensor<T>> inputs,
                   Tensor<T> output, Rule rule) {
    detail::check_finite<T>(output.values(), op);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return output;
    if (consumed_) throw TapeError("tape already consumed by backward()");
    auto& node = output.node();
    node.requires_grad = true;
    node.tape = this;
    node.serial = records_.size() + 1;
    records_.push_back(Record{std::string(op), std::vector<Tensor<T>>(inputs), output,
                              std::move(rule)});
    return output;
  }

  std::size_t size() const { return records_.size(); }

  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    names.reserve(records_.size());
    for (const auto& r : records_) names.push_back(r.op);
    return names;
  }

  // Seeds d(loss)/d(loss) = 1 and runs every reachable backward rule once,
  // accumulating (+=) into input gradients.
  void backward(Tensor<T> loss) {
    if (loss.numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + to_string(loss.shape()));
    }
    const auto& ln = loss.node();
    if (ln.tape != this || ln.serial == 0 || ln.serial > records_.size() ||
        !records_[ln.serial - 1].output.same_storage(loss)) {
      throw TapeError("backward: loss was not produced on this tape");
    }
    if (consumed_) throw TapeError("backward: tape already consumed");
    for (const auto& r : records_) {
      for (const auto& in : r.inputs) {
        const auto& n = in.node();
        if (n.tape == this && n.serial >= r.output.node().serial) {
          throw TapeError("backward: cycle detected at op " + r.op);
        }
      }
    }
    consumed_ = true;
    loss.grad_mut()[0] = T(1);
    for (std::size_t i = ln.serial; i-- > 0;) {
      auto& r = records_[i];
      if (!r.output.has_grad()) continue;
      r.rule();
      for (auto& in : r.inputs) {
        if (in.has_grad()) detail::check_finite<T>(in.grad(), r.op + " (backward)");
      }
    }
  }

 private:
  struct Record {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    Rule rule;
  };
  std::vector<Record> records_;
  bool consumed_ = false;
};

}  // namespace x2t
