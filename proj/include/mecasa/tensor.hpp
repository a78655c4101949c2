#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mecasa {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when tensor extents disagree. The message names the offending axis.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t grad_pass = 0;
};

}  // namespace detail

/// Dense row-major float64 tensor.
///
/// A Tensor is a handle: copies share storage, `clone()` makes a deep copy.
/// Values are not modified by any op; only optimizers write to parameter
/// storage through `mutable_data()`, and backward passes write gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(double value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  /// Gradient from the last backward pass. Throws if none is populated.
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  /// Clears the gradient. Required between backward passes on a leaf.
  void zero_grad();

  Tensor clone() const;
  /// Deep copy with gradient tracking switched off.
  Tensor detach() const { return clone().set_requires_grad(false); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

class Tape;

struct TapeNode {
  std::string_view op;
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  std::shared_ptr<detail::TensorImpl> output;
  std::function<void(const TapeNode&)> backward;
};

/// Ordered record of differentiable ops executed while the tape is active.
///
/// backward() replays the record in exact reverse order. A tape can be
/// replayed once; `reset()` clears it for reuse. Leaf gradients are never
/// accumulated silently across passes: a leaf whose gradient is still
/// populated from an earlier pass makes backward() throw until zero_grad()
/// is called on it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(TapeNode node);
  /// Registers a leaf so it receives a (possibly zero) gradient even when
  /// the loss does not depend on it.
  void watch(const Tensor& leaf);
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  /// Op names in the order the last backward pass visited them.
  const std::vector<std::string_view>& visit_log() const { return visit_log_; }

 private:
  std::vector<TapeNode> nodes_;
  std::vector<std::shared_ptr<detail::TensorImpl>> watched_;
  std::vector<std::string_view> visit_log_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

namespace detail {

/// Gradient buffer of `impl` for the running backward pass, zero-initialized
/// on first touch.
std::span<double> grad_buffer(TensorImpl& impl);

bool should_record(std::initializer_list<const Tensor*> inputs);
Tensor make_result(Shape shape, std::vector<double> data);
void record(std::string_view op, std::initializer_list<const Tensor*> inputs,
            const Tensor& output, std::function<void(const TapeNode&)> backward);

}  // namespace detail

}  // namespace mecasa
