#include "mecasa/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace mecasa {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_current_pass = 0;
std::atomic<std::uint64_t> g_pass_counter{0};

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) {
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] == 0) throw ShapeError("tensor axis " + std::to_string(i) + " has zero extent");
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->data.assign(mecasa::numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] == 0) throw ShapeError("tensor axis " + std::to_string(i) + " has zero extent");
  if (mecasa::numel(shape) != data.size())
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(mecasa::numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::from_impl(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, shape is " + to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw std::logic_error("undefined tensor");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_ || impl_->is_leaf; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no populated gradient");
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  auto g = grad();
  return Tensor(shape(), std::vector<double>(g.begin(), g.end()));
}

void Tensor::zero_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad_pass = 0;
  }
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  Tensor t(impl_->shape, impl_->data);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

// ---------------------------------------------------------------------------

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void Tape::record(TapeNode node) {
  if (consumed_) throw std::logic_error("recording onto a consumed tape; call reset() first");
  nodes_.push_back(std::move(node));
}

void Tape::watch(const Tensor& leaf) {
  if (!leaf.defined()) throw std::invalid_argument("cannot watch an undefined tensor");
  watched_.push_back(leaf.impl());
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward() called twice on the same tape; call reset() first");
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  consumed_ = true;
  visit_log_.clear();

  const std::uint64_t pass = ++g_pass_counter;
  const std::uint64_t saved = g_current_pass;
  g_current_pass = pass;
  try {
    if (loss.requires_grad()) detail::grad_buffer(*loss.impl())[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      visit_log_.push_back(it->op);
      if (it->output->grad_pass != pass) continue;  // no gradient reached this op
      it->backward(*it);
    }
    // Leaves reached by no gradient still get an explicit zero gradient.
    for (const auto& node : nodes_)
      for (const auto& in : node.inputs)
        if (in->requires_grad && in->is_leaf) detail::grad_buffer(*in);
    for (const auto& w : watched_)
      if (w->requires_grad) detail::grad_buffer(*w);
  } catch (...) {
    g_current_pass = saved;
    throw;
  }
  g_current_pass = saved;
}

void Tape::reset() {
  nodes_.clear();
  watched_.clear();
  visit_log_.clear();
  consumed_ = false;
}

namespace detail {

std::span<double> grad_buffer(TensorImpl& impl) {
  if (g_current_pass == 0) throw std::logic_error("gradient buffer requested outside backward()");
  if (impl.grad_pass != g_current_pass) {
    if (impl.is_leaf && !impl.grad.empty())
      throw std::logic_error("leaf gradient still populated from a previous backward(); call zero_grad()");
    impl.grad.assign(impl.data.size(), 0.0);
    impl.grad_pass = g_current_pass;
  }
  return impl.grad;
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> data) { return Tensor(std::move(shape), std::move(data)); }

void record(std::string_view op, std::initializer_list<const Tensor*> inputs, const Tensor& output,
            std::function<void(const TapeNode&)> backward) {
  if (!should_record(inputs)) return;
  TapeNode node;
  node.op = op;
  for (const Tensor* t : inputs)
    if (t && t->defined()) node.inputs.push_back(t->impl());
  node.output = output.impl();
  node.output->requires_grad = true;
  node.output->is_leaf = false;
  node.backward = std::move(backward);
  g_active_tape->record(std::move(node));
}

}  // namespace detail

}  // namespace mecasa
