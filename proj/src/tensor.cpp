#include "rrp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "rrp/errors.hpp"

namespace rrp {

namespace {

thread_local bool g_grad_enabled = true;
thread_local detail::PatternProbe* g_probe = nullptr;

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_string(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw DimensionError("index out of range for " + shape_string(shape()));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() { return detail::grad_buffer(*this); }

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

const std::shared_ptr<detail::OpNode>& Tensor::node() const { return impl_->node; }

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

void Tensor::backward() const {
  if (size() != 1) throw DimensionError("backward() needs a single-element tensor, got " + shape_string(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS: parents land after all of their inputs, so the
  // reversed list visits every node before any of its inputs.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, next_input] = stack.back();
    if (cur->node && next_input < cur->node->inputs.size()) {
      auto* child = cur->node->inputs[next_input++].impl();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(cur);
    stack.pop_back();
  }

  // Intermediate gradients are scratch space for this pass; only leaves accumulate.
  for (auto* t : order) {
    if (t->node) t->grad.clear();
  }
  detail::grad_buffer(*this)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* cur = *it;
    if (!cur->node || cur->grad.empty()) continue;
    cur->node->backward(cur->grad);
    for (const auto& in : cur->node->inputs) {
      if (in.requires_grad() && !all_finite(in.grad())) {
        throw NumericError("non-finite gradient produced by backward of " + cur->node->kind);
      }
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

FaultInjection& fault_injection() {
  static FaultInjection faults;
  return faults;
}

namespace detail {

Tensor make_result(const char* kind, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward) {
  if (!all_finite(data)) throw NumericError(std::string("non-finite output from ") + kind);
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const Tensor& t) { return t.requires_grad(); });
  Tensor out(std::move(shape), std::move(data), track);
  if (track) {
    auto node = std::make_shared<OpNode>();
    node->kind = kind;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
  }
  return out;
}

std::span<double> grad_buffer(const Tensor& t) {
  auto* impl = t.impl();
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

void accumulate_grad(const Tensor& t, std::span<const double> delta) {
  auto g = grad_buffer(t);
  if (g.size() != delta.size()) throw DimensionError("gradient size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

PatternProbe* active_probe() { return g_probe; }
void set_active_probe(PatternProbe* probe) { g_probe = probe; }

}  // namespace detail

}  // namespace rrp
