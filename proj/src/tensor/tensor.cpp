#include "battta/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "battta/errors.hpp"

namespace battta {
namespace {
thread_local bool grad_disabled = false;
thread_local std::string fault_op;
thread_local double fault_factor = 1.0;

// Runs a node's backward with its gradient contribution scaled by `factor`.
void faulty_backward(TensorImpl& t, Node& node, double factor) {
  std::vector<std::vector<double>> before;
  for (auto& in : node.inputs) before.push_back(in.impl().grad);
  node.backward(t, node.inputs);
  std::unordered_set<TensorImpl*> done;
  for (std::size_t i = 0; i < node.inputs.size(); ++i) {
    TensorImpl& in = node.inputs[i].impl();
    if (!done.insert(&in).second || in.grad.empty()) continue;
    for (std::size_t k = 0; k < in.grad.size(); ++k) {
      const double old = before[i].empty() ? 0.0 : before[i][k];
      in.grad[k] = old + factor * (in.grad[k] - old);
    }
  }
}
}  // namespace

GradientFaultGuard::GradientFaultGuard(std::string op, double factor) {
  fault_op = std::move(op);
  fault_factor = factor;
}
GradientFaultGuard::~GradientFaultGuard() {
  fault_op.clear();
  fault_factor = 1.0;
}

NoGradGuard::NoGradGuard() : previous_(grad_disabled) { grad_disabled = true; }
NoGradGuard::~NoGradGuard() { grad_disabled = previous_; }
bool NoGradGuard::enabled() { return grad_disabled; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<double>(numel(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_op(Shape shape, std::vector<double> data, std::string op,
                       std::vector<Tensor> inputs, Node::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  bool needs = !grad_disabled && std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    auto node = std::make_shared<Node>();
    node->op = std::move(op);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl_->grad_fn = std::move(node);
    out.impl_->requires_grad = true;
  }
  return out;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data, impl_->requires_grad);
  t.impl_->grad = impl_->grad;
  return t;
}

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) const {
  auto buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tensor::backward() const {
  if (impl_->data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) {
    throw ContractError("backward() on a tensor that does not require a gradient");
  }
  if (impl_->grad_fn && impl_->grad_fn->consumed) {
    throw ContractError("backward() called twice on the same graph; rebuild the forward pass first");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<TensorImpl*> order;
  std::vector<Tensor> keep;  // pins impls for the duration of the sweep
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    Tensor t;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({*this, 0});
  seen.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    TensorImpl& ti = f.t.impl();
    if (ti.grad_fn && f.next < ti.grad_fn->inputs.size()) {
      const Tensor& in = ti.grad_fn->inputs[f.next++];
      if (in.requires_grad() && seen.insert(in.impl_.get()).second) stack.push_back({in, 0});
      continue;
    }
    order.push_back(&ti);
    keep.push_back(f.t);
    stack.pop_back();
  }

  for (TensorImpl* t : order) {
    if (t->grad_fn && t->grad_fn->consumed) {
      throw ContractError("backward() reached a graph node (" + t->grad_fn->op +
                          ") that an earlier backward() already consumed");
    }
  }

  grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (!t->grad_fn) continue;
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    if (!fault_op.empty() && t->grad_fn->op == fault_op) {
      faulty_backward(*t, *t->grad_fn, fault_factor);
    } else {
      t->grad_fn->backward(*t, t->grad_fn->inputs);
    }
    t->grad_fn->consumed = true;
    t->grad_fn->inputs.clear();
  }
}

}  // namespace battta
