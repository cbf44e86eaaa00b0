#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace battta {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
struct TensorImpl;

// One recorded operation. Owned by the tensor it produced; holds the forward
// inputs so the graph stays alive until backward() consumes it.
struct Node {
  using BackwardFn = std::function<void(const TensorImpl& out, std::span<Tensor> inputs)>;

  std::string op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

// Dense row-major float64 tensor with a gradient slot. Copies share storage
// (handle semantics); use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  // Result of an op: wires `node` as grad_fn when any input needs a gradient.
  static Tensor from_op(Shape shape, std::vector<double> data, std::string op,
                        std::vector<Tensor> inputs, Node::BackwardFn backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }
  bool is_leaf() const { return impl_->grad_fn == nullptr; }

  // Fresh tensor with copied data and no graph history.
  Tensor detach() const;
  Tensor clone() const;

  // Reverse-mode sweep from this scalar. Gradients accumulate into every
  // reachable tensor that requires a gradient. The graph is consumed: a second
  // call on the same graph raises ContractError.
  void backward() const;

  TensorImpl& impl() const { return *impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Adds `g` into this tensor's gradient buffer (allocating on first use).
  void accumulate_grad(std::span<const double> g) const;
  std::span<double> grad_buffer() const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Disables graph recording on the current thread while alive. Ops still
// compute values; nothing is retained for backward().
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool enabled();

 private:
  bool previous_;
};

// Test hook: while alive, gradient contributions produced by nodes of kind
// `op` on this thread are multiplied by `factor`. Used as a negative control
// for the gradient audit.
class GradientFaultGuard {
 public:
  GradientFaultGuard(std::string op, double factor);
  ~GradientFaultGuard();
  GradientFaultGuard(const GradientFaultGuard&) = delete;
  GradientFaultGuard& operator=(const GradientFaultGuard&) = delete;
};

}  // namespace battta
