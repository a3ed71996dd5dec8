#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Dense 64-bit tensors with reverse-mode gradient accumulation. The
// computation graph is recorded dynamically: each op that touches a tensor
// requiring grad appends a node holding its operands and backward rule.
// A graph and its tensors belong to one worker at a time; frozen tensors
// may be shared read-only.

namespace mars::num {

// LeakyReLU negative slope used throughout the model.
inline constexpr double kLeakySlope = 0.2;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // sized lazily, same length as values
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;  // empty on leaves

  std::size_t size() const { return values.size(); }
  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& grad_buf();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor vector(std::vector<double> v, bool requires_grad = false);
  static Tensor matrix(int rows, int cols, std::vector<double> v,
                       bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> v,
                            bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->size(); }

  std::span<const double> values() const { return impl_->values; }
  // Mutable access to raw storage; used for in-place perturbation and
  // optimizer updates on leaves. Never call on a tensor inside a live graph.
  std::span<double> mutable_values() { return impl_->values; }

  double operator[](std::size_t i) const { return impl_->values[i]; }
  // Value of a scalar tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  // Gradient accumulated by backward(); zeros until then.
  std::span<const double> grad() const;
  void zero_grad();

  // Identity of the underlying node (two handles may share one impl).
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// While a guard is alive, ops do not record graph nodes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Primitive forward ops. Each validates shapes and finiteness of inputs and
// records a backward rule when any operand requires grad.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double c);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor mean(const Tensor& x);                  // over all elements -> scalar
Tensor concat(const std::vector<Tensor>& xs);  // 1-D tensors -> one 1-D
Tensor stack_rows(const std::vector<Tensor>& rows);  // k equal 1-D -> k x d
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope);
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x);  // along the last axis
Tensor log(const Tensor& x);      // natural log
Tensor inner(const Tensor& a, const Tensor& b);  // 1-D dot -> scalar
Tensor clamp(const Tensor& x, double lo, double hi);

// Image ops for the convolutional autoencoder. Layout is {C,H,W} for
// activations and {O,C,kh,kw} for weights; 3x3 kernels, zero padding 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor maxpool2(const Tensor& input);   // 2x2, stride 2
Tensor upsample2(const Tensor& input);  // nearest neighbor, x2

// Accumulates d(root)/d(leaf) into every requiring leaf reachable from root.
// Repeated calls without zero_grad accumulate.
void backward(const Tensor& root);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for the scalar function f at the given point.
double gradient_check(const std::function<Tensor(const Tensor&)>& f,
                      Tensor point, double eps);

}  // namespace mars::num
