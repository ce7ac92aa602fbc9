#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rrp {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;

// One recorded operation. `backward` receives the output gradient and must
// accumulate into the gradients of every input that requires them.
struct OpNode {
  std::string kind;
  std::vector<Tensor> inputs;
  std::function<void(std::span<const double> out_grad)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<OpNode> node;
};

}  // namespace detail

// N-dimensional binary64 array that participates in reverse-mode
// differentiation. Copies share storage; use clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  // Direct write access, for parameters and optimizer updates between steps.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Seeds d(self)/d(self) = 1 (self must hold one element) and propagates
  // gradients to every reachable tensor that requires them.
  void backward() const;

  // Same values, no graph history, no gradient.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::OpNode>& node() const;
  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace detail {

// Builds an op output. Records a graph node when grad mode is on and any
// input requires gradients; throws NumericError if `data` holds NaN/Inf.
Tensor make_result(const char* kind, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward);

// Adds `delta` into t's gradient buffer (allocating it on first use).
void accumulate_grad(const Tensor& t, std::span<const double> delta);
std::span<double> grad_buffer(const Tensor& t);

// Activation-pattern fingerprint used by the gradient checker to detect
// finite-difference probes that cross a ReLU kink or change a maxpool winner.
struct PatternProbe {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  void feed(std::uint64_t word) {
    hash ^= word;
    hash *= 0x100000001B3ULL;
  }
};
PatternProbe* active_probe();
void set_active_probe(PatternProbe* probe);

}  // namespace detail

// Test hooks for deliberately broken backward rules.
struct FaultInjection {
  bool flip_relu_backward = false;
};
FaultInjection& fault_injection();

// ---------------------------------------------------------------------------
// Differentiable operations. All shapes are checked; mismatches throw
// DimensionError. Layouts: feature maps are [C,H,W], matrices [n,m].
// ---------------------------------------------------------------------------

// Stride-1 cross-correlation with zero padding and per-channel bias.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// 2x2 window, stride 2. Ties go to the first element in row-major order.
Tensor maxpool2(const Tensor& x);
// Half-pixel bilinear resampling with clamped source coordinates.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor matmul(const Tensor& a, const Tensor& b);

enum class Elementwise { add, mul };
// Shapes must match, or b is [1,H,W] and broadcasts over a's channel axis.
Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor global_average_pool(const Tensor& x);
Tensor softmax_rows(const Tensor& x);

// Structural helpers used to assemble the region-relation computation.
Tensor select_channel(const Tensor& x, std::size_t channel);   // [C,H,W] -> [1,H,W]
Tensor select_row(const Tensor& x, std::size_t row);           // [n,d] -> [d]
Tensor stack_rows(const std::vector<Tensor>& rows);            // n x [d] -> [n,d]
Tensor broadcast_spatial(const Tensor& v, std::size_t h, std::size_t w);  // [d] -> [d,H,W]
Tensor scale(const Tensor& x, double factor);
Tensor sum_all(const Tensor& x);
// Sum of x * weights with constant weights; a convenient scalar probe.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);
Tensor flip_horizontal(const Tensor& x);  // reverses the last axis

}  // namespace rrp
