#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace ub {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward reaches this tensor
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copying a Tensor copies the
// handle, not the storage; clone() makes an independent copy. A tensor
// participates in reverse-mode differentiation when requires_grad is set and
// a Tape is active during the op that consumes it.
class Tensor {
 public:
  Tensor() : d_(std::make_shared<detail::TensorData>()) {}
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return d_->shape; }
  std::size_t numel() const { return d_->values.size(); }
  std::span<const double> values() const { return d_->values; }
  std::span<double> values_mut() { return d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool v) { d_->requires_grad = v; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::span<const double> grad() const;
  // Allocates a zeroed gradient buffer on first use.
  std::span<double> grad_mut();
  void zero_grad();

  // Value of a rank-0 or single-element tensor.
  double item() const;

  Tensor clone() const;

  // Identity test for handle aliasing.
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  std::shared_ptr<detail::TensorData> data() const { return d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

// Records the operations of one forward pass. backward() replays the nodes
// in reverse, visiting each exactly once; gradients accumulate additively
// across fan-out. The tape is cleared explicitly between optimizer steps.
class Tape {
 public:
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  void record(std::function<void()> backward) {
    nodes_.push_back(std::move(backward));
  }

  static Tape* active();

 private:
  std::vector<std::function<void()>> nodes_;
};

// RAII: makes a tape the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// RAII: suspends recording (inference inside a recorded region).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* prev_;
};

// True when a tape is active and any of the inputs requires grad; custom ops
// use this to decide whether to record.
bool grad_enabled(std::initializer_list<const Tensor*> inputs);

// Appends a backward rule to the active tape. Must only be called when a
// tape is active.
void record_node(std::function<void()> backward);

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
// sign(0) = 0; gradient identically zero (the FGSM step is a constant with
// respect to the attack input).
Tensor sign(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// --- structural ---
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);
// x[n,d] + row[d], broadcast over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& row);
// x[n,c,h,w] + bias[c], broadcast over batch and spatial positions.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);

// Cross-correlation (no kernel flip). out_h = (h + 2*padding - kh)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride,
              int padding);

// --- losses ---
// Mean over the batch of -log softmax(logits)[label]; max-stabilized.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels);

// Mean over the batch of KL(softmax(student/t) || softmax(teacher/t)).
// The teacher is a constant: passing a teacher that requires grad is a
// contract error.
Tensor kl_divergence(const Tensor& student_logits, const Tensor& teacher_logits,
                     double temperature);

// Row-wise softmax of a [n,C] tensor, computed outside the tape.
std::vector<double> softmax_rows(const Tensor& logits);

// Max relative error between backward() gradients of f at x and central
// finite differences. f must be deterministic and return a scalar; the
// caller keeps x away from non-differentiable points.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps);

}  // namespace ub
