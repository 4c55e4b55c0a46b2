#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aelab/common.hpp"

namespace aelab {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor of doubles. Cheap to copy (shared payload).
// Values are immutable once the tensor participates in a taped graph;
// `grad` is populated by Tape backward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(d_->values.size()); }
  bool requires_grad() const { return d_->requires_grad; }

  std::span<const double> data() const { return d_->values; }
  // Direct mutation is for construction and optimizer updates only; never
  // mutate a tensor that a live tape references.
  std::span<double> mutable_data() { return d_->values; }

  bool has_grad() const { return d_ && !d_->grad.empty(); }
  std::span<const double> grad() const;

  double item() const;

  // Same storage, but invisible to autodiff. Used to freeze parameters
  // during attack passes so backward skips their gradient work.
  Tensor detached() const;
  Tensor clone() const;

  detail::TensorData* node() const { return d_.get(); }

 private:
  friend class Tape;
  friend struct OpAccess;
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
};

// Reverse-mode tape. One tape per model invocation; records are replayed in
// reverse order exactly once per backward pass. Not thread-safe; confine a
// tape and its tensors to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // d(loss)/d(t) for every requires_grad tensor reachable from `loss`.
  // The tape is consumed: records are dropped and a second call throws.
  void backward(const Tensor& loss);

  // Reverse pass from `output` with an explicit cotangent (one entry per
  // output element). Does not consume the tape, so iterative attacks can
  // replay it once per class. Grads are zeroed at the start of each call.
  void backward_seeded(const Tensor& output, std::span<const double> seed);

  std::size_t num_ops() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  void clear();

  // used by op implementations
  void record(std::shared_ptr<detail::TensorData> out,
              std::vector<std::shared_ptr<detail::TensorData>> ins,
              std::function<void()> pull);

 private:
  struct Record {
    std::shared_ptr<detail::TensorData> out;
    std::vector<std::shared_ptr<detail::TensorData>> ins;
    std::function<void()> pull;
  };
  void run_reverse(const Tensor& output, std::span<const double> seed);
  std::vector<Record> records_;
  bool consumed_ = false;
};

namespace ops {

// Primitive forward ops. Passing tape == nullptr runs pure inference; with a
// tape, the op is recorded iff any input requires grad. Every op validates
// shapes and fails fast if the output contains a non-finite value.

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);          // same shape
Tensor scalar_mul(Tape* tape, const Tensor& x, double s);
Tensor relu(Tape* tape, const Tensor& x);
Tensor abs(Tape* tape, const Tensor& x);                           // d|x|/dx at 0 := 0
Tensor square(Tape* tape, const Tensor& x);
Tensor reduce_sum(Tape* tape, const Tensor& x);                    // -> scalar {1}
Tensor matmul(Tape* tape, const Tensor& x, const Tensor& w);       // (B,F)x(F,C)
Tensor bias_add(Tape* tape, const Tensor& x, const Tensor& b);     // (B,C)+(C) or (B,C,H,W)+(C)
Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& k, int stride, int pad);
Tensor global_average_pool(Tape* tape, const Tensor& x);           // (B,C,H,W)->(B,C)

// Fused, numerically stable losses; both take scores (B,C) and return the
// scalar mean over the batch.
Tensor softmax_cross_entropy(Tape* tape, const Tensor& scores, const std::vector<int>& labels);
// Multiclass hinge (Weston-Watkins), margin 1: mean_b sum_{j != y} max(0, 1 + s_j - s_y).
Tensor multiclass_hinge(Tape* tape, const Tensor& scores, const std::vector<int>& labels);

// inference-only helpers (no tape participation)
std::vector<double> softmax_row(std::span<const double> scores);
int argmax_tie_low(std::span<const double> scores);

}  // namespace ops

}  // namespace aelab
