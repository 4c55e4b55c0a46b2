#include "aelab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace aelab {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EMat>;
using CMapMat = Eigen::Map<const EMat>;

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream ss;
  ss << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) ss << ",";
    ss << shape[i];
  }
  ss << ")";
  return ss.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

static void validate_shape(const Shape& shape) {
  for (int e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  validate_shape(shape);
  auto d = std::make_shared<detail::TensorData>();
  d->values.assign(static_cast<std::size_t>(numel(shape)), 0.0);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.d_->values.begin(), t.d_->values.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("from_data: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ValueError("tensor has no gradient (no backward pass reached it)");
  return d_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return d_->values[0];
}

Tensor Tensor::detached() const {
  auto d = std::make_shared<detail::TensorData>();
  d->shape = d_->shape;
  d->values = d_->values;  // copy keeps the graph's values stable under optimizer updates
  d->requires_grad = false;
  return Tensor(std::move(d));
}

Tensor Tensor::clone() const {
  auto d = std::make_shared<detail::TensorData>(*d_);
  d->grad.clear();
  return Tensor(std::move(d));
}

// --- tape -------------------------------------------------------------------

void Tape::record(std::shared_ptr<detail::TensorData> out,
                  std::vector<std::shared_ptr<detail::TensorData>> ins,
                  std::function<void()> pull) {
  records_.push_back({std::move(out), std::move(ins), std::move(pull)});
}

static void ensure_grad(detail::TensorData* t) {
  if (t->grad.size() != t->values.size()) t->grad.assign(t->values.size(), 0.0);
}

void Tape::run_reverse(const Tensor& output, std::span<const double> seed) {
  if (!output.defined()) throw ValueError("backward: undefined output tensor");
  if (seed.size() != static_cast<std::size_t>(output.size())) {
    throw ShapeError("backward seed has " + std::to_string(seed.size()) +
                     " entries for output " + shape_str(output.shape()));
  }
  // zero every adjoint this tape can touch (including leaves), then seed
  for (auto& r : records_) {
    r.out->grad.assign(r.out->values.size(), 0.0);
    for (auto& in : r.ins) {
      if (in->requires_grad) in->grad.assign(in->values.size(), 0.0);
    }
  }
  detail::TensorData* out = output.node();
  ensure_grad(out);
  std::fill(out->grad.begin(), out->grad.end(), 0.0);
  std::copy(seed.begin(), seed.end(), out->grad.begin());
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->pull();
  }
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw PreconditionError("backward called twice on the same tape");
  if (records_.empty()) throw PreconditionError("backward on an empty tape");
  if (loss.size() != 1) {
    throw ShapeError("backward expects a scalar loss, got " + shape_str(loss.shape()));
  }
  const double one = 1.0;
  run_reverse(loss, std::span<const double>(&one, 1));
  consumed_ = true;
  records_.clear();
}

void Tape::backward_seeded(const Tensor& output, std::span<const double> seed) {
  if (consumed_) throw PreconditionError("backward_seeded on a consumed tape");
  if (records_.empty()) throw PreconditionError("backward_seeded on an empty tape");
  run_reverse(output, seed);
}

void Tape::clear() {
  records_.clear();
  consumed_ = false;
}

// --- op plumbing -------------------------------------------------------------

struct OpAccess {
  static Tensor make(Shape shape, std::vector<double> values, bool requires_grad) {
    auto d = std::make_shared<detail::TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }
  static std::shared_ptr<detail::TensorData> payload(const Tensor& t) { return t.d_; }
};

namespace ops {

static void check_finite(const char* op, const Tensor& t) {
  if (!all_finite(t.data().data(), t.data().size())) {
    throw ValueError(std::string(op) + ": non-finite value in output");
  }
}

static void check_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined input tensor");
}

static bool want_tape(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins) {
    if ((*t).requires_grad()) return true;
  }
  return false;
}

// Adjoint accumulation helper: adds into t's grad if it participates.
static void accumulate(detail::TensorData* t, const std::vector<double>& delta) {
  ensure_grad(t);
  for (std::size_t i = 0; i < delta.size(); ++i) t->grad[i] += delta[i];
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  check_defined("add", a);
  check_defined("add", b);
  if (!same_shape(a.shape(), b.shape())) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  bool rec = want_tape(tape, {&a, &b});
  Tensor y = OpAccess::make(a.shape(), std::move(out), rec);
  check_finite("add", y);
  if (rec) {
    auto ad = OpAccess::payload(a), bd = OpAccess::payload(b), yd = OpAccess::payload(y);
    tape->record(yd, {ad, bd}, [ad, bd, yd]() {
      if (ad->requires_grad) accumulate(ad.get(), yd->grad);
      if (bd->requires_grad) accumulate(bd.get(), yd->grad);
    });
  }
  return y;
}

Tensor scalar_mul(Tape* tape, const Tensor& x, double s) {
  check_defined("scalar_mul", x);
  if (!std::isfinite(s)) throw ValueError("scalar_mul: non-finite scalar");
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
  bool rec = want_tape(tape, {&x});
  Tensor y = OpAccess::make(x.shape(), std::move(out), rec);
  check_finite("scalar_mul", y);
  if (rec) {
    auto xd = OpAccess::payload(x), yd = OpAccess::payload(y);
    tape->record(yd, {xd}, [xd, yd, s]() {
      ensure_grad(xd.get());
      for (std::size_t i = 0; i < yd->grad.size(); ++i) xd->grad[i] += s * yd->grad[i];
    });
  }
  return y;
}

Tensor relu(Tape* tape, const Tensor& x) {
  check_defined("relu", x);
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  bool rec = want_tape(tape, {&x});
  Tensor y = OpAccess::make(x.shape(), std::move(out), rec);
  check_finite("relu", y);
  if (rec) {
    auto xd = OpAccess::payload(x), yd = OpAccess::payload(y);
    tape->record(yd, {xd}, [xd, yd]() {
      ensure_grad(xd.get());
      for (std::size_t i = 0; i < yd->grad.size(); ++i) {
        if (xd->values[i] > 0.0) xd->grad[i] += yd->grad[i];
      }
    });
  }
  return y;
}

Tensor abs(Tape* tape, const Tensor& x) {
  check_defined("abs", x);
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x.data()[i]);
  bool rec = want_tape(tape, {&x});
  Tensor y = OpAccess::make(x.shape(), std::move(out), rec);
  check_finite("abs", y);
  if (rec) {
    auto xd = OpAccess::payload(x), yd = OpAccess::payload(y);
    tape->record(yd, {xd}, [xd, yd]() {
      ensure_grad(xd.get());
      for (std::size_t i = 0; i < yd->grad.size(); ++i) {
        double v = xd->values[i];
        // subgradient at 0 is 0
        xd->grad[i] += (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0)) * yd->grad[i];
      }
    });
  }
  return y;
}

Tensor square(Tape* tape, const Tensor& x) {
  check_defined("square", x);
  std::vector<double> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  bool rec = want_tape(tape, {&x});
  Tensor y = OpAccess::make(x.shape(), std::move(out), rec);
  check_finite("square", y);
  if (rec) {
    auto xd = OpAccess::payload(x), yd = OpAccess::payload(y);
    tape->record(yd, {xd}, [xd, yd]() {
      ensure_grad(xd.get());
      for (std::size_t i = 0; i < yd->grad.size(); ++i) {
        xd->grad[i] += 2.0 * xd->values[i] * yd->grad[i];
      }
    });
  }
  return y;
}

Tensor reduce_sum(Tape* tape, const Tensor& x) {
  check_defined("reduce_sum", x);
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  bool rec = want_tape(tape, {&x});
  Tensor y = OpAccess::make({1}, {acc}, rec);
  check_finite("reduce_sum", y);
  if (rec) {
    auto xd = OpAccess::payload(x), yd = OpAccess::payload(y);
    tape->record(yd, {xd}, [xd, yd]() {
      ensure_grad(xd.get());
      double g = yd->grad[0];
      for (std::size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += g;
    });
  }
  return y;
}

Tensor matmul(Tape* tape, const Tensor& x, const Tensor& w) {
  check_defined("matmul", x);
  check_defined("matmul", w);
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(x.shape()) + " x " +
                     shape_str(w.shape()));
  }
  const int B = x.shape()[0], F = x.shape()[1], C = w.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(B) * C);
  {
    CMapMat X(x.data().data(), B, F), W(w.data().data(), F, C);
    MapMat Y(out.data(), B, C);
    Y.noalias() = X * W;
  }
  bool rec = want_tape(tape, {&x, &w});
  Tensor y = OpAccess::make({B, C}, std::move(out), rec);
  check_finite("matmul", y);
  if (rec) {
    auto xd = OpAccess::payload(x), wd = OpAccess::payload(w), yd = OpAccess::payload(y);
    tape->record(yd, {xd, wd}, [xd, wd, yd, B, F, C]() {
      CMapMat G(yd->grad.data(), B, C);
      if (xd->requires_grad) {
        ensure_grad(xd.get());
        CMapMat W(wd->values.data(), F, C);
        MapMat GX(xd->grad.data(), B, F);
        GX.noalias() += G * W.transpose();
      }
      if (wd->requires_grad) {
        ensure_grad(wd.get());
        CMapMat X(xd->values.data(), B, F);
        MapMat GW(wd->grad.data(), F, C);
        GW.noalias() += X.transpose() * G;
      }
    });
  }
  return y;
}

Tensor bias_add(Tape* tape, const Tensor& x, const Tensor& b) {
  check_defined("bias_add", x);
  check_defined("bias_add", b);
  const auto& xs = x.shape();
  if (b.shape().size() != 1 || (xs.size() != 2 && xs.size() != 4) || b.shape()[0] != xs[1]) {
    throw ShapeError("bias_add: bias " + shape_str(b.shape()) + " does not match input " +
                     shape_str(xs));
  }
  const int C = xs[1];
  const std::size_t inner = xs.size() == 4
                                ? static_cast<std::size_t>(xs[2]) * xs[3]
                                : 1;
  const std::size_t batch = static_cast<std::size_t>(xs[0]);
  std::vector<double> out(x.data().size());
  for (std::size_t n = 0; n < batch; ++n) {
    for (int c = 0; c < C; ++c) {
      const double bias = b.data()[c];
      std::size_t base = (n * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = x.data()[base + i] + bias;
    }
  }
  bool rec = want_tape(tape, {&x, &b});
  Tensor y = OpAccess::make(xs, std::move(out), rec);
  check_finite("bias_add", y);
  if (rec) {
    auto xd = OpAccess::payload(x), bd = OpAccess::payload(b), yd = OpAccess::payload(y);
    tape->record(yd, {xd, bd}, [xd, bd, yd, batch, C, inner]() {
      if (xd->requires_grad) accumulate(xd.get(), yd->grad);
      if (bd->requires_grad) {
        ensure_grad(bd.get());
        for (std::size_t n = 0; n < batch; ++n) {
          for (int c = 0; c < C; ++c) {
            std::size_t base = (n * C + c) * inner;
            double acc = 0.0;
            for (std::size_t i = 0; i < inner; ++i) acc += yd->grad[base + i];
            bd->grad[c] += acc;
          }
        }
      }
    });
  }
  return y;
}

// im2col: input (C,H,W) -> matrix (C*kh*kw, Ho*Wo), one column per output
// position. Out-of-bounds taps read zero.
static void im2col(const double* img, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int Ho, int Wo, double* col) {
  const int cols = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col + ((c * kh + ki) * kw + kj) * cols;
        for (int oi = 0; oi < Ho; ++oi) {
          int ii = oi * stride - pad + ki;
          for (int oj = 0; oj < Wo; ++oj) {
            int jj = oj * stride - pad + kj;
            row[oi * Wo + oj] = (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                    ? img[(c * H + ii) * W + jj]
                                    : 0.0;
          }
        }
      }
    }
  }
}

static void col2im_accumulate(const double* col, int C, int H, int W, int kh, int kw, int stride,
                              int pad, int Ho, int Wo, double* img) {
  const int cols = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col + ((c * kh + ki) * kw + kj) * cols;
        for (int oi = 0; oi < Ho; ++oi) {
          int ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= H) continue;
          for (int oj = 0; oj < Wo; ++oj) {
            int jj = oj * stride - pad + kj;
            if (jj < 0 || jj >= W) continue;
            img[(c * H + ii) * W + jj] += row[oi * Wo + oj];
          }
        }
      }
    }
  }
}

Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& k, int stride, int pad) {
  check_defined("conv2d", x);
  check_defined("conv2d", k);
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  if (xs.size() != 4 || ks.size() != 4 || xs[1] != ks[1]) {
    throw ShapeError("conv2d: incompatible shapes input " + shape_str(xs) + ", kernel " +
                     shape_str(ks));
  }
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >=1 and pad >=0");
  const int B = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const int Co = ks[0], kh = ks[2], kw = ks[3];
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || W + 2 * pad < kw) {
    throw ShapeError("conv2d: kernel " + shape_str(ks) + " larger than padded input " +
                     shape_str(xs));
  }
  const int K = Ci * kh * kw;
  const int cols = Ho * Wo;

  // columns for the whole batch, kept for the backward pass
  auto colbuf = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * K * cols);
  std::vector<double> out(static_cast<std::size_t>(B) * Co * cols);
  {
    CMapMat Wm(k.data().data(), Co, K);
    for (int n = 0; n < B; ++n) {
      double* col = colbuf->data() + static_cast<std::size_t>(n) * K * cols;
      im2col(x.data().data() + static_cast<std::size_t>(n) * Ci * H * W, Ci, H, W, kh, kw, stride,
             pad, Ho, Wo, col);
      MapMat Y(out.data() + static_cast<std::size_t>(n) * Co * cols, Co, cols);
      CMapMat Col(col, K, cols);
      Y.noalias() = Wm * Col;
    }
  }
  bool rec = want_tape(tape, {&x, &k});
  Tensor y = OpAccess::make({B, Co, Ho, Wo}, std::move(out), rec);
  check_finite("conv2d", y);
  if (rec) {
    auto xd = OpAccess::payload(x), kd = OpAccess::payload(k), yd = OpAccess::payload(y);
    tape->record(yd, {xd, kd}, [xd, kd, yd, colbuf, B, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo, K,
                      cols]() {
      if (kd->requires_grad) {
        ensure_grad(kd.get());
        MapMat GW(kd->grad.data(), Co, K);
        for (int n = 0; n < B; ++n) {
          CMapMat G(yd->grad.data() + static_cast<std::size_t>(n) * Co * cols, Co, cols);
          CMapMat Col(colbuf->data() + static_cast<std::size_t>(n) * K * cols, K, cols);
          GW.noalias() += G * Col.transpose();
        }
      }
      if (xd->requires_grad) {
        ensure_grad(xd.get());
        CMapMat Wm(kd->values.data(), Co, K);
        std::vector<double> colgrad(static_cast<std::size_t>(K) * cols);
        for (int n = 0; n < B; ++n) {
          CMapMat G(yd->grad.data() + static_cast<std::size_t>(n) * Co * cols, Co, cols);
          MapMat CG(colgrad.data(), K, cols);
          CG.noalias() = Wm.transpose() * G;
          col2im_accumulate(colgrad.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                            xd->grad.data() + static_cast<std::size_t>(n) * Ci * H * W);
        }
      }
    });
  }
  return y;
}

Tensor global_average_pool(Tape* tape, const Tensor& x) {
  check_defined("global_average_pool", x);
  const auto& xs = x.shape();
  if (xs.size() != 4) {
    throw ShapeError("global_average_pool: expected (B,C,H,W), got " + shape_str(xs));
  }
  const int B = xs[0], C = xs[1];
  const std::size_t plane = static_cast<std::size_t>(xs[2]) * xs[3];
  std::vector<double> out(static_cast<std::size_t>(B) * C);
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* p = x.data().data() + (static_cast<std::size_t>(n) * C + c) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      out[static_cast<std::size_t>(n) * C + c] = acc / static_cast<double>(plane);
    }
  }
  bool rec = want_tape(tape, {&x});
  Tensor y = OpAccess::make({B, C}, std::move(out), rec);
  check_finite("global_average_pool", y);
  if (rec) {
    auto xd = OpAccess::payload(x), yd = OpAccess::payload(y);
    tape->record(yd, {xd}, [xd, yd, B, C, plane]() {
      ensure_grad(xd.get());
      for (int n = 0; n < B; ++n) {
        for (int c = 0; c < C; ++c) {
          double g = yd->grad[static_cast<std::size_t>(n) * C + c] / static_cast<double>(plane);
          double* p = xd->grad.data() + (static_cast<std::size_t>(n) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) p[i] += g;
        }
      }
    });
  }
  return y;
}

static void check_labels(const char* op, const Tensor& scores, const std::vector<int>& labels) {
  if (scores.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": scores must be (B,C), got " + shape_str(scores.shape()));
  }
  if (static_cast<int>(labels.size()) != scores.shape()[0]) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(scores.shape()[0]));
  }
  for (int l : labels) {
    if (l < 0 || l >= scores.shape()[1]) {
      throw ShapeError(std::string(op) + ": label " + std::to_string(l) + " out of range");
    }
  }
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& scores, const std::vector<int>& labels) {
  check_defined("softmax_cross_entropy", scores);
  check_labels("softmax_cross_entropy", scores, labels);
  const int B = scores.shape()[0], C = scores.shape()[1];
  auto probs = std::make_shared<std::vector<double>>(scores.data().size());
  double loss = 0.0;
  for (int n = 0; n < B; ++n) {
    const double* s = scores.data().data() + static_cast<std::size_t>(n) * C;
    double mx = s[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, s[c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(s[c] - mx);
    double logz = std::log(z) + mx;
    for (int c = 0; c < C; ++c) (*probs)[static_cast<std::size_t>(n) * C + c] = std::exp(s[c] - logz);
    loss += logz - s[labels[n]];
  }
  loss /= static_cast<double>(B);
  bool rec = want_tape(tape, {&scores});
  Tensor y = OpAccess::make({1}, {loss}, rec);
  check_finite("softmax_cross_entropy", y);
  if (rec) {
    auto sd = OpAccess::payload(scores), yd = OpAccess::payload(y);
    auto lab = labels;
    tape->record(yd, {sd}, [sd, yd, probs, lab, B, C]() {
      ensure_grad(sd.get());
      double g = yd->grad[0] / static_cast<double>(B);
      for (int n = 0; n < B; ++n) {
        for (int c = 0; c < C; ++c) {
          double p = (*probs)[static_cast<std::size_t>(n) * C + c];
          sd->grad[static_cast<std::size_t>(n) * C + c] += g * (p - (c == lab[n] ? 1.0 : 0.0));
        }
      }
    });
  }
  return y;
}

Tensor multiclass_hinge(Tape* tape, const Tensor& scores, const std::vector<int>& labels) {
  check_defined("multiclass_hinge", scores);
  check_labels("multiclass_hinge", scores, labels);
  const int B = scores.shape()[0], C = scores.shape()[1];
  // remember which margins were active for the backward pass
  auto active = std::make_shared<std::vector<unsigned char>>(scores.data().size(), 0);
  double loss = 0.0;
  for (int n = 0; n < B; ++n) {
    const double* s = scores.data().data() + static_cast<std::size_t>(n) * C;
    double sy = s[labels[n]];
    for (int c = 0; c < C; ++c) {
      if (c == labels[n]) continue;
      double m = 1.0 + s[c] - sy;
      if (m > 0.0) {
        loss += m;
        (*active)[static_cast<std::size_t>(n) * C + c] = 1;
      }
    }
  }
  loss /= static_cast<double>(B);
  bool rec = want_tape(tape, {&scores});
  Tensor y = OpAccess::make({1}, {loss}, rec);
  check_finite("multiclass_hinge", y);
  if (rec) {
    auto sd = OpAccess::payload(scores), yd = OpAccess::payload(y);
    auto lab = labels;
    tape->record(yd, {sd}, [sd, yd, active, lab, B, C]() {
      ensure_grad(sd.get());
      double g = yd->grad[0] / static_cast<double>(B);
      for (int n = 0; n < B; ++n) {
        int violations = 0;
        for (int c = 0; c < C; ++c) {
          if ((*active)[static_cast<std::size_t>(n) * C + c]) {
            sd->grad[static_cast<std::size_t>(n) * C + c] += g;
            ++violations;
          }
        }
        sd->grad[static_cast<std::size_t>(n) * C + lab[n]] -= g * violations;
      }
    });
  }
  return y;
}

std::vector<double> softmax_row(std::span<const double> scores) {
  std::vector<double> out(scores.size());
  double mx = scores[0];
  for (double v : scores) mx = std::max(mx, v);
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

int argmax_tie_low(std::span<const double> scores) {
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace ops

}  // namespace aelab
