#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aelab/common.hpp"
#include "aelab/tensor.hpp"
#include "oracles.hpp"

using namespace aelab;
using namespace aelab::testing;

static Tensor random_tensor(Shape shape, Rng& rng, bool rg, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v), rg);
}

TEST_CASE("relu forward matches definition") {
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
  Tensor y = ops::relu(nullptr, x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);
}

TEST_CASE("add with zeros is identity") {
  Rng rng(11);
  Tensor x = random_tensor({2, 3}, rng, false);
  Tensor y = ops::add(nullptr, x, Tensor::zeros({2, 3}));
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d 3x3 ones with 2x2 ones kernel gives all fours") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = ops::conv2d(nullptr, x, k, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.data()) CHECK(v == 4.0);
}

TEST_CASE("conv2d matches sliding-window reference on random shapes") {
  Rng rng(42);
  struct Case {
    int B, Ci, H, W, Co, k, stride, pad;
  };
  for (const Case& c : {Case{2, 3, 7, 6, 4, 3, 1, 1}, Case{1, 2, 8, 8, 3, 3, 2, 1},
                        Case{2, 1, 5, 5, 2, 1, 1, 0}, Case{1, 4, 6, 6, 4, 3, 2, 0}}) {
    Tensor x = random_tensor({c.B, c.Ci, c.H, c.W}, rng, false);
    Tensor k = random_tensor({c.Co, c.Ci, c.k, c.k}, rng, false);
    Tensor y = ops::conv2d(nullptr, x, k, c.stride, c.pad);
    auto ref = conv2d_reference(x.data(), c.B, c.Ci, c.H, c.W, k.data(), c.Co, c.k, c.k, c.stride,
                                c.pad);
    REQUIRE(y.data().size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Rng rng(7);
  Tensor x = random_tensor({3, 4}, rng, true);
  Tape tape;
  Tensor loss = ops::reduce_sum(&tape, x);
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares gives 2x") {
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  Tape tape;
  Tensor loss = ops::reduce_sum(&tape, ops::square(&tape, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward contract errors") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor y = ops::square(&tape, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);  // non-scalar loss
  Tensor loss = ops::reduce_sum(&tape, y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), PreconditionError);  // called twice
  Tape empty;
  CHECK_THROWS_AS(empty.backward(loss), PreconditionError);  // empty tape
}

TEST_CASE("shape mismatch errors name the op") {
  Tensor a = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(ops::add(nullptr, a, b),
                       doctest::Contains("add: shape mismatch"), ShapeError);
  CHECK_THROWS_AS(ops::matmul(nullptr, a, Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(nullptr, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1, 1),
                  ShapeError);
}

TEST_CASE("non-finite outputs fail fast") {
  Tensor x = Tensor::from_data({1}, {1e308});
  CHECK_THROWS_AS(ops::add(nullptr, x, x), ValueError);
  CHECK_THROWS_AS(ops::scalar_mul(nullptr, x, 1e10), ValueError);
}

// Every primitive against central finite differences. Elements with tiny
// analytic magnitude are compared absolutely.
TEST_CASE("per-primitive finite-difference checks") {
  Rng rng(1234);
  const double tol = 1e-4;

  auto fd_check = [&](const std::function<Tensor(Tape*, const Tensor&)>& op, Shape shape,
                      double scale = 1.0) {
    Tensor x = random_tensor(shape, rng, true, scale);
    Tape tape;
    Tensor loss = ops::reduce_sum(&tape, op(&tape, x));
    tape.backward(loss);
    std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto f = [&](std::span<const double> v) {
      Tensor xv = Tensor::from_data(shape, std::vector<double>(v.begin(), v.end()));
      return ops::reduce_sum(nullptr, op(nullptr, xv)).item();
    };
    auto numeric = finite_difference(f, std::vector<double>(x.data().begin(), x.data().end()));
    CHECK(gradient_discrepancy(analytic, numeric) < tol);
  };

  fd_check([](Tape* t, const Tensor& x) { return ops::relu(t, x); }, {4, 5});
  fd_check([](Tape* t, const Tensor& x) { return ops::abs(t, x); }, {4, 5});
  fd_check([](Tape* t, const Tensor& x) { return ops::square(t, x); }, {3, 3});
  fd_check([](Tape* t, const Tensor& x) { return ops::scalar_mul(t, x, -2.5); }, {6});
  fd_check([](Tape* t, const Tensor& x) { return ops::global_average_pool(t, x); }, {2, 3, 4, 4});

  // binary ops: check both operands
  {
    Shape sa{3, 4}, sb{4, 2};
    Tensor a = random_tensor(sa, rng, true), b = random_tensor(sb, rng, true);
    Tape tape;
    Tensor loss = ops::reduce_sum(&tape, ops::matmul(&tape, a, b));
    tape.backward(loss);
    auto fa = [&](std::span<const double> v) {
      Tensor av = Tensor::from_data(sa, std::vector<double>(v.begin(), v.end()));
      return ops::reduce_sum(nullptr, ops::matmul(nullptr, av, b)).item();
    };
    auto fb = [&](std::span<const double> v) {
      Tensor bv = Tensor::from_data(sb, std::vector<double>(v.begin(), v.end()));
      return ops::reduce_sum(nullptr, ops::matmul(nullptr, a, bv)).item();
    };
    CHECK(gradient_discrepancy(a.grad(), finite_difference(
              fa, std::vector<double>(a.data().begin(), a.data().end()))) < tol);
    CHECK(gradient_discrepancy(b.grad(), finite_difference(
              fb, std::vector<double>(b.data().begin(), b.data().end()))) < tol);
  }
  {
    Shape sx{2, 3, 5, 5}, sk{4, 3, 3, 3};
    Tensor x = random_tensor(sx, rng, true), k = random_tensor(sk, rng, true, 0.5);
    Tape tape;
    Tensor loss = ops::reduce_sum(&tape, ops::conv2d(&tape, x, k, 2, 1));
    tape.backward(loss);
    auto fx = [&](std::span<const double> v) {
      Tensor xv = Tensor::from_data(sx, std::vector<double>(v.begin(), v.end()));
      return ops::reduce_sum(nullptr, ops::conv2d(nullptr, xv, k, 2, 1)).item();
    };
    auto fk = [&](std::span<const double> v) {
      Tensor kv = Tensor::from_data(sk, std::vector<double>(v.begin(), v.end()));
      return ops::reduce_sum(nullptr, ops::conv2d(nullptr, x, kv, 2, 1)).item();
    };
    CHECK(gradient_discrepancy(x.grad(), finite_difference(
              fx, std::vector<double>(x.data().begin(), x.data().end()))) < tol);
    CHECK(gradient_discrepancy(k.grad(), finite_difference(
              fk, std::vector<double>(k.data().begin(), k.data().end()))) < tol);
  }
  {
    Shape sx{3, 4};
    Tensor x = random_tensor(sx, rng, true), b = random_tensor({4}, rng, true);
    Tape tape;
    Tensor loss = ops::reduce_sum(&tape, ops::bias_add(&tape, x, b));
    tape.backward(loss);
    auto fb = [&](std::span<const double> v) {
      Tensor bv = Tensor::from_data({4}, std::vector<double>(v.begin(), v.end()));
      return ops::reduce_sum(nullptr, ops::bias_add(nullptr, x, bv)).item();
    };
    CHECK(gradient_discrepancy(b.grad(), finite_difference(
              fb, std::vector<double>(b.data().begin(), b.data().end()))) < tol);
  }
  // losses
  {
    std::vector<int> labels{1, 0, 3};
    Shape ss{3, 4};
    Tensor s = random_tensor(ss, rng, true);
    for (int which = 0; which < 2; ++which) {
      Tape tape;
      Tensor loss = which == 0 ? ops::softmax_cross_entropy(&tape, s, labels)
                               : ops::multiclass_hinge(&tape, s, labels);
      tape.backward(loss);
      auto f = [&](std::span<const double> v) {
        Tensor sv = Tensor::from_data(ss, std::vector<double>(v.begin(), v.end()));
        return which == 0 ? ops::softmax_cross_entropy(nullptr, sv, labels).item()
                          : ops::multiclass_hinge(nullptr, sv, labels).item();
      };
      CHECK(gradient_discrepancy(s.grad(), finite_difference(
                f, std::vector<double>(s.data().begin(), s.data().end()))) < tol);
    }
  }
}

TEST_CASE("two-layer network gradient matches finite differences") {
  Rng rng(99);
  Shape sx{2, 6};
  Tensor x = random_tensor(sx, rng, true);
  Tensor w1 = random_tensor({6, 5}, rng, true, 0.7);
  Tensor b1 = random_tensor({5}, rng, true, 0.1);
  Tensor w2 = random_tensor({5, 3}, rng, true, 0.7);
  std::vector<int> labels{2, 0};

  auto net = [&](Tape* t, const Tensor& xin, const Tensor& w1in, const Tensor& w2in) {
    Tensor h = ops::relu(t, ops::bias_add(t, ops::matmul(t, xin, w1in), b1));
    Tensor s = ops::matmul(t, h, w2in);
    return ops::softmax_cross_entropy(t, s, labels);
  };
  Tape tape;
  tape.backward(net(&tape, x, w1, w2));

  auto check = [&](const Tensor& t, const std::function<double(std::span<const double>)>& f) {
    auto numeric = finite_difference(f, std::vector<double>(t.data().begin(), t.data().end()));
    CHECK(gradient_discrepancy(t.grad(), numeric) < 1e-4);
  };
  check(x, [&](std::span<const double> v) {
    return net(nullptr, Tensor::from_data(sx, std::vector<double>(v.begin(), v.end())), w1, w2)
        .item();
  });
  check(w1, [&](std::span<const double> v) {
    return net(nullptr, x, Tensor::from_data({6, 5}, std::vector<double>(v.begin(), v.end())), w2)
        .item();
  });
  check(w2, [&](std::span<const double> v) {
    return net(nullptr, x, w1, Tensor::from_data({5, 3}, std::vector<double>(v.begin(), v.end())))
        .item();
  });
}

TEST_CASE("gradient linearity: backward of summed losses equals sum of backwards") {
  Rng rng(5);
  Shape sx{4};
  Tensor base = random_tensor(sx, rng, false);

  auto grad_of = [&](bool combined) {
    Tensor x = Tensor::from_data(sx, std::vector<double>(base.data().begin(), base.data().end()),
                                 true);
    if (combined) {
      Tape tape;
      Tensor l1 = ops::reduce_sum(&tape, ops::square(&tape, x));
      Tensor l2 = ops::reduce_sum(&tape, ops::abs(&tape, x));
      tape.backward(ops::add(&tape, l1, l2));
      return std::vector<double>(x.grad().begin(), x.grad().end());
    }
    std::vector<double> acc(4, 0.0);
    {
      Tape tape;
      tape.backward(ops::reduce_sum(&tape, ops::square(&tape, x)));
      for (int i = 0; i < 4; ++i) acc[i] += x.grad()[i];
    }
    {
      Tape tape;
      tape.backward(ops::reduce_sum(&tape, ops::abs(&tape, x)));
      for (int i = 0; i < 4; ++i) acc[i] += x.grad()[i];
    }
    return acc;
  };
  auto g1 = grad_of(true), g2 = grad_of(false);
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(g1[i] - g2[i]) < 1e-12);
}

TEST_CASE("forward is deterministic within a process") {
  Rng rng(77);
  Tensor x = random_tensor({2, 3, 6, 6}, rng, false);
  Tensor k = random_tensor({4, 3, 3, 3}, rng, false);
  Tensor y1 = ops::conv2d(nullptr, x, k, 1, 1);
  Tensor y2 = ops::conv2d(nullptr, x, k, 1, 1);
  for (std::size_t i = 0; i < y1.data().size(); ++i) {
    CHECK(y1.data()[i] == y2.data()[i]);  // bitwise
  }
}

TEST_CASE("seeded replays recompute per-class gradients independently") {
  Rng rng(13);
  Tensor x = random_tensor({1, 4}, rng, true);
  Tensor w = random_tensor({4, 3}, rng, false);
  Tape tape;
  Tensor scores = ops::matmul(&tape, x, w.detached());

  // gradient of score c w.r.t. x is column c of w
  for (int c = 0; c < 3; ++c) {
    std::vector<double> seed(3, 0.0);
    seed[c] = 1.0;
    tape.backward_seeded(scores, seed);
    for (int i = 0; i < 4; ++i) {
      CHECK(x.grad()[i] == doctest::Approx(w.data()[i * 3 + c]).epsilon(1e-14));
    }
  }
}

TEST_CASE("detached tensors are invisible to autodiff") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor w = Tensor::from_data({2}, {3.0, 4.0}, true);
  Tape tape;
  Tensor y = ops::add(&tape, ops::square(&tape, x), ops::square(&tape, w.detached()));
  tape.backward(ops::reduce_sum(&tape, y));
  CHECK(x.has_grad());
  CHECK_FALSE(w.has_grad());
}
