#include "lt2m/grad_check.hpp"
#include "lt2m/ops.hpp"

#include <gtest/gtest.h>

#include <random>

namespace lt2m {
namespace {

using T = Tensor<double>;

T random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  T::Array data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) data(i) = dist(gen);
  return T(std::move(shape), std::move(data));
}

// Triple-loop reference product.
T naive_matmul(const T& a, const T& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  T::Array out = T::Array::Zero(m * n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index p = 0; p < k; ++p) out(i * n + j) += a[i * k + p] * b[p * n + j];
  return T({m, n}, out);
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(T({2, 3}, T::Array::Zero(5)), ShapeError);
  EXPECT_EQ(T::zeros({2, 3}).numel(), 6);
}

TEST(Ops, MatmulIdentity) {
  T eye = T::from({2, 2}, {1, 0, 0, 1});
  T a = T::from({2, 2}, {3, -1, 2, 5});
  EXPECT_TRUE((matmul(eye, a).array() == a.array()).all());
}

TEST(Ops, MatmulHandExample) {
  T a = T::from({2, 2}, {1, 2, 3, 4});
  T b = T::from({2, 2}, {5, 6, 7, 8});
  T c = matmul(a, b);
  const T::Array want = (T::Array(4) << 19, 22, 43, 50).finished();
  EXPECT_TRUE((c.array() == want).all());
}

TEST(Ops, MatmulMatchesTripleLoop) {
  std::mt19937_64 gen(3);
  T a = random_tensor({5, 7}, gen);
  T b = random_tensor({7, 3}, gen);
  EXPECT_LT((matmul(a, b).array() - naive_matmul(a, b).array()).abs().maxCoeff(), 1e-12);
  T bt = random_tensor({3, 7}, gen);
  T btt = T({7, 3}, bt.matrix().transpose().eval().reshaped<Eigen::RowMajor>());
  EXPECT_LT((matmul_transposed(a, bt).array() - naive_matmul(a, btt).array()).abs().maxCoeff(),
            1e-12);
}

TEST(Ops, MatmulShapeErrorNamesOp) {
  try {
    matmul(T::zeros({2, 3}), T::zeros({2, 3}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2 x 3]"), std::string::npos);
  }
}

TEST(Ops, Relu) {
  T r = relu(T::from({3}, {-1, 0, 2}));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 2.0);
}

TEST(Ops, TrailingBroadcast) {
  T a = T::from({2, 3}, {1, 2, 3, 4, 5, 6});
  T b = T::from({3}, {10, 20, 30});
  T c = add(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(c[4], 25.0);
  T d = mul(b, a);
  EXPECT_EQ(d[5], 180.0);
  EXPECT_EQ(sub(a, T::scalar(1))[0], 0.0);
  EXPECT_THROW(add(a, T::zeros({2})), ShapeError);
}

TEST(Ops, CheckedModeRejectsNonFinite) {
  set_checked_mode(true);
  T bad = T::from({2}, {1.0, std::nan("")});
  EXPECT_THROW(exp(bad), NonFiniteError);
  set_checked_mode(false);
  EXPECT_NO_THROW(exp(bad));
}

TEST(Backward, SquareAtThree) {
  T x = T::parameter({}, T::Array::Constant(1, 3.0));
  Tape<double> tape;
  T y = square(x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x)(0), 6.0);
  EXPECT_DOUBLE_EQ(tape.grad(y)(0), 1.0);
}

TEST(Backward, ConstantRootGivesZeroGrad) {
  T x = T::parameter({3}, T::Array::Ones(3));
  T w = T::parameter({3}, T::Array::Ones(3));
  Tape<double> tape;
  T y = sum(w);
  (void)x;
  tape.backward(y);
  EXPECT_TRUE((tape.grad(x).array() == 0.0).all());
}

TEST(Backward, RejectsNonScalarAndUnrecordedRoots) {
  Tape<double> tape;
  T x = T::parameter({2}, T::Array::Ones(2));
  EXPECT_THROW(tape.backward(exp(x)), ShapeError);
  EXPECT_THROW(tape.backward(T::scalar(1.0)), std::logic_error);
}

TEST(Backward, SigmoidOfProductMatchesFiniteDifferences) {
  std::mt19937_64 gen(11);
  T w = random_tensor({4, 3}, gen, -0.5, 0.5);
  T x = random_tensor({3, 2}, gen, -0.5, 0.5);
  T wp = T::parameter(w.shape(), w.array());
  T xp = T::parameter(x.shape(), x.array());
  const double err = grad_check([&] { return sum(sigmoid(matmul(wp, xp))); }, {wp, xp});
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 gen(5);
  T x = random_tensor({6}, gen);
  EXPECT_LT(grad_check([](const T& v) { return sum(v); }, x, 1e-5), 1e-10);
}

// Every primitive, each supported rank, random inputs.
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, UnaryPrimitives) {
  std::mt19937_64 gen(100 + GetParam());
  const Shape shapes[] = {{5}, {3, 4}, {2, 3, 2}};
  for (const Shape& s : shapes) {
    T x = random_tensor(s, gen, 0.2, 1.5);  // positive for log; away from relu kink
    T xn = random_tensor(s, gen, -2.0, 2.0);
    T weights = random_tensor(s, gen);
    auto weighted = [&](const T& y) { return sum(mul(y, weights)); };
    switch (GetParam()) {
      case 0: EXPECT_LT(grad_check([&](const T& v) { return weighted(exp(v)); }, xn, 1e-6), 1e-4); break;
      case 1: EXPECT_LT(grad_check([&](const T& v) { return weighted(log(v)); }, x, 1e-6), 1e-4); break;
      case 2: EXPECT_LT(grad_check([&](const T& v) { return weighted(relu(v)); }, x, 1e-6), 1e-4); break;
      case 3: EXPECT_LT(grad_check([&](const T& v) { return weighted(sigmoid(v)); }, xn, 1e-6), 1e-4); break;
      case 4: EXPECT_LT(grad_check([&](const T& v) { return weighted(silu(v)); }, xn, 1e-6), 1e-4); break;
      case 5: EXPECT_LT(grad_check([&](const T& v) { return weighted(softplus(v)); }, xn, 1e-6), 1e-4); break;
      case 6: EXPECT_LT(grad_check([&](const T& v) { return weighted(square(v)); }, xn, 1e-6), 1e-4); break;
      case 7: EXPECT_LT(grad_check([&](const T& v) { return mean(mul(v, v)); }, xn, 1e-6), 1e-4); break;
      case 8: EXPECT_LT(grad_check([&](const T& v) { return weighted(reverse(v, 0)); }, xn, 1e-6), 1e-4); break;
      case 9: EXPECT_LT(grad_check([&](const T& v) { return weighted(scale(v, -2.5)); }, xn, 1e-6), 1e-4); break;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllUnary, PrimitiveGrad, ::testing::Range(0, 10));

TEST(PrimitiveGradBinary, BroadcastingArithmetic) {
  std::mt19937_64 gen(21);
  T a = T::parameter({3, 4}, random_tensor({3, 4}, gen).array());
  T b = T::parameter({4}, random_tensor({4}, gen).array());
  T s = T::parameter({}, random_tensor({1}, gen).array());
  EXPECT_LT(grad_check([&] { return sum(square(add(a, b))); }, {a, b}), 1e-4);
  EXPECT_LT(grad_check([&] { return sum(square(sub(b, a))); }, {a, b}), 1e-4);
  EXPECT_LT(grad_check([&] { return sum(square(mul(a, b))); }, {a, b}), 1e-4);
  EXPECT_LT(grad_check([&] { return sum(square(mul(s, a))); }, {a, s}), 1e-4);
  EXPECT_LT(grad_check([&] { return sum(square(mul(a, a))); }, {a}), 1e-4);
}

TEST(PrimitiveGradBinary, MatmulBothForms) {
  std::mt19937_64 gen(22);
  T a = T::parameter({3, 5}, random_tensor({3, 5}, gen).array());
  T b = T::parameter({5, 2}, random_tensor({5, 2}, gen).array());
  T c = T::parameter({4, 5}, random_tensor({4, 5}, gen).array());
  EXPECT_LT(grad_check([&] { return sum(square(matmul(a, b))); }, {a, b}), 1e-4);
  EXPECT_LT(grad_check([&] { return sum(square(matmul_transposed(a, c))); }, {a, c}), 1e-4);
}

TEST(PrimitiveGradStructure, ConcatSliceBroadcastReshape) {
  std::mt19937_64 gen(23);
  T a = T::parameter({2, 3, 2}, random_tensor({2, 3, 2}, gen).array());
  T b = T::parameter({2, 3, 2}, random_tensor({2, 3, 2}, gen).array());
  T v = T::parameter({3}, random_tensor({3}, gen).array());
  for (int axis = 0; axis < 3; ++axis) {
    Shape joined = a.shape();
    joined[axis] *= 2;
    T w = random_tensor(joined, gen);
    EXPECT_LT(grad_check([&] { return sum(mul(concat<double>({a, square(b)}, axis), w)); }, {a, b}),
              1e-4);
    EXPECT_LT(grad_check([&] { return sum(square(slice(a, axis, 1, 1))); }, {a}), 1e-4);
  }
  EXPECT_LT(grad_check([&] { return sum(square(broadcast(v, {4, 3}))); }, {v}), 1e-4);
  EXPECT_LT(grad_check([&] { return sum(mul(reshape(a, {6, 2}), reshape(b, {6, 2}))); }, {a, b}),
            1e-4);
}

TEST(PrimitiveGradStructure, StridedAndRepeatedRows) {
  std::mt19937_64 gen(24);
  T x = T::parameter({7, 3}, random_tensor({7, 3}, gen).array());
  T w = random_tensor({3, 3}, gen);
  T seg = T::parameter({2, 3}, random_tensor({2, 3}, gen).array());
  T w2 = random_tensor({7, 3}, gen);
  EXPECT_LT(grad_check([&] { return sum(mul(strided_rows(x, 3), w)); }, {x}), 1e-4);
  EXPECT_LT(grad_check([&] { return sum(mul(repeat_rows(seg, 4, 7), w2)); }, {seg}), 1e-4);
}

TEST(PrimitiveGradFused, DepthwiseConvAndGroupNorm) {
  std::mt19937_64 gen(25);
  T x = T::parameter({6, 4}, random_tensor({6, 4}, gen).array());
  T k3 = T::parameter({4, 3}, random_tensor({4, 3}, gen).array());
  T k4 = T::parameter({4, 4}, random_tensor({4, 4}, gen).array());
  T b = T::parameter({4}, random_tensor({4}, gen).array());
  T w = random_tensor({6, 4}, gen);
  EXPECT_LT(grad_check([&] { return sum(mul(depthwise_conv1d(x, k3, b, 1), w)); }, {x, k3, b}), 1e-4);
  EXPECT_LT(grad_check([&] { return sum(mul(depthwise_conv1d(x, k4, b, 3), w)); }, {x, k4, b}), 1e-4);
  T gamma = T::parameter({4}, random_tensor({4}, gen, 0.5, 1.5).array());
  T beta = T::parameter({4}, random_tensor({4}, gen).array());
  EXPECT_LT(grad_check([&] { return sum(mul(group_norm(x, gamma, beta, 2, 1e-5), w)); },
                       {x, gamma, beta}),
            1e-4);
}

TEST(PrimitiveGradFused, DiscretizeAndScan) {
  std::mt19937_64 gen(26);
  const Index len = 5, di = 3, ns = 2;
  T delta = T::parameter({len, di}, random_tensor({len, di}, gen, 0.05, 0.5).array());
  T a = T::parameter({di, ns}, random_tensor({di, ns}, gen, -2.0, -0.5).array());
  T b = T::parameter({len, ns}, random_tensor({len, ns}, gen).array());
  T c = T::parameter({len, ns}, random_tensor({len, ns}, gen).array());
  T d = T::parameter({di}, random_tensor({di}, gen).array());
  T u = T::parameter({len, di}, random_tensor({len, di}, gen).array());
  T w = random_tensor({len, di}, gen);
  auto f = [&] {
    return sum(mul(selective_scan(discretize_a(delta, a), discretize_b(delta, b), c, d, u), w));
  };
  EXPECT_LT(grad_check(f, {delta, a, b, c, d, u}), 1e-4);
}

TEST(Properties, ConcatThenSliceRoundTrip) {
  std::mt19937_64 gen(31);
  for (int axis = 0; axis < 2; ++axis) {
    T a = random_tensor({3, 4}, gen);
    T b = random_tensor({3, 4}, gen);
    T back = slice(concat<double>({a, b}, axis), axis, 0, a.dim(axis));
    EXPECT_TRUE((back.array() == a.array()).all());
  }
  T a = random_tensor({2, 5, 3}, gen);
  T b = random_tensor({2, 2, 3}, gen);
  EXPECT_TRUE((slice(concat<double>({a, b}, 1), 1, 0, 5).array() == a.array()).all());
}

TEST(Properties, ReverseIsInvolution) {
  std::mt19937_64 gen(32);
  for (int trial = 0; trial < 20; ++trial) {
    T x = random_tensor({1 + trial % 4, 2 + trial % 3, 3}, gen);
    for (int axis = 0; axis < 3; ++axis) {
      EXPECT_TRUE((reverse(reverse(x, axis), axis).array() == x.array()).all());
    }
  }
}

TEST(Properties, ForwardIsBitwiseDeterministic) {
  std::mt19937_64 gen(33);
  T x = random_tensor({8, 16}, gen);
  T w = random_tensor({16, 16}, gen);
  T g = T::constant({16}, 1.0), z = T::zeros({16});
  auto run = [&] { return silu(group_norm(matmul(x, w), g, z, 4, 1e-5)); };
  EXPECT_TRUE((run().array() == run().array()).all());
}

TEST(Tape, UnrelatedTapesDoNotShareNodes) {
  T p = T::parameter({2}, T::Array::Ones(2));
  T y_first;
  {
    Tape<double> tape;
    y_first = exp(p);
  }
  Tape<double> tape;
  T loss = sum(mul(y_first, p));
  tape.backward(loss);
  // y_first is a constant on the new tape.
  EXPECT_NEAR(tape.grad(p)(0), std::exp(1.0), 1e-12);
}

}  // namespace
}  // namespace lt2m
