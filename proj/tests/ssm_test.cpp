#include "lt2m/grad_check.hpp"
#include "lt2m/ssm.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace lt2m {
namespace {

using T = Tensor<double>;

T random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  T::Array data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) data(i) = rng.uniform(lo, hi);
  return T(std::move(shape), std::move(data));
}

SsmConfig small_config(Index d_model = 16) {
  SsmConfig c;
  c.d_model = d_model;
  return c;
}

// Counts Mamba trainable scalars from the layer formulas.
Index mamba_param_oracle(Index d, Index expand, Index n, Index conv) {
  const Index di = expand * d;
  const Index r = (d + 15) / 16;
  const Index in_proj = d * 2 * di;
  const Index conv1d = di * conv + di;
  const Index x_proj = di * (r + 2 * n);
  const Index dt_proj = r * di + di;
  const Index a_log = di * n;
  const Index d_skip = di;
  const Index out_proj = di * d;
  return in_proj + conv1d + x_proj + dt_proj + a_log + d_skip + out_proj;
}

TEST(Discretize, ZeroStepFreezesState) {
  T a = T::from({1, 1}, {-3.0});
  T b = T::from({1, 1}, {2.0});
  auto [abar, bbar] = discretize(a, b, T::from({1, 1}, {0.0}));
  EXPECT_EQ(abar.item(), 1.0);
  EXPECT_EQ(bbar.item(), 0.0);
}

TEST(Discretize, HalfDecayAtLnTwo) {
  auto [abar, bbar] = discretize(T::from({1, 1}, {-1.0}), T::from({1, 1}, {1.0}),
                                 T::from({1, 1}, {std::log(2.0)}));
  EXPECT_NEAR(abar.item(), 0.5, 1e-15);
  EXPECT_NEAR(bbar.item(), std::log(2.0), 1e-15);
}

TEST(Discretize, StronglyNegativeAIsMemoryless) {
  auto [abar, bbar] = discretize(T::from({1, 1}, {-1e6}), T::from({1, 1}, {1.0}),
                                 T::from({1, 1}, {0.1}));
  EXPECT_LT(abar.item(), 1e-300);
  (void)bbar;
}

TEST(Discretize, DecayInUnitIntervalForNegativeA) {
  Rng rng(1);
  T a = random_tensor({4, 3}, rng, -5.0, -0.01);
  T b = random_tensor({6, 3}, rng);
  T delta = random_tensor({6, 4}, rng, 0.001, 1.0);
  auto [abar, bbar] = discretize(a, b, delta);
  EXPECT_EQ(abar.shape(), (Shape{6, 4, 3}));
  EXPECT_TRUE((abar.array() > 0.0).all() && (abar.array() < 1.0).all());
}

TEST(Discretize, CheckedModeRejectsNonPositiveStep) {
  set_checked_mode(true);
  EXPECT_THROW(discretize(T::from({1, 1}, {-1.0}), T::from({1, 1}, {1.0}), T::from({1, 1}, {0.0})),
               NonFiniteError);
  set_checked_mode(false);
}

TEST(SelectiveScan, ZeroInputZeroOutput) {
  Rng rng(2);
  T abar = random_tensor({5, 3, 2}, rng, 0.1, 0.9);
  T bbar = random_tensor({5, 3, 2}, rng);
  T c = random_tensor({5, 2}, rng);
  T d = random_tensor({3}, rng);
  EXPECT_EQ(selective_scan(abar, bbar, c, d, T::zeros({5, 3})).array().abs().maxCoeff(), 0.0);
}

TEST(SelectiveScan, HandUnrolledScalarRecurrence) {
  T y = selective_scan(T::constant({2, 1, 1}, 0.5), T::constant({2, 1, 1}, 1.0),
                       T::constant({2, 1}, 1.0), T::zeros({1}), T::from({2, 1}, {1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.5);
}

TEST(SelectiveScan, ZeroDecayHasNoMemory) {
  Rng rng(3);
  const Index len = 4, di = 3, ns = 2;
  T bbar = random_tensor({len, di, ns}, rng);
  T c = random_tensor({len, ns}, rng);
  T d = random_tensor({di}, rng);
  T u = random_tensor({len, di}, rng);
  T y = selective_scan(T::zeros({len, di, ns}), bbar, c, d, u);
  for (Index t = 0; t < len; ++t) {
    for (Index k = 0; k < di; ++k) {
      double expect = d[k] * u[t * di + k];
      for (Index n = 0; n < ns; ++n) expect += c[t * ns + n] * bbar[(t * di + k) * ns + n] * u[t * di + k];
      EXPECT_NEAR(y[t * di + k], expect, 1e-14);
    }
  }
}

TEST(SelectiveScan, LengthMismatchRejected) {
  EXPECT_THROW(selective_scan(T::zeros({3, 2, 1}), T::zeros({3, 2, 1}), T::zeros({2, 1}),
                              T::zeros({2}), T::zeros({3, 2})),
               ShapeError);
}

TEST(PseudoBidirectional, ScalarCumulativeSumExample) {
  // Abar = 1, Bbar = 1, C = 1, D = 0: the scan is a running sum.
  T x = T::from({2, 1}, {1, 2});
  T doubled = concat<double>({reverse(x, 0), x}, 0);
  T y = selective_scan(T::constant({4, 1, 1}, 1.0), T::constant({4, 1, 1}, 1.0),
                       T::constant({4, 1}, 1.0), T::zeros({1}), doubled);
  EXPECT_EQ(y[0], 2.0);
  EXPECT_EQ(y[1], 3.0);
  EXPECT_EQ(y[2], 4.0);
  EXPECT_EQ(y[3], 6.0);
  T kept = slice(y, 0, 2, 2);
  EXPECT_EQ(kept[0], 4.0);
  EXPECT_EQ(kept[1], 6.0);
}

TEST(MambaBlock, ZeroInputZeroOutput) {
  Rng rng(4);
  auto block = MambaBlock<double>::init(small_config(), rng);
  EXPECT_EQ(block.forward(T::zeros({7, 16})).array().abs().maxCoeff(), 0.0);
}

TEST(MambaBlock, ShapeContract) {
  Rng rng(5);
  auto block = MambaBlock<double>::init(small_config(), rng);
  for (Index len : {1, 7, 64}) {
    EXPECT_EQ(block.forward(random_tensor({len, 16}, rng)).shape(), (Shape{len, 16}));
  }
}

TEST(MambaBlock, InitialisationInvariants) {
  Rng rng(6);
  auto block = MambaBlock<double>::init(small_config(), rng);
  const T a = scale(exp(block.a_log), -1.0);
  EXPECT_TRUE((a.array() < 0.0).all());
  EXPECT_DOUBLE_EQ(a[0], -1.0);
  EXPECT_DOUBLE_EQ(a[15], -16.0);
  const T dt = softplus(block.dt_proj.bias);
  EXPECT_GE(dt.array().minCoeff(), 0.01 - 1e-12);
  EXPECT_LE(dt.array().maxCoeff(), 0.1 + 1e-12);
}

TEST(MambaBlock, ParameterCountMatchesOracle) {
  Rng rng(7);
  SsmConfig paper;  // D = 256, expand 2, N = 16, conv 4
  auto block = MambaBlock<float>::init(paper, rng);
  ParamList<float> params;
  block.collect(params, "m");
  EXPECT_EQ(count_scalars(params), mamba_param_oracle(256, 2, 16, 4));
  EXPECT_EQ(count_scalars(params), 437760);
}

TEST(MambaBlock, PassesGradCheck) {
  Rng rng(8);
  auto block = MambaBlock<double>::init(small_config(), rng);
  T x = T::parameter({5, 16}, random_tensor({5, 16}, rng).array());
  T w = random_tensor({5, 16}, rng);
  ParamList<double> params;
  block.collect(params, "m");
  std::vector<T> leaves{x};
  for (auto& [name, p] : params) leaves.push_back(p);
  EXPECT_LT(grad_check([&] { return sum(mul(block.forward(x), w)); }, leaves), 1e-3);
}

TEST(ScanModes, ZeroInputZeroOutput) {
  for (ScanMode mode : {ScanMode::kSds, ScanMode::kBds, ScanMode::kPbds}) {
    Rng rng(9);
    auto scan = ScanModule<double>::init(small_config(), mode, rng);
    EXPECT_EQ(scan.forward(T::zeros({6, 16})).array().abs().maxCoeff(), 0.0) << to_string(mode);
  }
}

TEST(ScanModes, ParameterCounts) {
  auto count = [](ScanMode mode) {
    Rng rng(10);
    auto scan = ScanModule<float>::init(small_config(64), mode, rng);
    ParamList<float> p;
    scan.collect(p, "s");
    return count_scalars(p);
  };
  EXPECT_EQ(count(ScanMode::kPbds), count(ScanMode::kSds));
  EXPECT_GT(count(ScanMode::kBds), count(ScanMode::kSds));
}

TEST(ScanModes, PbdsUsesTheSdsParameters) {
  Rng a(11), b(11);
  auto sds = ScanModule<double>::init(small_config(), ScanMode::kSds, a);
  auto pbds = ScanModule<double>::init(small_config(), ScanMode::kPbds, b);
  ParamList<double> ps, pp;
  sds.collect(ps, "s");
  pbds.collect(pp, "s");
  ASSERT_EQ(ps.size(), pp.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EXPECT_EQ(ps[i].first, pp[i].first);
    EXPECT_TRUE((ps[i].second.array() == pp[i].second.array()).all());
  }
  EXPECT_FALSE(pbds.backward_block.has_value());
}

TEST(ScanModes, PbdsEqualsSliceOfConcat) {
  Rng rng(12);
  auto scan = ScanModule<double>::init(small_config(), ScanMode::kPbds, rng);
  for (Index len : {1, 7, 33, 64}) {
    T x = random_tensor({len, 16}, rng);
    T reference =
        slice(scan.forward_block.forward(concat<double>({reverse(x, 0), x}, 0)), 0, len, len);
    T y = scan.forward(x);
    EXPECT_EQ(y.shape(), (Shape{len, 16}));
    EXPECT_EQ((y.array() - reference.array()).abs().maxCoeff(), 0.0);
  }
}

TEST(ScanModes, BdsSumsForwardAndReversedBranches) {
  Rng rng(13);
  auto scan = ScanModule<double>::init(small_config(), ScanMode::kBds, rng);
  T x = random_tensor({9, 16}, rng);
  T reference = add(scan.forward_block.forward(x),
                    reverse(scan.backward_block->forward(reverse(x, 0)), 0));
  EXPECT_EQ((scan.forward(x).array() - reference.array()).abs().maxCoeff(), 0.0);
}

// d y_t / d u_j via the tape, one output row at a time.
std::vector<std::vector<double>> jacobian_row_norms(const ScanModule<double>& scan, const T& x) {
  const Index len = x.dim(0), d = x.dim(1);
  std::vector<std::vector<double>> out(len, std::vector<double>(len, 0.0));
  T leaf = T::parameter(x.shape(), x.array());
  for (Index t = 0; t < len; ++t) {
    Tape<double> tape;
    T y = scan.forward(leaf);
    tape.backward(sum(slice(y, 0, t, 1)));
    const T::Array g = tape.grad(leaf);
    for (Index j = 0; j < len; ++j) out[t][j] = g.segment(j * d, d).abs().maxCoeff();
  }
  return out;
}

TEST(ScanModes, SdsIsStrictlyCausal) {
  Rng rng(14);
  auto scan = ScanModule<double>::init(small_config(), ScanMode::kSds, rng);
  const auto jac = jacobian_row_norms(scan, random_tensor({8, 16}, rng));
  for (Index t = 0; t < 8; ++t) {
    for (Index j = 0; j < 8; ++j) {
      if (j > t) EXPECT_EQ(jac[t][j], 0.0) << t << "," << j;
      else EXPECT_GT(jac[t][j], 1e-9) << t << "," << j;
    }
  }
}

TEST(ScanModes, PbdsHasFullReceptiveField) {
  Rng rng(15);
  auto scan = ScanModule<double>::init(small_config(), ScanMode::kPbds, rng);
  const Index len = 8;
  T x = random_tensor({len, 16}, rng);
  const T base = scan.forward(x);
  for (Index j = 0; j < len; ++j) {
    T::Array bumped = x.array();
    bumped.segment(j * 16, 16) += 1e-3;
    const T y = scan.forward(T({len, 16}, bumped));
    for (Index t = 0; t < len; ++t) {
      const double diff =
          (y.array().segment(t * 16, 16) - base.array().segment(t * 16, 16)).abs().maxCoeff();
      EXPECT_GT(diff, 1e-9) << "output " << t << " input " << j;
    }
  }
}

TEST(ScanModes, ParseRoundTrip) {
  for (ScanMode mode : {ScanMode::kSds, ScanMode::kBds, ScanMode::kPbds}) {
    EXPECT_EQ(parse_scan_mode(to_string(mode)), mode);
  }
  EXPECT_THROW(parse_scan_mode("diagonal"), std::invalid_argument);
}

}  // namespace
}  // namespace lt2m
