#include "lt2m/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lt2m {

namespace {

template <typename S>
using Array = typename Tensor<S>::Array;
template <typename S>
using Matrix = typename Tensor<S>::Matrix;
template <typename S>
using RowMap = Eigen::Map<Matrix<S>>;
template <typename S>
using ConstRowMap = Eigen::Map<const Matrix<S>>;
// Column-major view used for trailing-dimension broadcasting: element
// (c, r) is flat index r * period + c.
template <typename S>
using ColMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename S>
using ConstColMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;

[[noreturn]] void shape_error(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_rank(const char* op, const Shape& s, int rank) {
  if (static_cast<int>(s.size()) != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " + to_string(s));
  }
}

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_trailing_suffix(const Shape& small, const Shape& large) {
  if (numel(small) == 1) return true;
  const Shape core = strip_leading_ones(small);
  if (core.size() > large.size()) return false;
  return std::equal(core.rbegin(), core.rend(), large.rbegin());
}

enum class Side { kSame, kASmall, kBSmall };

struct BroadcastPlan {
  Side side;
  Shape out;
  Index period;  // numel of the smaller operand
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return {Side::kSame, a, numel(a)};
  const Index na = numel(a);
  const Index nb = numel(b);
  if (na == nb && strip_leading_ones(a) == strip_leading_ones(b)) {
    return {Side::kSame, a.size() >= b.size() ? a : b, na};
  }
  if (nb <= na && is_trailing_suffix(b, a)) return {Side::kBSmall, a, nb};
  if (na < nb && is_trailing_suffix(a, b)) return {Side::kASmall, b, na};
  shape_error(op, "cannot broadcast " + to_string(a) + " with " + to_string(b));
}

// Sums `g` (length reps * period) down to `period` entries.
template <typename S>
void reduce_into(Array<S>& target, const Array<S>& g, Index period) {
  const Index reps = g.size() / period;
  ConstColMap<S> gm(g.data(), period, reps);
  target += gm.rowwise().sum().array();
}

// Splits a shape around `axis` into (outer, axis, inner) extents.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split_at(const char* op, const Shape& s, int& axis) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    shape_error(op, "axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  AxisSplit sp;
  for (int i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.extent = s[axis];
  for (int i = axis + 1; i < r; ++i) sp.inner *= s[i];
  return sp;
}

template <typename S, typename F, typename G>
Tensor<S> unary(OpTag op, const Tensor<S>& x, F&& forward, G&& grad_rule) {
  Array<S> out = forward(x.array());
  Tensor<S> xs = x.detach();
  auto out_shape = x.shape();
  // grad_rule(g, x, y) -> dL/dx
  return make_result<S>(op, std::move(out_shape), std::move(out), {&x},
                        [xs, grad_rule](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (gin[0]) *gin[0] += grad_rule(g, xs.array());
                        });
}

}  // namespace

// ------------------------------------------------------------ elementwise

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const BroadcastPlan p = plan_broadcast("add", a.shape(), b.shape());
  Array<S> out;
  const Index n = numel(p.out);
  switch (p.side) {
    case Side::kSame: out = a.array() + b.array(); break;
    case Side::kBSmall:
      out.resize(n);
      ColMap<S>(out.data(), p.period, n / p.period) =
          ConstColMap<S>(a.array().data(), p.period, n / p.period).colwise() +
          b.array().matrix();
      break;
    case Side::kASmall:
      out.resize(n);
      ColMap<S>(out.data(), p.period, n / p.period) =
          ConstColMap<S>(b.array().data(), p.period, n / p.period).colwise() +
          a.array().matrix();
      break;
  }
  return make_result<S>(OpTag::kAdd, p.out, std::move(out), {&a, &b},
                        [p](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          for (int i = 0; i < 2; ++i) {
                            if (!gin[i]) continue;
                            const bool small = (i == 0 && p.side == Side::kASmall) ||
                                               (i == 1 && p.side == Side::kBSmall);
                            if (small) {
                              reduce_into<S>(*gin[i], g, p.period);
                            } else {
                              *gin[i] += g;
                            }
                          }
                        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  const BroadcastPlan p = plan_broadcast("sub", a.shape(), b.shape());
  Array<S> out;
  const Index n = numel(p.out);
  switch (p.side) {
    case Side::kSame: out = a.array() - b.array(); break;
    case Side::kBSmall:
      out.resize(n);
      ColMap<S>(out.data(), p.period, n / p.period) =
          ConstColMap<S>(a.array().data(), p.period, n / p.period).colwise() -
          b.array().matrix();
      break;
    case Side::kASmall:
      out.resize(n);
      ColMap<S>(out.data(), p.period, n / p.period) =
          (-ConstColMap<S>(b.array().data(), p.period, n / p.period)).colwise() +
          a.array().matrix();
      break;
  }
  return make_result<S>(OpTag::kSub, p.out, std::move(out), {&a, &b},
                        [p](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          for (int i = 0; i < 2; ++i) {
                            if (!gin[i]) continue;
                            const bool small = (i == 0 && p.side == Side::kASmall) ||
                                               (i == 1 && p.side == Side::kBSmall);
                            const Array<S> gi = (i == 0) ? Array<S>(g) : Array<S>(-g);
                            if (small) {
                              reduce_into<S>(*gin[i], gi, p.period);
                            } else {
                              *gin[i] += gi;
                            }
                          }
                        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  const BroadcastPlan p = plan_broadcast("mul", a.shape(), b.shape());
  const Index n = numel(p.out);
  const Index reps = n / p.period;
  Array<S> out(n);
  switch (p.side) {
    case Side::kSame: out = a.array() * b.array(); break;
    case Side::kBSmall:
      ColMap<S>(out.data(), p.period, reps) =
          (ConstColMap<S>(a.array().data(), p.period, reps).array().colwise() * b.array())
              .matrix();
      break;
    case Side::kASmall:
      ColMap<S>(out.data(), p.period, reps) =
          (ConstColMap<S>(b.array().data(), p.period, reps).array().colwise() * a.array())
              .matrix();
      break;
  }
  Tensor<S> as = a.detach();
  Tensor<S> bs = b.detach();
  return make_result<S>(
      OpTag::kMul, p.out, std::move(out), {&a, &b},
      [p, as, bs, reps](const Array<S>& g, std::vector<Array<S>*>& gin) {
        const Tensor<S>* other[2] = {&bs, &as};
        for (int i = 0; i < 2; ++i) {
          if (!gin[i]) continue;
          const Array<S>& o = other[i]->array();
          const bool small = (i == 0 && p.side == Side::kASmall) ||
                             (i == 1 && p.side == Side::kBSmall);
          if (p.side == Side::kSame) {
            *gin[i] += g * o;
          } else if (small) {
            // other operand is full size
            reduce_into<S>(*gin[i], Array<S>(g * o), p.period);
          } else {
            // other operand is the small one; repeat it
            Array<S> gi(g.size());
            ColMap<S>(gi.data(), p.period, reps) =
                (ConstColMap<S>(g.data(), p.period, reps).array().colwise() * o).matrix();
            *gin[i] += gi;
          }
        }
      });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    shape_error("matmul", "inner dimensions differ: " + to_string(a.shape()) + " . " +
                              to_string(b.shape()));
  }
  Array<S> out(m * n);
  RowMap<S>(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  Tensor<S> as = a.detach();
  Tensor<S> bs = b.detach();
  return make_result<S>(OpTag::kMatmul, {m, n}, std::move(out), {&a, &b},
                        [as, bs, m, n, k](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          ConstRowMap<S> gm(g.data(), m, n);
                          if (gin[0]) RowMap<S>(gin[0]->data(), m, k).noalias() += gm * bs.matrix().transpose();
                          if (gin[1]) RowMap<S>(gin[1]->data(), k, n).noalias() += as.matrix().transpose() * gm;
                        });
}

template <typename S>
Tensor<S> matmul_transposed(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    shape_error("matmul", "inner dimensions differ: " + to_string(a.shape()) + " . " +
                              to_string(b.shape()) + "^T");
  }
  Array<S> out(m * n);
  RowMap<S>(out.data(), m, n).noalias() = a.matrix() * b.matrix().transpose();
  Tensor<S> as = a.detach();
  Tensor<S> bs = b.detach();
  return make_result<S>(OpTag::kMatmul, {m, n}, std::move(out), {&a, &b},
                        [as, bs, m, n, k](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          ConstRowMap<S> gm(g.data(), m, n);
                          if (gin[0]) RowMap<S>(gin[0]->data(), m, k).noalias() += gm * bs.matrix();
                          if (gin[1]) RowMap<S>(gin[1]->data(), n, k).noalias() += gm.transpose() * as.matrix();
                        });
}

// ----------------------------------------------------------------- unary

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return unary(
      OpTag::kExp, x, [](const Array<S>& v) -> Array<S> { return v.exp(); },
      [](const Array<S>& g, const Array<S>& v) -> Array<S> { return g * v.exp(); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return unary(
      OpTag::kLog, x, [](const Array<S>& v) -> Array<S> { return v.log(); },
      [](const Array<S>& g, const Array<S>& v) -> Array<S> { return g / v; });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary(
      OpTag::kRelu, x, [](const Array<S>& v) -> Array<S> { return v.max(S(0)); },
      [](const Array<S>& g, const Array<S>& v) -> Array<S> {
        return (v > S(0)).select(g, S(0));
      });
}

namespace {
template <typename S>
Array<S> logistic(const Array<S>& v) {
  return (S(1) + (-v).exp()).inverse();
}
template <typename S>
Array<S> stable_softplus(const Array<S>& v) {
  return v.max(S(0)) + (-v.abs()).exp().log1p();
}
}  // namespace

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary(
      OpTag::kSigmoid, x, [](const Array<S>& v) -> Array<S> { return logistic<S>(v); },
      [](const Array<S>& g, const Array<S>& v) -> Array<S> {
        const Array<S> s = logistic<S>(v);
        return g * s * (S(1) - s);
      });
}

template <typename S>
Tensor<S> silu(const Tensor<S>& x) {
  return unary(
      OpTag::kSilu, x, [](const Array<S>& v) -> Array<S> { return v * logistic<S>(v); },
      [](const Array<S>& g, const Array<S>& v) -> Array<S> {
        const Array<S> s = logistic<S>(v);
        return g * (s + v * s * (S(1) - s));
      });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  return unary(
      OpTag::kSoftplus, x, [](const Array<S>& v) -> Array<S> { return stable_softplus<S>(v); },
      [](const Array<S>& g, const Array<S>& v) -> Array<S> { return g * logistic<S>(v); });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  return unary(
      OpTag::kSquare, x, [](const Array<S>& v) -> Array<S> { return v.square(); },
      [](const Array<S>& g, const Array<S>& v) -> Array<S> { return S(2) * g * v; });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  return unary(
      OpTag::kScale, x, [factor](const Array<S>& v) -> Array<S> { return v * factor; },
      [factor](const Array<S>& g, const Array<S>&) -> Array<S> { return g * factor; });
}

// ------------------------------------------------------------ reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Array<S> out = Array<S>::Constant(1, x.array().sum());
  const Index n = x.numel();
  return make_result<S>(OpTag::kSum, {}, std::move(out), {&x},
                        [n](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (gin[0]) *gin[0] += g(0);
                          (void)n;
                        });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  const Index n = x.numel();
  Array<S> out = Array<S>::Constant(1, x.array().sum() / static_cast<S>(n));
  return make_result<S>(OpTag::kMean, {}, std::move(out), {&x},
                        [n](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (gin[0]) *gin[0] += g(0) / static_cast<S>(n);
                        });
}

// ------------------------------------------------------------- structure

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  int ax = axis;
  const AxisSplit first = split_at("concat", parts[0].shape(), ax);
  Shape out_shape = parts[0].shape();
  std::vector<Index> extents;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) shape_error("concat", "rank mismatch");
    for (int i = 0; i < p.rank(); ++i) {
      if (i != ax && p.shape()[i] != out_shape[i]) {
        shape_error("concat", "dimension " + std::to_string(i) + " differs: " +
                                  to_string(p.shape()) + " vs " + to_string(out_shape));
      }
    }
    extents.push_back(p.shape()[ax]);
    total += p.shape()[ax];
  }
  out_shape[ax] = total;
  const Index outer = first.outer, inner = first.inner;
  Array<S> out(outer * total * inner);
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Index block = extents[k] * inner;
    for (Index o = 0; o < outer; ++o) {
      out.segment(o * total * inner + offset * inner, block) =
          parts[k].array().segment(o * block, block);
    }
    offset += extents[k];
  }
  std::vector<const Tensor<S>*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return make_result<S>(OpTag::kConcat, out_shape, std::move(out), inputs,
                        [extents, outer, inner, total](const Array<S>& g,
                                                       std::vector<Array<S>*>& gin) {
                          Index off = 0;
                          for (std::size_t k = 0; k < extents.size(); ++k) {
                            const Index block = extents[k] * inner;
                            if (gin[k]) {
                              for (Index o = 0; o < outer; ++o) {
                                gin[k]->segment(o * block, block) +=
                                    g.segment(o * total * inner + off * inner, block);
                              }
                            }
                            off += extents[k];
                          }
                        });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index length) {
  int ax = axis;
  const AxisSplit sp = split_at("slice", x.shape(), ax);
  if (start < 0 || length <= 0 || start + length > sp.extent) {
    shape_error("slice", "range [" + std::to_string(start) + ", " +
                             std::to_string(start + length) + ") outside axis of extent " +
                             std::to_string(sp.extent));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  const Index block = length * sp.inner;
  Array<S> out(sp.outer * block);
  for (Index o = 0; o < sp.outer; ++o) {
    out.segment(o * block, block) =
        x.array().segment(o * sp.extent * sp.inner + start * sp.inner, block);
  }
  return make_result<S>(OpTag::kSlice, out_shape, std::move(out), {&x},
                        [sp, start, block](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (!gin[0]) return;
                          for (Index o = 0; o < sp.outer; ++o) {
                            gin[0]->segment(o * sp.extent * sp.inner + start * sp.inner, block) +=
                                g.segment(o * block, block);
                          }
                        });
}

namespace {
template <typename S>
void reverse_copy(const Array<S>& in, Array<S>& out, const AxisSplit& sp, bool accumulate) {
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.extent; ++i) {
      const Index src = (o * sp.extent + i) * sp.inner;
      const Index dst = (o * sp.extent + (sp.extent - 1 - i)) * sp.inner;
      if (accumulate) {
        out.segment(dst, sp.inner) += in.segment(src, sp.inner);
      } else {
        out.segment(dst, sp.inner) = in.segment(src, sp.inner);
      }
    }
  }
}
}  // namespace

template <typename S>
Tensor<S> reverse(const Tensor<S>& x, int axis) {
  int ax = axis;
  const AxisSplit sp = split_at("reverse", x.shape(), ax);
  Array<S> out(x.numel());
  reverse_copy<S>(x.array(), out, sp, false);
  return make_result<S>(OpTag::kReverse, x.shape(), std::move(out), {&x},
                        [sp](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (gin[0]) reverse_copy<S>(g, *gin[0], sp, true);
                        });
}

template <typename S>
Tensor<S> broadcast(const Tensor<S>& x, const Shape& shape) {
  if (!is_trailing_suffix(x.shape(), shape)) {
    shape_error("broadcast", "cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  const Index period = x.numel();
  const Index reps = numel(shape) / period;
  Array<S> out = x.array().replicate(reps, 1);
  return make_result<S>(OpTag::kBroadcast, shape, std::move(out), {&x},
                        [period](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (gin[0]) reduce_into<S>(*gin[0], g, period);
                        });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) {
    shape_error("reshape", "cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return make_result<S>(OpTag::kReshape, shape, x.array(), {&x},
                        [](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (gin[0]) *gin[0] += g;
                        });
}

template <typename S>
Tensor<S> strided_rows(const Tensor<S>& x, Index stride) {
  require_rank("strided_rows", x.shape(), 2);
  if (stride <= 0) shape_error("strided_rows", "stride must be positive");
  const Index rows = x.dim(0), cols = x.dim(1);
  const Index out_rows = (rows + stride - 1) / stride;
  Array<S> out(out_rows * cols);
  for (Index i = 0; i < out_rows; ++i) {
    out.segment(i * cols, cols) = x.array().segment(i * stride * cols, cols);
  }
  return make_result<S>(OpTag::kStridedRows, {out_rows, cols}, std::move(out), {&x},
                        [out_rows, cols, stride](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (!gin[0]) return;
                          for (Index i = 0; i < out_rows; ++i) {
                            gin[0]->segment(i * stride * cols, cols) += g.segment(i * cols, cols);
                          }
                        });
}

template <typename S>
Tensor<S> repeat_rows(const Tensor<S>& x, Index repeats, Index length) {
  require_rank("repeat_rows", x.shape(), 2);
  if (repeats <= 0 || length <= 0) shape_error("repeat_rows", "repeats and length must be positive");
  const Index rows = x.dim(0), cols = x.dim(1);
  if ((length + repeats - 1) / repeats != rows) {
    shape_error("repeat_rows", std::to_string(rows) + " rows cannot cover length " +
                                   std::to_string(length) + " at " + std::to_string(repeats) +
                                   " repeats");
  }
  Array<S> out(length * cols);
  for (Index j = 0; j < length; ++j) {
    out.segment(j * cols, cols) = x.array().segment((j / repeats) * cols, cols);
  }
  return make_result<S>(OpTag::kRepeatRows, {length, cols}, std::move(out), {&x},
                        [length, cols, repeats](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          if (!gin[0]) return;
                          for (Index j = 0; j < length; ++j) {
                            gin[0]->segment((j / repeats) * cols, cols) += g.segment(j * cols, cols);
                          }
                        });
}

// ---------------------------------------------------------- convolution

template <typename S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias,
                           Index pad_left) {
  require_rank("depthwise_conv1d", x.shape(), 2);
  require_rank("depthwise_conv1d", kernel.shape(), 2);
  const Index len = x.dim(0), ch = x.dim(1), k = kernel.dim(1);
  if (kernel.dim(0) != ch || bias.numel() != ch) {
    shape_error("depthwise_conv1d", "input has " + std::to_string(ch) + " channels, kernel " +
                                        to_string(kernel.shape()) + ", bias " +
                                        to_string(bias.shape()));
  }
  if (pad_left < 0 || pad_left >= k) shape_error("depthwise_conv1d", "padding out of range");
  Array<S> out(len * ch);
  RowMap<S> om(out.data(), len, ch);
  om.rowwise() = bias.array().matrix().transpose();
  const auto xm = x.matrix();
  const auto km = kernel.matrix();
  for (Index j = 0; j < k; ++j) {
    const Index shift = j - pad_left;
    const Index t0 = std::max<Index>(0, -shift);
    const Index t1 = std::min<Index>(len, len - shift);
    if (t1 <= t0) continue;
    om.middleRows(t0, t1 - t0).array() +=
        xm.middleRows(t0 + shift, t1 - t0).array().rowwise() * km.col(j).transpose().array();
  }
  Tensor<S> xs = x.detach();
  Tensor<S> ks = kernel.detach();
  return make_result<S>(
      OpTag::kDepthwiseConv, {len, ch}, std::move(out), {&x, &kernel, &bias},
      [xs, ks, len, ch, k, pad_left](const Array<S>& g, std::vector<Array<S>*>& gin) {
        ConstRowMap<S> gm(g.data(), len, ch);
        const auto xm = xs.matrix();
        const auto km = ks.matrix();
        for (Index j = 0; j < k; ++j) {
          const Index shift = j - pad_left;
          const Index t0 = std::max<Index>(0, -shift);
          const Index t1 = std::min<Index>(len, len - shift);
          if (t1 <= t0) continue;
          const auto gblk = gm.middleRows(t0, t1 - t0).array();
          if (gin[0]) {
            RowMap<S>(gin[0]->data(), len, ch).middleRows(t0 + shift, t1 - t0).array() +=
                gblk.rowwise() * km.col(j).transpose().array();
          }
          if (gin[1]) {
            RowMap<S> gk(gin[1]->data(), ch, k);
            gk.col(j) += (gblk * xm.middleRows(t0 + shift, t1 - t0).array())
                             .colwise()
                             .sum()
                             .transpose()
                             .matrix();
          }
        }
        if (gin[2]) *gin[2] += gm.colwise().sum().transpose().array();
      });
}

template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     Index groups, S epsilon) {
  require_rank("group_norm", x.shape(), 2);
  const Index len = x.dim(0), ch = x.dim(1);
  if (groups <= 0 || ch % groups != 0) {
    shape_error("group_norm", std::to_string(ch) + " channels not divisible into " +
                                  std::to_string(groups) + " groups");
  }
  if (gamma.numel() != ch || beta.numel() != ch) {
    shape_error("group_norm", "affine parameters must have " + std::to_string(ch) + " entries");
  }
  const Index cg = ch / groups;
  const auto xm = x.matrix();
  Array<S> xhat(len * ch);
  RowMap<S> xh(xhat.data(), len, ch);
  Array<S> inv_std(groups);
  const S count = static_cast<S>(len * cg);
  for (Index grp = 0; grp < groups; ++grp) {
    const auto blk = xm.middleCols(grp * cg, cg).array();
    const S mu = blk.sum() / count;
    const S var = (blk - mu).square().sum() / count;
    inv_std(grp) = S(1) / std::sqrt(var + epsilon);
    xh.middleCols(grp * cg, cg).array() = (blk - mu) * inv_std(grp);
  }
  Array<S> out(len * ch);
  RowMap<S>(out.data(), len, ch) =
      ((xh.array().rowwise() * gamma.array().transpose()).rowwise() + beta.array().transpose())
          .matrix();
  Tensor<S> gs = gamma.detach();
  return make_result<S>(
      OpTag::kGroupNorm, {len, ch}, std::move(out), {&x, &gamma, &beta},
      [xhat = std::move(xhat), inv_std, gs, len, ch, cg, groups, count](
          const Array<S>& g, std::vector<Array<S>*>& gin) {
        ConstRowMap<S> gm(g.data(), len, ch);
        ConstRowMap<S> xh(xhat.data(), len, ch);
        if (gin[1]) *gin[1] += (gm.array() * xh.array()).colwise().sum().transpose();
        if (gin[2]) *gin[2] += gm.colwise().sum().transpose().array();
        if (!gin[0]) return;
        RowMap<S> gx(gin[0]->data(), len, ch);
        const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gxh =
            gm.array().rowwise() * gs.array().transpose();
        for (Index grp = 0; grp < groups; ++grp) {
          const auto gb = gxh.middleCols(grp * cg, cg);
          const auto hb = xh.middleCols(grp * cg, cg).array();
          const S mean_g = gb.sum() / count;
          const S mean_gh = (gb * hb).sum() / count;
          gx.middleCols(grp * cg, cg).array() += inv_std(grp) * (gb - mean_g - hb * mean_gh);
        }
      });
}

// ---------------------------------------------------------- state space

namespace {
template <typename S>
void check_positive_delta(const Tensor<S>& delta) {
  if (checked_mode() && (delta.array() <= S(0)).any()) {
    throw NonFiniteError("discretize: non-positive step size");
  }
}
}  // namespace

template <typename S>
Tensor<S> discretize_a(const Tensor<S>& delta, const Tensor<S>& a) {
  require_rank("discretize_a", delta.shape(), 2);
  require_rank("discretize_a", a.shape(), 2);
  const Index len = delta.dim(0), di = delta.dim(1), ns = a.dim(1);
  if (a.dim(0) != di) {
    shape_error("discretize_a", "delta " + to_string(delta.shape()) + " vs A " + to_string(a.shape()));
  }
  check_positive_delta(delta);
  Array<S> out(len * di * ns);
  const auto am = a.matrix().array();
  const auto dm = delta.matrix();
  for (Index t = 0; t < len; ++t) {
    RowMap<S>(out.data() + t * di * ns, di, ns).array() =
        (am.colwise() * dm.row(t).transpose().array()).exp();
  }
  Tensor<S> ds = delta.detach();
  Tensor<S> as = a.detach();
  Array<S> saved = out;
  return make_result<S>(
      OpTag::kDiscretizeA, {len, di, ns}, std::move(out), {&delta, &a},
      [ds, as, saved = std::move(saved), len, di, ns](const Array<S>& g,
                                                      std::vector<Array<S>*>& gin) {
        const auto am = as.matrix().array();
        const auto dm = ds.matrix();
        for (Index t = 0; t < len; ++t) {
          const auto gt = ConstRowMap<S>(g.data() + t * di * ns, di, ns).array() *
                          ConstRowMap<S>(saved.data() + t * di * ns, di, ns).array();
          if (gin[0]) {
            RowMap<S>(gin[0]->data(), len, di).row(t) +=
                (gt * am).rowwise().sum().transpose().matrix();
          }
          if (gin[1]) {
            RowMap<S>(gin[1]->data(), di, ns).array() += gt.colwise() * dm.row(t).transpose().array();
          }
        }
      });
}

template <typename S>
Tensor<S> discretize_b(const Tensor<S>& delta, const Tensor<S>& b) {
  require_rank("discretize_b", delta.shape(), 2);
  require_rank("discretize_b", b.shape(), 2);
  const Index len = delta.dim(0), di = delta.dim(1), ns = b.dim(1);
  if (b.dim(0) != len) {
    shape_error("discretize_b", "delta " + to_string(delta.shape()) + " vs B " + to_string(b.shape()));
  }
  check_positive_delta(delta);
  Array<S> out(len * di * ns);
  const auto dm = delta.matrix();
  const auto bm = b.matrix();
  for (Index t = 0; t < len; ++t) {
    RowMap<S>(out.data() + t * di * ns, di, ns).noalias() = dm.row(t).transpose() * bm.row(t);
  }
  Tensor<S> ds = delta.detach();
  Tensor<S> bs = b.detach();
  return make_result<S>(OpTag::kDiscretizeB, {len, di, ns}, std::move(out), {&delta, &b},
                        [ds, bs, len, di, ns](const Array<S>& g, std::vector<Array<S>*>& gin) {
                          const auto dm = ds.matrix();
                          const auto bm = bs.matrix();
                          for (Index t = 0; t < len; ++t) {
                            ConstRowMap<S> gt(g.data() + t * di * ns, di, ns);
                            if (gin[0]) {
                              RowMap<S>(gin[0]->data(), len, di).row(t).noalias() +=
                                  (gt * bm.row(t).transpose()).transpose();
                            }
                            if (gin[1]) {
                              RowMap<S>(gin[1]->data(), len, ns).row(t).noalias() += dm.row(t) * gt;
                            }
                          }
                        });
}

template <typename S>
Tensor<S> selective_scan(const Tensor<S>& abar, const Tensor<S>& bbar, const Tensor<S>& c,
                         const Tensor<S>& d_skip, const Tensor<S>& u) {
  require_rank("selective_scan", abar.shape(), 3);
  require_rank("selective_scan", u.shape(), 2);
  require_rank("selective_scan", c.shape(), 2);
  const Index len = u.dim(0), di = u.dim(1), ns = abar.dim(2);
  if (abar.shape() != Shape{len, di, ns} || bbar.shape() != abar.shape() ||
      c.shape() != Shape{len, ns} || d_skip.numel() != di) {
    shape_error("selective_scan", "length/channel mismatch: Abar " + to_string(abar.shape()) +
                                      ", Bbar " + to_string(bbar.shape()) + ", C " +
                                      to_string(c.shape()) + ", D " + to_string(d_skip.shape()) +
                                      ", u " + to_string(u.shape()));
  }
  const Index step = di * ns;
  Array<S> states(len * step);
  Array<S> out(len * di);
  const auto um = u.matrix();
  const auto cm = c.matrix();
  const auto dv = d_skip.array();
  Matrix<S> h = Matrix<S>::Zero(di, ns);
  for (Index t = 0; t < len; ++t) {
    ConstRowMap<S> at(abar.array().data() + t * step, di, ns);
    ConstRowMap<S> bt(bbar.array().data() + t * step, di, ns);
    h.array() = at.array() * h.array() + bt.array().colwise() * um.row(t).transpose().array();
    RowMap<S>(states.data() + t * step, di, ns) = h;
    RowMap<S>(out.data(), len, di).row(t).noalias() = (h * cm.row(t).transpose()).transpose();
    RowMap<S>(out.data(), len, di).row(t).array() += dv.transpose() * um.row(t).array();
  }
  Tensor<S> as = abar.detach(), bs = bbar.detach(), cs = c.detach(), ds = d_skip.detach(),
            us = u.detach();
  return make_result<S>(
      OpTag::kSelectiveScan, {len, di}, std::move(out), {&abar, &bbar, &c, &d_skip, &u},
      [as, bs, cs, ds, us, states = std::move(states), len, di, ns, step](
          const Array<S>& g, std::vector<Array<S>*>& gin) {
        ConstRowMap<S> gy(g.data(), len, di);
        const auto um = us.matrix();
        const auto cm = cs.matrix();
        const auto dv = ds.array();
        Matrix<S> gh = Matrix<S>::Zero(di, ns);
        for (Index t = len - 1; t >= 0; --t) {
          ConstRowMap<S> ht(states.data() + t * step, di, ns);
          ConstRowMap<S> at(as.array().data() + t * step, di, ns);
          ConstRowMap<S> bt(bs.array().data() + t * step, di, ns);
          gh.noalias() += gy.row(t).transpose() * cm.row(t);
          if (gin[2]) RowMap<S>(gin[2]->data(), len, ns).row(t).noalias() += gy.row(t) * ht;
          if (gin[3]) *gin[3] += (gy.row(t).array() * um.row(t).array()).transpose();
          if (gin[4]) {
            RowMap<S>(gin[4]->data(), len, di).row(t).array() +=
                (gh.array() * bt.array()).rowwise().sum().transpose() +
                dv.transpose() * gy.row(t).array();
          }
          if (gin[1]) {
            RowMap<S>(gin[1]->data() + t * step, di, ns).array() +=
                gh.array().colwise() * um.row(t).transpose().array();
          }
          if (gin[0] && t > 0) {
            RowMap<S>(gin[0]->data() + t * step, di, ns).array() +=
                gh.array() * ConstRowMap<S>(states.data() + (t - 1) * step, di, ns).array();
          }
          gh.array() *= at.array();
        }
      });
}

#define LT2M_INSTANTIATE_OPS(S)                                                              \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> matmul_transposed(const Tensor<S>&, const Tensor<S>&);                   \
  template Tensor<S> exp(const Tensor<S>&);                                                   \
  template Tensor<S> log(const Tensor<S>&);                                                   \
  template Tensor<S> relu(const Tensor<S>&);                                                  \
  template Tensor<S> sigmoid(const Tensor<S>&);                                               \
  template Tensor<S> silu(const Tensor<S>&);                                                  \
  template Tensor<S> softplus(const Tensor<S>&);                                              \
  template Tensor<S> square(const Tensor<S>&);                                                \
  template Tensor<S> scale(const Tensor<S>&, S);                                              \
  template Tensor<S> sum(const Tensor<S>&);                                                   \
  template Tensor<S> mean(const Tensor<S>&);                                                  \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                              \
  template Tensor<S> slice(const Tensor<S>&, int, Index, Index);                              \
  template Tensor<S> reverse(const Tensor<S>&, int);                                          \
  template Tensor<S> broadcast(const Tensor<S>&, const Shape&);                               \
  template Tensor<S> reshape(const Tensor<S>&, const Shape&);                                 \
  template Tensor<S> strided_rows(const Tensor<S>&, Index);                                   \
  template Tensor<S> repeat_rows(const Tensor<S>&, Index, Index);                             \
  template Tensor<S> depthwise_conv1d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,   \
                                      Index);                                                 \
  template Tensor<S> group_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index,  \
                                S);                                                           \
  template Tensor<S> discretize_a(const Tensor<S>&, const Tensor<S>&);                        \
  template Tensor<S> discretize_b(const Tensor<S>&, const Tensor<S>&);                        \
  template Tensor<S> selective_scan(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,     \
                                    const Tensor<S>&, const Tensor<S>&);

LT2M_INSTANTIATE_OPS(float)
LT2M_INSTANTIATE_OPS(double)

}  // namespace lt2m
