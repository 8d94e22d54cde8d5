#pragma once

#include "lt2m/tensor.hpp"

#include <vector>

// Differentiable primitive set. Shapes are row-major; sequence tensors are
// laid out frame-major as [L x C].
//
// Binary elementwise ops broadcast when one operand's shape (ignoring
// leading 1s) is a suffix of the other's, or when one operand is a scalar.
namespace lt2m {

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);

/// [m x k] . [k x n]
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
/// [m x k] . [n x k]^T
template <typename S>
Tensor<S> matmul_transposed(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> exp(const Tensor<S>& x);
template <typename S>
Tensor<S> log(const Tensor<S>& x);
template <typename S>
Tensor<S> relu(const Tensor<S>& x);
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S>
Tensor<S> silu(const Tensor<S>& x);
template <typename S>
Tensor<S> softplus(const Tensor<S>& x);
template <typename S>
Tensor<S> square(const Tensor<S>& x);
template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor);

/// Full reductions to a rank-0 tensor.
template <typename S>
Tensor<S> sum(const Tensor<S>& x);
template <typename S>
Tensor<S> mean(const Tensor<S>& x);

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis);
template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index length);
template <typename S>
Tensor<S> reverse(const Tensor<S>& x, int axis);
/// Trailing-dimension broadcast of `x` up to `shape`.
template <typename S>
Tensor<S> broadcast(const Tensor<S>& x, const Shape& shape);
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& shape);

/// Rows 0, stride, 2*stride, ... of a rank-2 tensor.
template <typename S>
Tensor<S> strided_rows(const Tensor<S>& x, Index stride);
/// Each row repeated `repeats` times, truncated to `length` rows.
template <typename S>
Tensor<S> repeat_rows(const Tensor<S>& x, Index repeats, Index length);

/// Per-channel 1D convolution along frames of x [L x C] with kernel [C x k]
/// and bias [C]. `pad_left` zeros precede the sequence, k-1-pad_left follow
/// it, so the output keeps length L.
template <typename S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias,
                           Index pad_left);

/// Group normalization of x [L x C] over (frames, channels-in-group), biased
/// variance, followed by per-channel affine.
template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     Index groups, S epsilon);

/// exp(delta[t,d] * A[d,n]) -> [L x Di x N]
template <typename S>
Tensor<S> discretize_a(const Tensor<S>& delta, const Tensor<S>& a);
/// delta[t,d] * B[t,n] -> [L x Di x N]
template <typename S>
Tensor<S> discretize_b(const Tensor<S>& delta, const Tensor<S>& b);

/// h_t = Abar_t * h_{t-1} + Bbar_t * u_t,  y_t = C_t . h_t + D * u_t,  h_0 = 0.
/// Abar, Bbar: [L x Di x N]; c: [L x N]; d_skip: [Di]; u: [L x Di].
template <typename S>
Tensor<S> selective_scan(const Tensor<S>& abar, const Tensor<S>& bbar, const Tensor<S>& c,
                         const Tensor<S>& d_skip, const Tensor<S>& u);

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}

}  // namespace lt2m
