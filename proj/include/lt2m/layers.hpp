#pragma once

#include "lt2m/ops.hpp"
#include "lt2m/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace lt2m {

/// Named trainable tensors, in a stable order.
template <typename S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>>>;

template <typename S>
Index count_scalars(const ParamList<S>& params) {
  Index n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
template <typename S>
Tensor<S> uniform_parameter(Shape shape, Index fan_in, Rng& rng);
template <typename S>
Tensor<S> constant_parameter(Shape shape, double value);

/// y = W x + b applied over the trailing dimension.
template <typename S>
struct Linear {
  Tensor<S> weight;  // [out x in]
  Tensor<S> bias;    // [out], undefined when the layer has no bias

  static Linear init(Index in_dim, Index out_dim, bool with_bias, Rng& rng);

  Index in_dim() const { return weight.dim(1); }
  Index out_dim() const { return weight.dim(0); }
  Tensor<S> forward(const Tensor<S>& x) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// Per-channel convolution over frames of [L x C]. Kernel width k with
/// `pad_left` leading zeros; the default centered layout is k = 3, pad 1.
template <typename S>
struct DepthwiseConv1d {
  Tensor<S> kernel;  // [C x k]
  Tensor<S> bias;    // [C]
  Index pad_left = 1;

  static DepthwiseConv1d init(Index channels, Index width, Index pad_left, Rng& rng);

  Index channels() const { return kernel.dim(0); }
  Tensor<S> forward(const Tensor<S>& x) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// Kernel-1 convolution over frames with an output stride:
/// output frame i is proj(input frame i * stride).
template <typename S>
struct PointwiseConv1d {
  Linear<S> proj;
  Index stride = 1;

  static PointwiseConv1d init(Index in_ch, Index out_ch, Index stride, Rng& rng);

  Tensor<S> forward(const Tensor<S>& x) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

template <typename S>
struct GroupNorm {
  Tensor<S> gamma;
  Tensor<S> beta;
  Index groups = 16;
  double epsilon = 1e-5;

  static GroupNorm init(Index channels, Index groups, double epsilon = 1e-5);

  Tensor<S> forward(const Tensor<S>& x) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// Caption embedding rows; the last row is the learned null condition.
template <typename S>
struct EmbeddingTable {
  Tensor<S> rows;  // [(vocab + 1) x D]

  static EmbeddingTable init(Index vocab, Index dim, Rng& rng);

  Index vocab() const { return rows.dim(0) - 1; }
  Index null_row() const { return rows.dim(0) - 1; }
  /// Row `id` as a [D] tensor; id == null_row() selects the null embedding.
  Tensor<S> lookup(Index id) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// Sinusoidal step encoding followed by Linear -> SiLU -> Linear.
template <typename S>
struct TimestepEmbedding {
  Linear<S> fc1;
  Linear<S> fc2;
  Index max_step = 1000;

  static TimestepEmbedding init(Index dim, Index max_step, Rng& rng);

  /// [sin(t w_0), ..., sin(t w_{h-1}), cos(t w_0), ..., cos(t w_{h-1})],
  /// w_i = 10000^(-i/h), h = dim / 2.
  static Tensor<S> sinusoid(Index step, Index dim);

  Tensor<S> forward(Index step) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

}  // namespace lt2m
