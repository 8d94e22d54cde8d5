#include "lt2m/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace lt2m {

template <typename S>
Tensor<S> uniform_parameter(Shape shape, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  typename Tensor<S>::Array data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) data(i) = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>::parameter(std::move(shape), std::move(data));
}

template <typename S>
Tensor<S> constant_parameter(Shape shape, double value) {
  const Index n = numel(shape);
  return Tensor<S>::parameter(std::move(shape),
                              Tensor<S>::Array::Constant(n, static_cast<S>(value)));
}

// ---------------------------------------------------------------- Linear

template <typename S>
Linear<S> Linear<S>::init(Index in_dim, Index out_dim, bool with_bias, Rng& rng) {
  Linear layer;
  layer.weight = uniform_parameter<S>({out_dim, in_dim}, in_dim, rng);
  if (with_bias) layer.bias = constant_parameter<S>({out_dim}, 0.0);
  return layer;
}

template <typename S>
Tensor<S> Linear<S>::forward(const Tensor<S>& x) const {
  if (x.rank() == 0 || x.shape().back() != in_dim()) {
    throw ShapeError("linear: expected trailing dimension " + std::to_string(in_dim()) +
                     ", got " + to_string(x.shape()));
  }
  const bool flat = x.rank() != 2;
  const Tensor<S> x2 = flat ? reshape(x, {x.numel() / in_dim(), in_dim()}) : x;
  Tensor<S> y = matmul_transposed(x2, weight);
  if (bias.defined()) y = add(y, bias);
  if (!flat) return y;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim();
  return reshape(y, out_shape);
}

template <typename S>
void Linear<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

// ------------------------------------------------------- DepthwiseConv1d

template <typename S>
DepthwiseConv1d<S> DepthwiseConv1d<S>::init(Index channels, Index width, Index pad_left,
                                            Rng& rng) {
  DepthwiseConv1d layer;
  layer.kernel = uniform_parameter<S>({channels, width}, width, rng);
  layer.bias = constant_parameter<S>({channels}, 0.0);
  layer.pad_left = pad_left;
  return layer;
}

template <typename S>
Tensor<S> DepthwiseConv1d<S>::forward(const Tensor<S>& x) const {
  if (x.rank() != 2 || x.dim(1) != channels()) {
    throw ShapeError("depthwise_conv1d: layer has " + std::to_string(channels()) +
                     " channels, input is " + to_string(x.shape()));
  }
  return depthwise_conv1d(x, kernel, bias, pad_left);
}

template <typename S>
void DepthwiseConv1d<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".kernel", kernel);
  out.emplace_back(prefix + ".bias", bias);
}

// ------------------------------------------------------- PointwiseConv1d

template <typename S>
PointwiseConv1d<S> PointwiseConv1d<S>::init(Index in_ch, Index out_ch, Index stride, Rng& rng) {
  PointwiseConv1d layer;
  layer.proj = Linear<S>::init(in_ch, out_ch, true, rng);
  layer.stride = stride;
  return layer;
}

template <typename S>
Tensor<S> PointwiseConv1d<S>::forward(const Tensor<S>& x) const {
  return proj.forward(stride == 1 ? x : strided_rows(x, stride));
}

template <typename S>
void PointwiseConv1d<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  proj.collect(out, prefix);
}

// ------------------------------------------------------------- GroupNorm

template <typename S>
GroupNorm<S> GroupNorm<S>::init(Index channels, Index groups, double epsilon) {
  if (groups <= 0 || channels % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  GroupNorm layer;
  layer.gamma = constant_parameter<S>({channels}, 1.0);
  layer.beta = constant_parameter<S>({channels}, 0.0);
  layer.groups = groups;
  layer.epsilon = epsilon;
  return layer;
}

template <typename S>
Tensor<S> GroupNorm<S>::forward(const Tensor<S>& x) const {
  return group_norm(x, gamma, beta, groups, static_cast<S>(epsilon));
}

template <typename S>
void GroupNorm<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

// -------------------------------------------------------- EmbeddingTable

template <typename S>
EmbeddingTable<S> EmbeddingTable<S>::init(Index vocab, Index dim, Rng& rng) {
  EmbeddingTable table;
  typename Tensor<S>::Array data((vocab + 1) * dim);
  for (Index i = 0; i < data.size(); ++i) data(i) = static_cast<S>(rng.normal(0.0, 0.02));
  table.rows = Tensor<S>::parameter({vocab + 1, dim}, std::move(data));
  return table;
}

template <typename S>
Tensor<S> EmbeddingTable<S>::lookup(Index id) const {
  if (id < 0 || id > null_row()) {
    throw std::out_of_range("embedding: caption id " + std::to_string(id) + " outside [0, " +
                            std::to_string(vocab()) + ")");
  }
  return reshape(slice(rows, 0, id, 1), {rows.dim(1)});
}

template <typename S>
void EmbeddingTable<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".rows", rows);
}

// ----------------------------------------------------- TimestepEmbedding

template <typename S>
TimestepEmbedding<S> TimestepEmbedding<S>::init(Index dim, Index max_step, Rng& rng) {
  TimestepEmbedding emb;
  emb.fc1 = Linear<S>::init(dim, dim, true, rng);
  emb.fc2 = Linear<S>::init(dim, dim, true, rng);
  emb.max_step = max_step;
  return emb;
}

template <typename S>
Tensor<S> TimestepEmbedding<S>::sinusoid(Index step, Index dim) {
  const Index half = dim / 2;
  typename Tensor<S>::Array enc = Tensor<S>::Array::Zero(dim);
  for (Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = static_cast<double>(step) * freq;
    enc(i) = static_cast<S>(std::sin(arg));
    enc(half + i) = static_cast<S>(std::cos(arg));
  }
  return Tensor<S>({dim}, std::move(enc));
}

template <typename S>
Tensor<S> TimestepEmbedding<S>::forward(Index step) const {
  if (step < 0 || step > max_step) {
    throw std::out_of_range("timestep " + std::to_string(step) + " outside [0, " +
                            std::to_string(max_step) + "]");
  }
  return fc2.forward(silu(fc1.forward(sinusoid(step, fc1.in_dim()))));
}

template <typename S>
void TimestepEmbedding<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

#define LT2M_INSTANTIATE_LAYERS(S)                                        \
  template Tensor<S> uniform_parameter<S>(Shape, Index, Rng&);           \
  template Tensor<S> constant_parameter<S>(Shape, double);                \
  template struct Linear<S>;                                              \
  template struct DepthwiseConv1d<S>;                                     \
  template struct PointwiseConv1d<S>;                                     \
  template struct GroupNorm<S>;                                           \
  template struct EmbeddingTable<S>;                                      \
  template struct TimestepEmbedding<S>;

LT2M_INSTANTIATE_LAYERS(float)
LT2M_INSTANTIATE_LAYERS(double)

}  // namespace lt2m
