#pragma once

#include "lt2m/layers.hpp"
#include "lt2m/ssm.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lt2m {

/// Architecture hyperparameters of the denoiser.
struct ModelConfig {
  Index motion_dim = 263;
  Index dim = 256;
  Index blocks = 4;
  Index downsample = 8;
  Index norm_groups = 16;
  Index vocab = 8;
  Index max_step = 1000;
  Index d_state = 16;
  Index d_conv = 4;
  Index expand = 2;
  ScanMode scan = ScanMode::kPbds;

  SsmConfig ssm() const {
    SsmConfig c;
    c.d_model = dim;
    c.d_state = d_state;
    c.d_conv = d_conv;
    c.expand = expand;
    return c;
  }

  /// N=4, D=256, S=8 at the published motion dimension.
  static ModelConfig paper();
  /// Reduced model trained in the end-to-end tests.
  static ModelConfig desk();
  /// Smallest model used for whole-network gradient checks.
  static ModelConfig tiny();
};

/// Local block: x + ReLU(GroupNorm(pointwise(depthwise(x)))). Receptive
/// field radius of one frame.
template <typename S>
struct LimmBlock {
  DepthwiseConv1d<S> depthwise;
  PointwiseConv1d<S> pointwise;
  GroupNorm<S> norm;

  static LimmBlock init(Index dim, Index groups, Rng& rng);

  /// x: [L x D]
  Tensor<S> forward(const Tensor<S>& x) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// Text injector: gate = sigmoid(g_c[seg, y]); out = g_f[seg, gate * y].
template <typename S>
struct AtiiBlock {
  Linear<S> gate;  // 2D -> D
  Linear<S> fuse;  // 2D -> D

  static AtiiBlock init(Index dim, Rng& rng);

  /// Channel weights in (0, 1) for every segment. segs: [L' x D], text: [D].
  Tensor<S> gate_weights(const Tensor<S>& segs, const Tensor<S>& text) const;
  /// segs: [L' x D], text: [D] -> [L' x D]; one shared text token.
  Tensor<S> forward(const Tensor<S>& segs, const Tensor<S>& text) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// Downsample by S, inject text per segment, scan globally, upsample by
/// repetition and fuse with the input through a linear layer.
template <typename S>
struct GlobalModule {
  PointwiseConv1d<S> down;
  AtiiBlock<S> atii;
  ScanModule<S> scan;
  Linear<S> fuse;

  static GlobalModule init(const ModelConfig& config, Rng& rng);

  Index ratio() const { return down.stride; }
  /// [L x D] -> [ceil(L/S) x D]
  Tensor<S> downsample(const Tensor<S>& x) const;
  /// h(x + repeat(segs, S)[:L])
  Tensor<S> upsample_and_fuse(const Tensor<S>& x, const Tensor<S>& segs) const;
  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& text) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

/// One LIMM - Global - LIMM stage.
template <typename S>
struct DenoiserBlock {
  LimmBlock<S> local_in;
  GlobalModule<S> global;
  LimmBlock<S> local_out;
};

/// The text-conditioned x0-predicting denoiser.
template <typename S>
class LightT2M {
 public:
  LightT2M() = default;
  LightT2M(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// m_t: [L x D_m], 1 <= step <= max_step; caption std::nullopt selects the
  /// null condition. Returns the predicted clean motion [L x D_m].
  Tensor<S> forward(const Tensor<S>& m_t, Index step, std::optional<Index> caption) const;

  /// Text token for a caption (null row for std::nullopt).
  Tensor<S> text_token(std::optional<Index> caption) const;

  ParamList<S> parameters() const;
  Index param_count() const { return count_scalars(parameters()); }

  const std::vector<DenoiserBlock<S>>& blocks() const { return blocks_; }
  const EmbeddingTable<S>& text_table() const { return text_; }

 private:
  ModelConfig config_;
  Linear<S> motion_embed_;
  TimestepEmbedding<S> time_embed_;
  EmbeddingTable<S> text_;
  std::vector<DenoiserBlock<S>> blocks_;
  Linear<S> out_proj_;
};

/// Copies parameter values between models of identical layout.
template <typename To, typename From>
void copy_parameters(const LightT2M<From>& from, LightT2M<To>& to);

}  // namespace lt2m
