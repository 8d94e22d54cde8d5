#pragma once

#include "lt2m/layers.hpp"

#include <optional>
#include <string>
#include <utility>

namespace lt2m {

struct SsmConfig {
  Index d_model = 256;
  Index d_state = 16;
  Index d_conv = 4;
  Index expand = 2;
  Index dt_rank = 0;  // 0 selects ceil(d_model / 16)
  double dt_min = 0.01;
  double dt_max = 0.1;

  Index d_inner() const { return expand * d_model; }
  Index resolved_dt_rank() const { return dt_rank > 0 ? dt_rank : (d_model + 15) / 16; }
};

/// Zero-order-hold state transition and Euler input matrix:
/// Abar[t,d,n] = exp(delta[t,d] * A[d,n]),  Bbar[t,d,n] = delta[t,d] * B[t,n].
template <typename S>
std::pair<Tensor<S>, Tensor<S>> discretize(const Tensor<S>& a, const Tensor<S>& b,
                                           const Tensor<S>& delta) {
  return {discretize_a(delta, a), discretize_b(delta, b)};
}

/// Selective state-space block: in-projection, causal depthwise conv + SiLU,
/// input-dependent (delta, B, C), selective scan, SiLU gate, out-projection.
template <typename S>
struct MambaBlock {
  SsmConfig config;
  Linear<S> in_proj;           // D -> 2 * Di (no bias)
  DepthwiseConv1d<S> conv;     // causal, width d_conv
  Linear<S> x_proj;            // Di -> dt_rank + 2N (no bias)
  Linear<S> dt_proj;           // dt_rank -> Di
  Tensor<S> a_log;             // [Di x N], A = -exp(a_log)
  Tensor<S> d_skip;            // [Di]
  Linear<S> out_proj;          // Di -> D (no bias)

  static MambaBlock init(const SsmConfig& config, Rng& rng);

  /// x: [L x D] -> [L x D]
  Tensor<S> forward(const Tensor<S>& x) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

enum class ScanMode { kSds, kBds, kPbds };

const char* to_string(ScanMode mode);
ScanMode parse_scan_mode(const std::string& text);

/// Mamba block wrapped in one of three scan strategies:
///   SDS  - forward scan only;
///   BDS  - forward scan plus an independently parameterized scan over the
///          reversed sequence, summed;
///   PBDS - one scan over concat(reverse(x), x); the last L outputs are kept.
template <typename S>
struct ScanModule {
  ScanMode mode = ScanMode::kPbds;
  MambaBlock<S> forward_block;
  std::optional<MambaBlock<S>> backward_block;  // BDS only

  static ScanModule init(const SsmConfig& config, ScanMode mode, Rng& rng);

  Tensor<S> forward(const Tensor<S>& x) const;
  void collect(ParamList<S>& out, const std::string& prefix) const;
};

}  // namespace lt2m
