#include "lt2m/ssm.hpp"

#include <cmath>
#include <stdexcept>

namespace lt2m {

const char* to_string(ScanMode mode) {
  switch (mode) {
    case ScanMode::kSds: return "sds";
    case ScanMode::kBds: return "bds";
    case ScanMode::kPbds: return "pbds";
  }
  return "?";
}

ScanMode parse_scan_mode(const std::string& text) {
  if (text == "sds" || text == "SDS") return ScanMode::kSds;
  if (text == "bds" || text == "BDS") return ScanMode::kBds;
  if (text == "pbds" || text == "PBDS") return ScanMode::kPbds;
  throw std::invalid_argument("unknown scan mode '" + text + "' (expected sds, bds or pbds)");
}

template <typename S>
MambaBlock<S> MambaBlock<S>::init(const SsmConfig& config, Rng& rng) {
  const Index d = config.d_model, di = config.d_inner(), ns = config.d_state;
  const Index rank = config.resolved_dt_rank();
  MambaBlock block;
  block.config = config;
  block.in_proj = Linear<S>::init(d, 2 * di, false, rng);
  block.conv = DepthwiseConv1d<S>::init(di, config.d_conv, config.d_conv - 1, rng);
  block.x_proj = Linear<S>::init(di, rank + 2 * ns, false, rng);
  block.dt_proj = Linear<S>::init(rank, di, true, rng);
  // Step sizes start log-uniform in [dt_min, dt_max]; the bias stores their
  // softplus inverse.
  auto& bias = block.dt_proj.bias.parameter_data();
  for (Index i = 0; i < di; ++i) {
    const double dt = std::exp(rng.uniform(std::log(config.dt_min), std::log(config.dt_max)));
    bias(i) = static_cast<S>(dt + std::log(-std::expm1(-dt)));
  }
  typename Tensor<S>::Array a_log(di * ns);
  for (Index r = 0; r < di; ++r)
    for (Index n = 0; n < ns; ++n) a_log(r * ns + n) = static_cast<S>(std::log(double(n + 1)));
  block.a_log = Tensor<S>::parameter({di, ns}, std::move(a_log));
  block.d_skip = constant_parameter<S>({di}, 1.0);
  block.out_proj = Linear<S>::init(di, d, false, rng);
  return block;
}

template <typename S>
Tensor<S> MambaBlock<S>::forward(const Tensor<S>& x) const {
  const Index di = config.d_inner(), ns = config.d_state;
  const Index rank = config.resolved_dt_rank();
  const Tensor<S> xz = in_proj.forward(x);
  const Tensor<S> u = silu(conv.forward(slice(xz, 1, 0, di)));
  const Tensor<S> gate = silu(slice(xz, 1, di, di));
  const Tensor<S> dbc = x_proj.forward(u);
  const Tensor<S> delta = softplus(dt_proj.forward(slice(dbc, 1, 0, rank)));
  const Tensor<S> b = slice(dbc, 1, rank, ns);
  const Tensor<S> c = slice(dbc, 1, rank + ns, ns);
  const Tensor<S> a = scale(exp(a_log), S(-1));
  auto [abar, bbar] = discretize(a, b, delta);
  const Tensor<S> y = selective_scan(abar, bbar, c, d_skip, u);
  return out_proj.forward(mul(y, gate));
}

template <typename S>
void MambaBlock<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  in_proj.collect(out, prefix + ".in_proj");
  conv.collect(out, prefix + ".conv");
  x_proj.collect(out, prefix + ".x_proj");
  dt_proj.collect(out, prefix + ".dt_proj");
  out.emplace_back(prefix + ".a_log", a_log);
  out.emplace_back(prefix + ".d_skip", d_skip);
  out_proj.collect(out, prefix + ".out_proj");
}

template <typename S>
ScanModule<S> ScanModule<S>::init(const SsmConfig& config, ScanMode mode, Rng& rng) {
  ScanModule module;
  module.mode = mode;
  Rng forward_rng = rng.split(0);
  module.forward_block = MambaBlock<S>::init(config, forward_rng);
  if (mode == ScanMode::kBds) {
    Rng backward_rng = rng.split(1);
    module.backward_block = MambaBlock<S>::init(config, backward_rng);
  }
  return module;
}

template <typename S>
Tensor<S> ScanModule<S>::forward(const Tensor<S>& x) const {
  switch (mode) {
    case ScanMode::kSds:
      return forward_block.forward(x);
    case ScanMode::kBds:
      return add(forward_block.forward(x),
                 reverse(backward_block->forward(reverse(x, 0)), 0));
    case ScanMode::kPbds: {
      const Index len = x.dim(0);
      const Tensor<S> doubled = concat<S>({reverse(x, 0), x}, 0);
      return slice(forward_block.forward(doubled), 0, len, len);
    }
  }
  throw std::logic_error("scan: invalid mode");
}

template <typename S>
void ScanModule<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  forward_block.collect(out, prefix + ".forward");
  if (backward_block) backward_block->collect(out, prefix + ".backward");
}

template struct MambaBlock<float>;
template struct MambaBlock<double>;
template struct ScanModule<float>;
template struct ScanModule<double>;

}  // namespace lt2m
