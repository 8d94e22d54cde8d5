#include "lt2m/model.hpp"

#include <stdexcept>

namespace lt2m {

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.motion_dim = 8;
  c.dim = 64;
  c.blocks = 2;
  c.max_step = 100;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.motion_dim = 8;
  c.dim = 32;
  c.blocks = 1;
  c.max_step = 100;
  return c;
}

// ------------------------------------------------------------------ LIMM

template <typename S>
LimmBlock<S> LimmBlock<S>::init(Index dim, Index groups, Rng& rng) {
  LimmBlock block;
  block.depthwise = DepthwiseConv1d<S>::init(dim, 3, 1, rng);
  block.pointwise = PointwiseConv1d<S>::init(dim, dim, 1, rng);
  block.norm = GroupNorm<S>::init(dim, groups);
  return block;
}

template <typename S>
Tensor<S> LimmBlock<S>::forward(const Tensor<S>& x) const {
  return add(x, relu(norm.forward(pointwise.forward(depthwise.forward(x)))));
}

template <typename S>
void LimmBlock<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  depthwise.collect(out, prefix + ".depthwise");
  pointwise.collect(out, prefix + ".pointwise");
  norm.collect(out, prefix + ".norm");
}

// ------------------------------------------------------------------ ATII

template <typename S>
AtiiBlock<S> AtiiBlock<S>::init(Index dim, Rng& rng) {
  AtiiBlock block;
  block.gate = Linear<S>::init(2 * dim, dim, true, rng);
  block.fuse = Linear<S>::init(2 * dim, dim, true, rng);
  return block;
}

template <typename S>
Tensor<S> AtiiBlock<S>::gate_weights(const Tensor<S>& segs, const Tensor<S>& text) const {
  const Tensor<S> tiled = broadcast(text, segs.shape());
  return sigmoid(gate.forward(concat<S>({segs, tiled}, 1)));
}

template <typename S>
Tensor<S> AtiiBlock<S>::forward(const Tensor<S>& segs, const Tensor<S>& text) const {
  if (segs.rank() != 2 || text.rank() != 1 || segs.dim(1) != text.dim(0)) {
    throw ShapeError("atii: segments " + to_string(segs.shape()) + " and text " +
                     to_string(text.shape()) + " disagree");
  }
  const Tensor<S> reweighted = mul(gate_weights(segs, text), text);
  return fuse.forward(concat<S>({segs, reweighted}, 1));
}

template <typename S>
void AtiiBlock<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  gate.collect(out, prefix + ".gate");
  fuse.collect(out, prefix + ".fuse");
}

// ---------------------------------------------------------- GlobalModule

template <typename S>
GlobalModule<S> GlobalModule<S>::init(const ModelConfig& config, Rng& rng) {
  GlobalModule module;
  Rng r0 = rng.split(0), r1 = rng.split(1), r2 = rng.split(2), r3 = rng.split(3);
  module.down = PointwiseConv1d<S>::init(config.dim, config.dim, config.downsample, r0);
  module.atii = AtiiBlock<S>::init(config.dim, r1);
  module.scan = ScanModule<S>::init(config.ssm(), config.scan, r2);
  module.fuse = Linear<S>::init(config.dim, config.dim, true, r3);
  return module;
}

template <typename S>
Tensor<S> GlobalModule<S>::downsample(const Tensor<S>& x) const {
  const Index len = x.dim(0), s = ratio();
  const Index segments = (len + s - 1) / s;
  const Index pad = segments * s - len;
  if (pad == 0) return down.forward(x);
  const Tensor<S> tail = broadcast(slice(x, 0, len - 1, 1), {pad, x.dim(1)});
  return down.forward(concat<S>({x, tail}, 0));
}

template <typename S>
Tensor<S> GlobalModule<S>::upsample_and_fuse(const Tensor<S>& x, const Tensor<S>& segs) const {
  const Index len = x.dim(0);
  if (segs.dim(0) != (len + ratio() - 1) / ratio()) {
    throw ShapeError("upsample: " + std::to_string(segs.dim(0)) + " segments cannot cover " +
                     std::to_string(len) + " frames at ratio " + std::to_string(ratio()));
  }
  return fuse.forward(add(x, repeat_rows(segs, ratio(), len)));
}

template <typename S>
Tensor<S> GlobalModule<S>::forward(const Tensor<S>& x, const Tensor<S>& text) const {
  return upsample_and_fuse(x, scan.forward(atii.forward(downsample(x), text)));
}

template <typename S>
void GlobalModule<S>::collect(ParamList<S>& out, const std::string& prefix) const {
  down.collect(out, prefix + ".down");
  atii.collect(out, prefix + ".atii");
  scan.collect(out, prefix + ".scan");
  fuse.collect(out, prefix + ".fuse");
}

// -------------------------------------------------------------- LightT2M

template <typename S>
LightT2M<S>::LightT2M(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  if (config.dim % 2 != 0) throw std::invalid_argument("model: dim must be even");
  Rng root(seed);
  Rng r_motion = root.split(0), r_time = root.split(1), r_text = root.split(2),
      r_out = root.split(3);
  motion_embed_ = Linear<S>::init(config.motion_dim, config.dim, true, r_motion);
  time_embed_ = TimestepEmbedding<S>::init(config.dim, config.max_step, r_time);
  text_ = EmbeddingTable<S>::init(config.vocab, config.dim, r_text);
  for (Index i = 0; i < config.blocks; ++i) {
    Rng r = root.split(100 + static_cast<std::uint64_t>(i));
    Rng r_in = r.split(0), r_global = r.split(1), r_outb = r.split(2);
    DenoiserBlock<S> block{LimmBlock<S>::init(config.dim, config.norm_groups, r_in),
                           GlobalModule<S>::init(config, r_global),
                           LimmBlock<S>::init(config.dim, config.norm_groups, r_outb)};
    blocks_.push_back(std::move(block));
  }
  out_proj_ = Linear<S>::init(config.dim, config.motion_dim, true, r_out);
}

template <typename S>
Tensor<S> LightT2M<S>::text_token(std::optional<Index> caption) const {
  return text_.lookup(caption ? *caption : text_.null_row());
}

template <typename S>
Tensor<S> LightT2M<S>::forward(const Tensor<S>& m_t, Index step,
                               std::optional<Index> caption) const {
  if (step < 1 || step > config_.max_step) {
    throw std::out_of_range("model: step " + std::to_string(step) + " outside [1, " +
                            std::to_string(config_.max_step) + "]");
  }
  if (caption && (*caption < 0 || *caption >= config_.vocab)) {
    throw std::out_of_range("model: unknown caption id " + std::to_string(*caption));
  }
  if (m_t.rank() != 2 || m_t.dim(1) != config_.motion_dim) {
    throw ShapeError("model: expected [L x " + std::to_string(config_.motion_dim) +
                     "] motion, got " + to_string(m_t.shape()));
  }
  const Tensor<S> text = text_token(caption);
  Tensor<S> x = add(motion_embed_.forward(m_t), time_embed_.forward(step));
  for (const auto& block : blocks_) {
    x = block.local_in.forward(x);
    x = block.global.forward(x, text);
    x = block.local_out.forward(x);
  }
  return out_proj_.forward(x);
}

template <typename S>
ParamList<S> LightT2M<S>::parameters() const {
  ParamList<S> out;
  motion_embed_.collect(out, "motion_embed");
  time_embed_.collect(out, "time_embed");
  text_.collect(out, "text");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    blocks_[i].local_in.collect(out, p + ".local_in");
    blocks_[i].global.collect(out, p + ".global");
    blocks_[i].local_out.collect(out, p + ".local_out");
  }
  out_proj_.collect(out, "out_proj");
  return out;
}

template <typename To, typename From>
void copy_parameters(const LightT2M<From>& from, LightT2M<To>& to) {
  const auto src = from.parameters();
  auto dst = to.parameters();
  if (src.size() != dst.size()) throw std::invalid_argument("copy_parameters: layout mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape()) {
      throw std::invalid_argument("copy_parameters: mismatch at " + src[i].first);
    }
    dst[i].second.parameter_data() = src[i].second.array().template cast<To>();
  }
}

template struct LimmBlock<float>;
template struct LimmBlock<double>;
template struct AtiiBlock<float>;
template struct AtiiBlock<double>;
template struct GlobalModule<float>;
template struct GlobalModule<double>;
template class LightT2M<float>;
template class LightT2M<double>;
template void copy_parameters<float, float>(const LightT2M<float>&, LightT2M<float>&);
template void copy_parameters<double, float>(const LightT2M<float>&, LightT2M<double>&);
template void copy_parameters<float, double>(const LightT2M<double>&, LightT2M<float>&);
template void copy_parameters<double, double>(const LightT2M<double>&, LightT2M<double>&);

}  // namespace lt2m
