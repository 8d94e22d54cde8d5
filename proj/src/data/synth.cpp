#include "lt2m/data.hpp"
#include "lt2m/rng.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace lt2m {

namespace {

constexpr double kPi = std::numbers::pi;

struct Profile {
  double vel_x = 0, vel_z = 0, yaw = 0;
  double limb_amplitude = 0;
  bool sway = false;   // oscillating lateral velocity
  bool pulse = false;  // one height bump over the sequence
};

Profile profile(Caption c) {
  switch (c) {
    case Caption::kStand: return {};
    case Caption::kWalkForward: return {0, 1.0, 0, 0.5};
    case Caption::kWalkBackward: return {0, -1.0, 0, 0.5};
    case Caption::kTurnLeft: return {0, 0, 1.0, 0.25};
    case Caption::kTurnRight: return {0, 0, -1.0, 0.25};
    case Caption::kCircle: return {0, 1.0, 1.0, 0.5};
    case Caption::kZigzag: return {0, 0.5, 0, 0.5, true};
    case Caption::kJump: return {0, 0, 0, 0, false, true};
  }
  return {};
}

void check_caption(Index caption) {
  if (caption < 0 || caption >= kNumCaptions) {
    throw std::out_of_range("unknown caption id " + std::to_string(caption));
  }
}

}  // namespace

const std::array<std::string_view, kNumCaptions>& caption_names() {
  static constexpr std::array<std::string_view, kNumCaptions> names = {
      "stand", "walk-forward", "walk-backward", "turn-left",
      "turn-right", "circle", "zigzag", "jump"};
  return names;
}

std::string_view caption_name(Index caption) {
  check_caption(caption);
  return caption_names()[static_cast<std::size_t>(caption)];
}

Index parse_caption(std::string_view text) {
  const auto& names = caption_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == text) return static_cast<Index>(i);
  }
  Index id = -1;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
  if (ec == std::errc() && end == text.data() + text.size() && id >= 0 && id < kNumCaptions) {
    return id;
  }
  throw std::invalid_argument("unknown caption '" + std::string(text) + "'");
}

MotionSequence generate_motion(Index caption, Index length, std::uint64_t seed) {
  check_caption(caption);
  if (length < 1) throw std::invalid_argument("motion length must be positive");
  const Profile p = profile(static_cast<Caption>(caption));
  Rng rng(seed);
  const double period = rng.uniform(14.0, 18.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double sway_period = rng.uniform(14.0, 18.0);
  const double sway_phase = rng.uniform(0.0, 2.0 * kPi);

  MotionSequence m;
  m.caption = caption;
  m.seed = seed;
  m.frames.resize(length, kMotionDim);
  for (Index i = 0; i < length; ++i) {
    const double t = static_cast<double>(i);
    double row[kMotionDim] = {p.vel_x, p.vel_z, p.yaw, 0.0};
    if (p.sway) row[kVelX] = std::sin(2.0 * kPi * t / sway_period + sway_phase);
    if (p.pulse) row[kHeight] = length > 1 ? std::sin(kPi * t / double(length - 1)) : 1.0;
    for (Index k = 0; k < 4; ++k) {
      row[kLimb0 + k] = p.limb_amplitude * std::sin(2.0 * kPi * t / period + phase + kPi / 2 * k);
    }
    for (Index c = 0; c < kMotionDim; ++c) {
      m.frames(i, c) = static_cast<float>(row[c] + rng.normal(0.0, kJitter));
    }
  }
  return m;
}

std::uint64_t sequence_seed(std::uint64_t master, int split, Index index) {
  constexpr std::uint64_t kSplitSpan = 1'000'000'000ULL;
  if (split < 0 || split > 2 || index < 0 || static_cast<std::uint64_t>(index) >= kSplitSpan) {
    throw std::out_of_range("sequence_seed: bad split or index");
  }
  return master * 3 * kSplitSpan + static_cast<std::uint64_t>(split) * kSplitSpan +
         static_cast<std::uint64_t>(index);
}

Corpus build_corpus(const CorpusConfig& config) {
  if (config.train < 1 || config.valid < 1 || config.test < 1) {
    throw std::invalid_argument("corpus: every split needs at least one sequence");
  }
  if (config.min_length < 1 || config.max_length < config.min_length) {
    throw std::invalid_argument("corpus: bad length bounds");
  }
  Corpus corpus;
  const Index counts[3] = {config.train, config.valid, config.test};
  std::vector<MotionSequence>* splits[3] = {&corpus.train, &corpus.valid, &corpus.test};
  for (int s = 0; s < 3; ++s) {
    splits[s]->reserve(static_cast<std::size_t>(counts[s]));
    for (Index i = 0; i < counts[s]; ++i) {
      const std::uint64_t seed = sequence_seed(config.seed, s, i);
      Rng pick = Rng(seed).split(1);
      const Index len = pick.uniform_int(config.min_length, config.max_length);
      MotionSequence m = generate_motion(i % kNumCaptions, len, seed);
      m.id = i;
      splits[s]->push_back(std::move(m));
    }
  }
  return corpus;
}

// ------------------------------------------------------------ Normalizer

Normalizer::Normalizer(Eigen::VectorXd mean, Eigen::VectorXd stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {
  if (mean_.size() != std_.size()) throw ShapeError("normalizer: mean/std size mismatch");
  std_ = std_.cwiseMax(kStdFloor);
}

Normalizer Normalizer::fit(const std::vector<MotionSequence>& sequences) {
  if (sequences.empty()) throw std::invalid_argument("normalizer: nothing to fit");
  const Index channels = sequences.front().frames.cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(channels);
  Index frames = 0;
  for (const auto& m : sequences) {
    if (m.frames.cols() != channels) throw ShapeError("normalizer: channel count varies");
    sum += m.frames.cast<double>().colwise().sum().transpose();
    frames += m.frames.rows();
  }
  const Eigen::VectorXd mean = sum / double(frames);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(channels);
  for (const auto& m : sequences) {
    sq += (m.frames.cast<double>().rowwise() - mean.transpose())
              .array()
              .square()
              .colwise()
              .sum()
              .transpose()
              .matrix();
  }
  return Normalizer(mean, (sq / double(frames)).cwiseSqrt());
}

void Normalizer::check(Index channels) const {
  if (!fitted()) throw std::logic_error("normalizer used before fitting");
  if (channels != mean_.size()) {
    throw ShapeError("normalizer: fitted on " + std::to_string(mean_.size()) + " channels, got " +
                     std::to_string(channels));
  }
}

Eigen::MatrixXd Normalizer::normalize(const Eigen::MatrixXd& frames) const {
  check(frames.cols());
  return ((frames.rowwise() - mean_.transpose()).array().rowwise() / std_.transpose().array())
      .matrix();
}

Eigen::MatrixXd Normalizer::denormalize(const Eigen::MatrixXd& frames) const {
  check(frames.cols());
  return ((frames.array().rowwise() * std_.transpose().array()).matrix().rowwise() +
          mean_.transpose());
}

template <typename S>
Tensor<S> Normalizer::normalize(const Tensor<S>& frames) const {
  const Eigen::MatrixXd out = normalize(Eigen::MatrixXd(frames.matrix().template cast<double>()));
  const typename Tensor<S>::Matrix m = out.cast<S>();
  return Tensor<S>(frames.shape(), Eigen::Map<const typename Tensor<S>::Array>(m.data(), m.size()));
}

template <typename S>
Tensor<S> Normalizer::denormalize(const Tensor<S>& frames) const {
  const Eigen::MatrixXd out = denormalize(Eigen::MatrixXd(frames.matrix().template cast<double>()));
  const typename Tensor<S>::Matrix m = out.cast<S>();
  return Tensor<S>(frames.shape(), Eigen::Map<const typename Tensor<S>::Array>(m.data(), m.size()));
}

template <typename S>
Tensor<S> to_tensor(const Frames& frames) {
  const typename Tensor<S>::Matrix m = frames.cast<S>();
  return Tensor<S>({frames.rows(), frames.cols()},
                   Eigen::Map<const typename Tensor<S>::Array>(m.data(), m.size()));
}

template <typename S>
Frames to_frames(const Tensor<S>& t) {
  return t.matrix().template cast<float>();
}

// -------------------------------------------------------- features, labels

Eigen::VectorXd motion_features(const Eigen::MatrixXd& frames) {
  const Index c = frames.cols();
  Eigen::VectorXd f(2 * c);
  const Eigen::RowVectorXd mean = frames.colwise().mean();
  f.head(c) = mean.transpose();
  f.tail(c) = ((frames.rowwise() - mean).array().square().colwise().mean()).sqrt().transpose();
  return f;
}

Index classify_motion(const Eigen::MatrixXd& frames) {
  if (frames.cols() != kMotionDim) throw ShapeError("classify_motion: expected 8 channels");
  const Eigen::VectorXd f = motion_features(frames);
  const double vx_std = f(kMotionDim + kVelX), vz = f(kVelZ), yaw = f(kYawRate), h = f(kHeight);
  Caption c = Caption::kStand;
  if (h > 0.3) c = Caption::kJump;
  else if (vx_std > 0.35) c = Caption::kZigzag;
  else if (vz > 0.5) c = yaw > 0.5 ? Caption::kCircle : Caption::kWalkForward;
  else if (vz < -0.5) c = Caption::kWalkBackward;
  else if (yaw > 0.5) c = Caption::kTurnLeft;
  else if (yaw < -0.5) c = Caption::kTurnRight;
  return static_cast<Index>(c);
}

// ------------------------------------------------------------------ files

namespace {

std::string blob_name(Index id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld.f32", static_cast<long long>(id));
  return buf;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
  }
  return v;
}

}  // namespace

void write_f32_le(std::ostream& out, const float* data, std::size_t count) {
  std::vector<std::uint32_t> words(count);
  for (std::size_t i = 0; i < count; ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(data[i]));
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
}

void read_f32_le(std::istream& in, float* data, std::size_t count) {
  std::vector<std::uint32_t> words(count);
  in.read(reinterpret_cast<char*>(words.data()),
          static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
  if (!in) throw std::runtime_error("truncated float blob");
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(to_little(words[i]));
}

void write_corpus(const std::filesystem::path& dir, const std::vector<MotionSequence>& sequences) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  manifest << "# id caption length seed\n";
  for (const auto& m : sequences) {
    manifest << m.id << ' ' << caption_name(m.caption) << ' ' << m.length() << ' ' << m.seed
             << '\n';
    std::ofstream blob(dir / blob_name(m.id), std::ios::binary);
    if (!blob) throw std::runtime_error("cannot write " + (dir / blob_name(m.id)).string());
    write_f32_le(blob, m.frames.data(), static_cast<std::size_t>(m.frames.size()));
  }
}

std::vector<MotionSequence> read_corpus(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("missing " + (dir / "manifest.txt").string());
  std::vector<MotionSequence> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    MotionSequence m;
    std::string caption;
    Index length = 0;
    if (!(fields >> m.id >> caption >> length >> m.seed) || length < 1) {
      throw std::runtime_error("bad manifest line: " + line);
    }
    m.caption = parse_caption(caption);
    m.frames.resize(length, kMotionDim);
    std::ifstream blob(dir / blob_name(m.id), std::ios::binary);
    if (!blob) throw std::runtime_error("missing " + (dir / blob_name(m.id)).string());
    read_f32_le(blob, m.frames.data(), static_cast<std::size_t>(m.frames.size()));
    out.push_back(std::move(m));
  }
  return out;
}

template Tensor<float> Normalizer::normalize(const Tensor<float>&) const;
template Tensor<double> Normalizer::normalize(const Tensor<double>&) const;
template Tensor<float> Normalizer::denormalize(const Tensor<float>&) const;
template Tensor<double> Normalizer::denormalize(const Tensor<double>&) const;
template Tensor<float> to_tensor<float>(const Frames&);
template Tensor<double> to_tensor<double>(const Frames&);
template Frames to_frames<float>(const Tensor<float>&);
template Frames to_frames<double>(const Tensor<double>&);

}  // namespace lt2m
