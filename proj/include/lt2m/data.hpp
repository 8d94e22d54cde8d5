#pragma once

#include "lt2m/tensor.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lt2m {

/// Channels of a synthetic pose frame.
enum Channel : Index {
  kVelX = 0,     // lateral root velocity
  kVelZ = 1,     // forward root velocity
  kYawRate = 2,  // root yaw angular velocity
  kHeight = 3,   // root height offset
  kLimb0 = 4,    // limb phases occupy 4..7
};

inline constexpr Index kMotionDim = 8;
inline constexpr Index kNumCaptions = 8;
inline constexpr double kJitter = 0.05;

enum class Caption : Index {
  kStand = 0,
  kWalkForward,
  kWalkBackward,
  kTurnLeft,
  kTurnRight,
  kCircle,
  kZigzag,
  kJump,
};

const std::array<std::string_view, kNumCaptions>& caption_names();
std::string_view caption_name(Index caption);
/// Accepts "walk-forward" style names or a numeric id.
Index parse_caption(std::string_view text);

using Frames = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MotionSequence {
  Index id = 0;
  Index caption = 0;
  std::uint64_t seed = 0;
  Frames frames;  // [L x kMotionDim]

  Index length() const { return frames.rows(); }
};

/// Deterministic in (caption, length, seed). Throws std::out_of_range on a
/// bad caption and std::invalid_argument on a non-positive length.
MotionSequence generate_motion(Index caption, Index length, std::uint64_t seed);

struct CorpusConfig {
  Index train = 1600;
  Index valid = 200;
  Index test = 200;
  Index min_length = 16;
  Index max_length = 64;
  std::uint64_t seed = 0;
};

struct Corpus {
  std::vector<MotionSequence> train, valid, test;
};

/// Per-sequence seed; ranges of the three splits never overlap.
std::uint64_t sequence_seed(std::uint64_t master, int split, Index index);

/// Captions cycle through all ids so every split is balanced.
Corpus build_corpus(const CorpusConfig& config);

/// Per-channel z-scoring fitted on a set of sequences.
class Normalizer {
 public:
  static constexpr double kStdFloor = 1e-6;

  Normalizer() = default;
  Normalizer(Eigen::VectorXd mean, Eigen::VectorXd stddev);

  static Normalizer fit(const std::vector<MotionSequence>& sequences);

  bool fitted() const { return mean_.size() > 0; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& stddev() const { return std_; }

  /// Frames in double precision, [L x C]. Throws std::logic_error when
  /// unfitted and ShapeError on a channel mismatch.
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& frames) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& frames) const;

  template <typename S>
  Tensor<S> normalize(const Tensor<S>& frames) const;
  template <typename S>
  Tensor<S> denormalize(const Tensor<S>& frames) const;

 private:
  void check(Index channels) const;

  Eigen::VectorXd mean_, std_;
};

template <typename S>
Tensor<S> to_tensor(const Frames& frames);
template <typename S>
Frames to_frames(const Tensor<S>& t);

/// 16 numbers: per-channel mean followed by per-channel (biased) std.
Eigen::VectorXd motion_features(const Eigen::MatrixXd& frames);
inline Eigen::VectorXd motion_features(const Frames& frames) {
  return motion_features(Eigen::MatrixXd(frames.cast<double>()));
}

/// Threshold rules on mean channel values; recovers the caption of clean
/// sequences.
Index classify_motion(const Eigen::MatrixXd& frames);
inline Index classify_motion(const Frames& frames) {
  return classify_motion(Eigen::MatrixXd(frames.cast<double>()));
}

/// Raw little-endian 32-bit float IO, shared by corpus and checkpoint files.
void write_f32_le(std::ostream& out, const float* data, std::size_t count);
void read_f32_le(std::istream& in, float* data, std::size_t count);

/// Directory layout: manifest.txt with one "id caption length seed" line
/// per sequence and <id>.f32 holding L x 8 little-endian floats, frame
/// major.

void write_corpus(const std::filesystem::path& dir, const std::vector<MotionSequence>& sequences);
std::vector<MotionSequence> read_corpus(const std::filesystem::path& dir);

}  // namespace lt2m
