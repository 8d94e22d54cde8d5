#pragma once

#include "lt2m/config.hpp"
#include "lt2m/data.hpp"
#include "lt2m/model.hpp"

#include <filesystem>
#include <stdexcept>

namespace lt2m {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunConfig config;
  Normalizer normalizer;
  LightT2M<float> model;
  Index epoch = 0;
  double valid_loss = 0.0;
};

/// Writes <dir>/manifest.json and <dir>/params.bin (little-endian f32,
/// parameters back to back in parameters() order).
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);

/// Throws CheckpointError on missing files, version or layout mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace lt2m
