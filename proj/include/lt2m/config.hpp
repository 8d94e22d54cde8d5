#pragma once

#include "lt2m/data.hpp"
#include "lt2m/diffusion.hpp"
#include "lt2m/model.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace lt2m {

/// Every knob of a run. Serialized as flat "key = value" lines; see
/// keys() for the accepted names.
struct RunConfig {
  std::string preset = "desk";
  ModelConfig model;
  Index diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 1e-2;
  GuidanceConfig guidance;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  double adam_eps = 1e-8;
  Index batch = 256;
  Index epochs = 200;
  std::uint64_t seed = 0;
  CorpusConfig corpus;
  Index sample_steps = 10;
  Sampler sampler = Sampler::kDdim;

  /// Published hyperparameters at the published motion dimension.
  static RunConfig paper();
  /// Single-CPU scale on the synthetic corpus.
  static RunConfig desk();
  /// Seconds-long smoke runs.
  static RunConfig tiny();
  static RunConfig preset_named(const std::string& name);

  static const std::vector<std::string>& keys();

  /// Throws std::invalid_argument on an unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  std::vector<std::pair<std::string, std::string>> items() const;

  /// Throws std::invalid_argument describing the first bad field.
  void validate() const;

  NoiseSchedule schedule() const { return build_schedule(diffusion_steps, beta_start, beta_end); }

  /// "key = value" lines; '#' starts a comment. A "preset" line selects the
  /// base values, wherever it appears; other keys override them.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

}  // namespace lt2m
