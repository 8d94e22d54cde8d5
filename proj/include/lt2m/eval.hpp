#pragma once

#include "lt2m/checkpoint.hpp"
#include "lt2m/diffusion.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace lt2m {

/// Squared Frechet distance between two Gaussians. The cross term uses the
/// symmetric form sqrt(sqrt(S1) S2 sqrt(S1)) with eigenvalues clamped at 0.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1,
                        const Eigen::VectorXd& mu2, const Eigen::MatrixXd& cov2);

/// Fits a Gaussian to each set of feature rows (1e-6 I added to both
/// covariances) and returns their Frechet distance.
double toy_fid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b);

/// Stacks motion_features of each sequence as rows.
Eigen::MatrixXd feature_matrix(const std::vector<Eigen::MatrixXd>& motions);

struct EvalOptions {
  SampleOptions sampling;
  std::uint64_t seed = 0;
};

struct EvalMetrics {
  double toy_fid = 0.0;
  double cond_acc = 0.0;
  Index n = 0;

  /// {"toy_fid":...,"cond_acc":...,"n":...} on one line.
  std::string to_json() const;
};

/// One sample per test item, conditioned on its caption at its length.
std::vector<Eigen::MatrixXd> generate_for(const LightT2M<float>& model,
                                          const NoiseSchedule& schedule,
                                          const Normalizer& normalizer,
                                          const std::vector<MotionSequence>& items,
                                          const EvalOptions& options);

EvalMetrics evaluate(const LightT2M<float>& model, const NoiseSchedule& schedule,
                     const Normalizer& normalizer, const std::vector<MotionSequence>& test,
                     const EvalOptions& options);

struct BenchRow {
  ScanMode mode = ScanMode::kSds;
  Index length = 0;
  Index scan_params = 0;   // one scan module
  Index model_params = 0;  // whole denoiser
  double mean_ms = 0.0;    // per scan-module forward
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double pbds_max_deviation = 0.0;  // against slice(scan(concat(rev x, x)))
  Index runs = 0, warmup = 0;

  std::string to_json() const;
  std::string to_text() const;
};

/// Times the scan module of config.model in each mode over the given
/// lengths; the text encoder is not part of the measurement.
BenchReport bench_scan(const ModelConfig& config, const std::vector<Index>& lengths,
                       Index runs = 100, Index warmup = 10, std::uint64_t seed = 0);

}  // namespace lt2m
