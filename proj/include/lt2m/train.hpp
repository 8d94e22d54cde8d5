#pragma once

#include "lt2m/checkpoint.hpp"
#include "lt2m/config.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

namespace lt2m {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// Adam with decoupled weight decay: p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
template <typename S>
class AdamW {
 public:
  using Array = typename Tensor<S>::Array;

  AdamW(ParamList<S> params, AdamWConfig config);

  /// grads[i] matches params[i] in size.
  void step(const std::vector<Array>& grads, double lr);
  Index steps_taken() const { return t_; }

 private:
  ParamList<S> params_;
  AdamWConfig config_;
  std::vector<Array> m_, v_;
  Index t_ = 0;
};

/// Half-cosine decay from base to 0 over total steps.
double cosine_lr(double base, Index step, Index total);

struct EpochStats {
  Index epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double lr = 0.0;  // rate of the epoch's last update
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,valid_loss,lr";

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  /// When set, metrics.csv and checkpoint/ (best validation loss) are
  /// written here.
  std::filesystem::path out_dir;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochStats> history;
  Checkpoint best;  // deep copy at the best validation epoch
  Checkpoint last;
  double seconds = 0.0;
};

std::string metrics_csv(const std::vector<EpochStats>& history);

/// Mean loss over the split with a fixed per-item noise stream, so values
/// are comparable between epochs.
double validation_loss(const LightT2M<float>& model, const NoiseSchedule& schedule,
                       const std::vector<Tensor<float>>& motions,
                       const std::vector<MotionSequence>& split, const RunConfig& config);

/// Deterministic in config.seed. Throws TrainingDiverged on a non-finite
/// loss or gradient with a dump of step, lr and the largest gradient norms.
TrainResult train(const RunConfig& config, const Corpus& corpus, const TrainOptions& options = {});

/// Independent copy of the parameters.
LightT2M<float> clone(const LightT2M<float>& model);

}  // namespace lt2m
