#include "lt2m/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace lt2m {

template <typename S>
AdamW<S>::AdamW(ParamList<S> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& [name, p] : params_) {
    m_.push_back(Array::Zero(p.numel()));
    v_.push_back(Array::Zero(p.numel()));
  }
}

template <typename S>
void AdamW<S>::step(const std::vector<Array>& grads, double lr) {
  if (grads.size() != params_.size()) throw std::invalid_argument("adamw: gradient count mismatch");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_)), c2 = 1.0 - std::pow(b2, double(t_));
  const S decay = static_cast<S>(1.0 - lr * config_.weight_decay);
  const S step = static_cast<S>(lr / c1), root_c2 = static_cast<S>(std::sqrt(c2));
  const S eps = static_cast<S>(config_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Array& g = grads[i];
    if (g.size() != m_[i].size()) throw std::invalid_argument("adamw: gradient size mismatch");
    m_[i] = S(b1) * m_[i] + S(1.0 - b1) * g;
    v_[i] = S(b2) * v_[i] + S(1.0 - b2) * g.square();
    Array& p = params_[i].second.parameter_data();
    p = decay * p - step * m_[i] / (v_[i].sqrt() / root_c2 + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

double cosine_lr(double base, Index step, Index total) {
  if (total <= 0) return base;
  const double frac = std::clamp(double(step) / double(total), 0.0, 1.0);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

std::string metrics_csv(const std::vector<EpochStats>& history) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[160];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(e.epoch),
                  e.train_loss, e.valid_loss, e.lr);
    out += buf;
  }
  return out;
}

LightT2M<float> clone(const LightT2M<float>& model) {
  LightT2M<float> copy(model.config(), 0);
  copy_parameters(model, copy);
  return copy;
}

namespace {

// stream ids under the master seed
constexpr std::uint64_t kShuffleStream = 1, kItemStream = 2, kValidStream = 3;

std::vector<Tensor<float>> normalized(const std::vector<MotionSequence>& split,
                                      const Normalizer& norm) {
  std::vector<Tensor<float>> out;
  out.reserve(split.size());
  for (const auto& m : split) out.push_back(norm.normalize(to_tensor<float>(m.frames)));
  return out;
}

std::string gradient_dump(const ParamList<float>& params,
                          const std::vector<Tensor<float>::Array>& grads) {
  std::vector<std::pair<double, std::string>> norms;
  for (std::size_t i = 0; i < params.size(); ++i) {
    norms.emplace_back(std::sqrt(double(grads[i].square().sum())), params[i].first);
  }
  std::sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) {
    // NaN norms first
    if (std::isnan(a.first) != std::isnan(b.first)) return std::isnan(a.first);
    return a.first > b.first;
  });
  std::ostringstream os;
  for (std::size_t i = 0; i < std::min<std::size_t>(8, norms.size()); ++i) {
    os << "\n  |grad| " << norms[i].second << " = " << norms[i].first;
  }
  return os.str();
}

}  // namespace

double validation_loss(const LightT2M<float>& model, const NoiseSchedule& schedule,
                       const std::vector<Tensor<float>>& motions,
                       const std::vector<MotionSequence>& split, const RunConfig& config) {
  const Rng root = Rng(config.seed).split(kValidStream);
  const Denoiser<float> f = as_denoiser(model);
  double total = 0.0;
  for (std::size_t i = 0; i < motions.size(); ++i) {
    Rng rng = root.split(i);
    total += training_loss(f, schedule, motions[i], split[i].caption,
                           config.guidance.cond_dropout, rng)
                 .loss.item();
  }
  return total / double(motions.size());
}

TrainResult train(const RunConfig& config, const Corpus& corpus, const TrainOptions& options) {
  config.validate();
  if (config.model.motion_dim != kMotionDim) {
    throw std::invalid_argument("train: motion_dim must be " + std::to_string(kMotionDim) +
                                " for the synthetic corpus");
  }
  const auto start = std::chrono::steady_clock::now();
  const Normalizer norm = Normalizer::fit(corpus.train);
  const auto train_x = normalized(corpus.train, norm);
  const auto valid_x = normalized(corpus.valid, norm);
  const NoiseSchedule schedule = config.schedule();

  LightT2M<float> model(config.model, config.seed);
  const ParamList<float> params = model.parameters();
  AdamW<float> opt(params, {config.beta1, config.beta2, config.adam_eps, config.weight_decay});
  const Denoiser<float> f = as_denoiser(model);

  std::ofstream csv;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    csv.open(options.out_dir / "metrics.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write metrics.csv in " + options.out_dir.string());
    csv << kMetricsHeader << '\n' << std::flush;
  }

  const Index n = static_cast<Index>(train_x.size());
  const Index per_epoch = (n + config.batch - 1) / config.batch;
  const Index total_steps = per_epoch * config.epochs;
  Index global_step = 0;

  TrainResult result;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<Tensor<float>::Array> grads(params.size());
  std::vector<Index> order(static_cast<std::size_t>(n));

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    for (Index i = 0; i < n; ++i) order[std::size_t(i)] = i;
    Rng shuffle = Rng(config.seed).split(kShuffleStream).split(std::uint64_t(epoch));
    for (Index i = n - 1; i > 0; --i) {
      std::swap(order[std::size_t(i)], order[std::size_t(shuffle.uniform_int(0, i))]);
    }
    const Rng epoch_rng = Rng(config.seed).split(kItemStream).split(std::uint64_t(epoch));

    double loss_sum = 0.0, lr = 0.0;
    for (Index b = 0; b < per_epoch; ++b) {
      const Index lo = b * config.batch, hi = std::min(n, lo + config.batch);
      const float inv = 1.0f / float(hi - lo);
      for (std::size_t i = 0; i < params.size(); ++i) grads[i].setZero(params[i].second.numel());
      for (Index pos = lo; pos < hi; ++pos) {
        const auto item = static_cast<std::size_t>(order[std::size_t(pos)]);
        Rng rng = epoch_rng.split(std::uint64_t(pos));
        Tape<float> tape;
        const auto sample = training_loss(f, schedule, train_x[item], corpus.train[item].caption,
                                          config.guidance.cond_dropout, rng);
        const double loss = sample.loss.item();
        tape.backward(sample.loss);
        for (std::size_t i = 0; i < params.size(); ++i) grads[i] += inv * tape.grad(params[i].second);
        if (!std::isfinite(loss)) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", step " << global_step << " (item "
             << item << ", t = " << sample.step << "), lr " << cosine_lr(config.lr, global_step,
                                                                        total_steps)
             << gradient_dump(params, grads);
          throw TrainingDiverged(os.str());
        }
        loss_sum += loss;
      }
      for (const auto& g : grads) {
        if (!g.allFinite()) {
          throw TrainingDiverged("non-finite gradient at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(global_step) +
                                 gradient_dump(params, grads));
        }
      }
      lr = cosine_lr(config.lr, global_step, total_steps);
      opt.step(grads, lr);
      ++global_step;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / double(n);
    stats.valid_loss = validation_loss(model, schedule, valid_x, corpus.valid, config);
    stats.lr = lr;
    result.history.push_back(stats);
    if (csv.is_open()) {
      const std::string line = metrics_csv({stats});
      csv << line.substr(line.find('\n') + 1) << std::flush;
    }
    if (stats.valid_loss < best_valid) {
      best_valid = stats.valid_loss;
      result.best = Checkpoint{config, norm, clone(model), epoch, stats.valid_loss};
    }
    if (options.on_epoch) options.on_epoch(stats);
  }

  result.last = Checkpoint{config, norm, clone(model), config.epochs,
                           result.history.back().valid_loss};
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "checkpoint", result.best);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace lt2m
