#pragma once

#include "lt2m/data.hpp"
#include "lt2m/model.hpp"
#include "lt2m/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lt2m {

/// Per-step variances. Vectors are indexed by t - 1; the accessors take
/// the 1-based step.
struct NoiseSchedule {
  std::vector<double> beta, alpha, alpha_bar;

  Index steps() const { return static_cast<Index>(alpha_bar.size()); }
  double beta_at(Index t) const;
  double alpha_at(Index t) const;
  /// Defined for t in [0, T] with alpha_bar_at(0) == 1.
  double alpha_bar_at(Index t) const;
};

/// Linear betas; throws std::invalid_argument unless
/// 0 < beta_start < beta_end < 1 and steps >= 1.
NoiseSchedule build_schedule(Index steps = 1000, double beta_start = 1e-4, double beta_end = 1e-2);

struct GuidanceConfig {
  double scale = 4.0;
  double cond_dropout = 0.2;

  void validate() const;
};

/// sqrt(abar_t) m0 + sqrt(1 - abar_t) eps. Not recorded on a tape.
template <typename S>
Tensor<S> q_sample(const NoiseSchedule& schedule, const Tensor<S>& m0, Index t,
                   const Tensor<S>& eps);

/// Noise implied by a clean-motion estimate; inverse of q_sample in eps.
/// Throws std::domain_error when 1 - abar_t < 1e-12.
template <typename S>
Tensor<S> eps_from_x0(const NoiseSchedule& schedule, const Tensor<S>& m_t,
                      const Tensor<S>& m0_hat, Index t);

template <typename S>
Tensor<S> standard_normal(const Shape& shape, Rng& rng);

/// (m_t, step, caption or null) -> predicted clean motion.
template <typename S>
using Denoiser = std::function<Tensor<S>(const Tensor<S>&, Index, std::optional<Index>)>;

template <typename S>
Denoiser<S> as_denoiser(const LightT2M<S>& model) {
  return [&model](const Tensor<S>& m_t, Index t, std::optional<Index> c) {
    return model.forward(m_t, t, c);
  };
}

template <typename S>
struct LossSample {
  Tensor<S> loss;
  Index step = 0;
  std::optional<Index> caption;  // nullopt when the condition was dropped
};

/// Draws t ~ U{1..T}, then the dropout coin, then eps; returns the mean
/// squared error between m0 and the denoiser's estimate.
template <typename S>
LossSample<S> training_loss(const Denoiser<S>& model, const NoiseSchedule& schedule,
                            const Tensor<S>& m0, Index caption, double cond_dropout, Rng& rng);

/// (1 + s) eps_c - s eps_u
template <typename S>
Tensor<S> cfg_combine(const Tensor<S>& eps_c, const Tensor<S>& eps_u, double scale);

/// Ancestral step from t to t_prev with the small posterior variance. For
/// t_prev < t - 1 the single-step quantities are replaced by their
/// respaced versions alpha = abar_t / abar_prev. No noise when t_prev == 0.
template <typename S>
Tensor<S> ddpm_step(const NoiseSchedule& schedule, const Tensor<S>& m_t, const Tensor<S>& eps_hat,
                    Index t, Index t_prev, Rng& rng);
template <typename S>
Tensor<S> ddpm_step(const NoiseSchedule& schedule, const Tensor<S>& m_t, const Tensor<S>& eps_hat,
                    Index t, Rng& rng) {
  return ddpm_step(schedule, m_t, eps_hat, t, t - 1, rng);
}

/// Deterministic eta = 0 update.
template <typename S>
Tensor<S> ddim_step(const NoiseSchedule& schedule, const Tensor<S>& m_t, const Tensor<S>& eps_hat,
                    Index t, Index t_prev);

enum class Sampler { kDdpm, kDdim };
std::string to_string(Sampler s);
Sampler parse_sampler(const std::string& text);

/// Evenly spaced steps floor(i T / n), i = n..1, in visiting order.
std::vector<Index> sampling_timesteps(Index total, Index steps);

struct SampleOptions {
  Index steps = 10;
  Sampler sampler = Sampler::kDdim;
  double guidance = 4.0;
};

/// Reverse process from M^T ~ N(0, I). The unconditional pass is skipped
/// when guidance is 0 or no caption is given. Output is denormalized when
/// a normalizer is supplied.
template <typename S>
Tensor<S> sample(const Denoiser<S>& model, const NoiseSchedule& schedule,
                 std::optional<Index> caption, const SampleOptions& options, Index length,
                 Index motion_dim, Rng& rng, const Normalizer* normalizer = nullptr);

}  // namespace lt2m
