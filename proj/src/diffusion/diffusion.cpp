#include "lt2m/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace lt2m {

namespace {

void check_step(const NoiseSchedule& s, Index t, Index lo) {
  if (t < lo || t > s.steps()) {
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [" +
                            std::to_string(lo) + ", " + std::to_string(s.steps()) + "]");
  }
}

template <typename S>
void check_same(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace

double NoiseSchedule::beta_at(Index t) const {
  check_step(*this, t, 1);
  return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_at(Index t) const {
  check_step(*this, t, 1);
  return alpha[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(Index t) const {
  check_step(*this, t, 0);
  return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule build_schedule(Index steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule: need at least one step");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("schedule: need 0 < beta_start < beta_end < 1");
  }
  NoiseSchedule s;
  s.beta.resize(static_cast<std::size_t>(steps));
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  double prod = 1.0;
  for (Index i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : double(i) / double(steps - 1);
    const auto k = static_cast<std::size_t>(i);
    s.beta[k] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[k] = 1.0 - s.beta[k];
    prod *= s.alpha[k];
    s.alpha_bar[k] = prod;
  }
  return s;
}

void GuidanceConfig::validate() const {
  if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) {
    throw std::invalid_argument("guidance: condition dropout must lie in [0, 1]");
  }
  if (!std::isfinite(scale)) throw std::invalid_argument("guidance: scale must be finite");
}

template <typename S>
Tensor<S> q_sample(const NoiseSchedule& schedule, const Tensor<S>& m0, Index t,
                   const Tensor<S>& eps) {
  check_same(m0, eps, "q_sample");
  check_step(schedule, t, 1);
  const double ab = schedule.alpha_bar_at(t);
  const S a = static_cast<S>(std::sqrt(ab)), b = static_cast<S>(std::sqrt(1.0 - ab));
  return Tensor<S>(m0.shape(), a * m0.array() + b * eps.array());
}

template <typename S>
Tensor<S> eps_from_x0(const NoiseSchedule& schedule, const Tensor<S>& m_t,
                      const Tensor<S>& m0_hat, Index t) {
  check_same(m_t, m0_hat, "eps_from_x0");
  const double ab = schedule.alpha_bar_at(t);
  if (1.0 - ab < 1e-12) {
    throw std::domain_error("eps_from_x0: 1 - alpha_bar too small at step " + std::to_string(t));
  }
  const S a = static_cast<S>(std::sqrt(ab)), b = static_cast<S>(std::sqrt(1.0 - ab));
  return Tensor<S>(m_t.shape(), (m_t.array() - a * m0_hat.array()) / b);
}

template <typename S>
Tensor<S> standard_normal(const Shape& shape, Rng& rng) {
  typename Tensor<S>::Array data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) data(i) = static_cast<S>(rng.normal());
  return Tensor<S>(shape, std::move(data));
}

template <typename S>
LossSample<S> training_loss(const Denoiser<S>& model, const NoiseSchedule& schedule,
                            const Tensor<S>& m0, Index caption, double cond_dropout, Rng& rng) {
  LossSample<S> out;
  out.step = rng.uniform_int(1, schedule.steps());
  const bool dropped = rng.bernoulli(cond_dropout);
  if (!dropped) out.caption = caption;
  const Tensor<S> eps = standard_normal<S>(m0.shape(), rng);
  const Tensor<S> m_t = q_sample(schedule, m0, out.step, eps);
  out.loss = mean(square(sub(m0, model(m_t, out.step, out.caption))));
  return out;
}

template <typename S>
Tensor<S> cfg_combine(const Tensor<S>& eps_c, const Tensor<S>& eps_u, double scale) {
  check_same(eps_c, eps_u, "cfg_combine");
  if (scale == 0.0) return Tensor<S>(eps_c.shape(), eps_c.array());
  const S s = static_cast<S>(scale);
  return Tensor<S>(eps_c.shape(), (S(1) + s) * eps_c.array() - s * eps_u.array());
}

template <typename S>
Tensor<S> ddpm_step(const NoiseSchedule& schedule, const Tensor<S>& m_t, const Tensor<S>& eps_hat,
                    Index t, Index t_prev, Rng& rng) {
  check_same(m_t, eps_hat, "ddpm_step");
  check_step(schedule, t, 1);
  if (t_prev < 0 || t_prev >= t) throw std::invalid_argument("ddpm_step: need 0 <= t_prev < t");
  const double ab = schedule.alpha_bar_at(t), ab_prev = schedule.alpha_bar_at(t_prev);
  const double alpha = ab / ab_prev, beta = 1.0 - alpha;
  const S c0 = static_cast<S>(1.0 / std::sqrt(alpha));
  const S c1 = static_cast<S>(beta / std::sqrt(1.0 - ab));
  typename Tensor<S>::Array next = c0 * (m_t.array() - c1 * eps_hat.array());
  if (t_prev > 0) {
    const double var = beta * (1.0 - ab_prev) / (1.0 - ab);
    next += static_cast<S>(std::sqrt(var)) * standard_normal<S>(m_t.shape(), rng).array();
  }
  return Tensor<S>(m_t.shape(), std::move(next));
}

template <typename S>
Tensor<S> ddim_step(const NoiseSchedule& schedule, const Tensor<S>& m_t, const Tensor<S>& eps_hat,
                    Index t, Index t_prev) {
  check_same(m_t, eps_hat, "ddim_step");
  check_step(schedule, t, 1);
  if (t_prev < 0 || t_prev >= t) throw std::invalid_argument("ddim_step: need 0 <= t_prev < t");
  const double ab = schedule.alpha_bar_at(t), ab_prev = schedule.alpha_bar_at(t_prev);
  const S a = static_cast<S>(std::sqrt(ab)), b = static_cast<S>(std::sqrt(1.0 - ab));
  const S a_prev = static_cast<S>(std::sqrt(ab_prev));
  const S b_prev = static_cast<S>(std::sqrt(1.0 - ab_prev));
  const typename Tensor<S>::Array m0_hat = (m_t.array() - b * eps_hat.array()) / a;
  return Tensor<S>(m_t.shape(), a_prev * m0_hat + b_prev * eps_hat.array());
}

std::string to_string(Sampler s) { return s == Sampler::kDdpm ? "ddpm" : "ddim"; }

Sampler parse_sampler(const std::string& text) {
  if (text == "ddpm") return Sampler::kDdpm;
  if (text == "ddim") return Sampler::kDdim;
  throw std::invalid_argument("unknown sampler '" + text + "' (expected ddpm or ddim)");
}

std::vector<Index> sampling_timesteps(Index total, Index steps) {
  if (steps < 1 || steps > total) {
    throw std::invalid_argument("sampling steps must lie in [1, " + std::to_string(total) + "]");
  }
  std::vector<Index> out;
  for (Index i = steps; i >= 1; --i) out.push_back(i * total / steps);
  return out;
}

template <typename S>
Tensor<S> sample(const Denoiser<S>& model, const NoiseSchedule& schedule,
                 std::optional<Index> caption, const SampleOptions& options, Index length,
                 Index motion_dim, Rng& rng, const Normalizer* normalizer) {
  if (length < 1 || motion_dim < 1) throw std::invalid_argument("sample: empty motion");
  const std::vector<Index> ts = sampling_timesteps(schedule.steps(), options.steps);
  const bool guided = caption.has_value() && options.guidance != 0.0;
  Tensor<S> m = standard_normal<S>({length, motion_dim}, rng);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const Index t = ts[i];
    const Index t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    Tensor<S> eps = eps_from_x0(schedule, m, model(m, t, caption), t);
    if (guided) {
      const Tensor<S> eps_u = eps_from_x0(schedule, m, model(m, t, std::nullopt), t);
      eps = cfg_combine(eps, eps_u, options.guidance);
    }
    m = options.sampler == Sampler::kDdim ? ddim_step(schedule, m, eps, t, t_prev)
                                          : ddpm_step(schedule, m, eps, t, t_prev, rng);
  }
  return normalizer ? normalizer->denormalize(m) : m;
}

#define LT2M_INSTANTIATE_DIFFUSION(S)                                                            \
  template Tensor<S> q_sample(const NoiseSchedule&, const Tensor<S>&, Index, const Tensor<S>&); \
  template Tensor<S> eps_from_x0(const NoiseSchedule&, const Tensor<S>&, const Tensor<S>&,      \
                                 Index);                                                         \
  template Tensor<S> standard_normal<S>(const Shape&, Rng&);                                     \
  template LossSample<S> training_loss(const Denoiser<S>&, const NoiseSchedule&,                \
                                       const Tensor<S>&, Index, double, Rng&);                   \
  template Tensor<S> cfg_combine(const Tensor<S>&, const Tensor<S>&, double);                    \
  template Tensor<S> ddpm_step(const NoiseSchedule&, const Tensor<S>&, const Tensor<S>&, Index, \
                               Index, Rng&);                                                     \
  template Tensor<S> ddim_step(const NoiseSchedule&, const Tensor<S>&, const Tensor<S>&, Index, \
                               Index);                                                           \
  template Tensor<S> sample(const Denoiser<S>&, const NoiseSchedule&, std::optional<Index>,     \
                            const SampleOptions&, Index, Index, Rng&, const Normalizer*);

LT2M_INSTANTIATE_DIFFUSION(float)
LT2M_INSTANTIATE_DIFFUSION(double)

}  // namespace lt2m
