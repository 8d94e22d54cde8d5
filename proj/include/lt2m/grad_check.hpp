#pragma once

#include "lt2m/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace lt2m {

struct GradCheckOptions {
  double eps = 1e-5;
  // Components checked per tensor; 0 checks all of them.
  Index max_components = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of a scalar function of `leaves` with
/// central differences. Returns max |analytic - numeric| / max(1, |analytic|).
/// `leaves` must be parameter tensors; their storage is perturbed in place
/// and restored.
inline double grad_check(const std::function<Tensor<double>()>& f,
                         std::vector<Tensor<double>> leaves, const GradCheckOptions& opt = {}) {
  std::vector<Tensor<double>::Array> analytic;
  {
    Tape<double> tape;
    Tensor<double> root = f();
    tape.backward(root);
    for (const auto& leaf : leaves) analytic.push_back(tape.grad(leaf));
  }
  std::mt19937_64 gen(opt.seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto& data = leaves[k].parameter_data();
    std::vector<Index> idx(static_cast<std::size_t>(data.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (opt.max_components > 0 && static_cast<Index>(idx.size()) > opt.max_components) {
      std::shuffle(idx.begin(), idx.end(), gen);
      idx.resize(static_cast<std::size_t>(opt.max_components));
    }
    for (Index i : idx) {
      const double saved = data(i);
      data(i) = saved + opt.eps;
      const double up = f().item();
      data(i) = saved - opt.eps;
      const double down = f().item();
      data(i) = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double a = analytic[k](i);
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

/// Single-input form: f is evaluated at a parameter copy of `x`.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double eps) {
  Tensor<double> leaf = Tensor<double>::parameter(x.shape(), x.array());
  return grad_check([&] { return f(leaf); }, {leaf}, GradCheckOptions{eps, 0, 0});
}

}  // namespace lt2m
