#pragma once

// Central finite-difference oracle for the autodiff core. Lives in test code
// so it stays independent of the backward passes it checks.

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "eegrecon/nn/layers.hpp"

namespace testsupport {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
};

// Relative error |a-n| / max(|a|,|n|,floor); floor keeps near-zero entries
// from dominating through cancellation noise.
inline GradCheckResult grad_check(const std::function<eegrecon::nn::Var()>& loss_fn,
                                  const eegrecon::nn::ParamList& params, int probes_per_param = 6,
                                  double h = 1e-6, double floor = 1e-6, unsigned seed = 7) {
  using namespace eegrecon::nn;
  zero_grad(params);
  Var loss = loss_fn();
  backward(loss);
  std::vector<Tensor> analytic;
  for (const auto& p : params) {
    Tensor g = p.var->grad;
    if (g.size() != p.var->value.size()) g = Tensor(p.var->value.shape, 0.0);
    analytic.push_back(std::move(g));
  }

  GradCheckResult res;
  std::mt19937 rng(seed);
  NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].var->value.data;
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    const int probes = std::min<int>(probes_per_param, static_cast<int>(values.size()));
    for (int s = 0; s < probes; ++s) {
      const std::size_t i = probes == static_cast<int>(values.size()) ? static_cast<std::size_t>(s) : pick(rng);
      const double orig = values[i];
      values[i] = orig + h;
      const double up = loss_fn()->value.data[0];
      values[i] = orig - h;
      const double down = loss_fn()->value.data[0];
      values[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k].data[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = params[k].name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return res;
}

inline eegrecon::nn::Tensor random_tensor(eegrecon::nn::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  eegrecon::nn::Tensor t(std::move(shape));
  for (auto& v : t.data) v = n(rng);
  return t;
}

}  // namespace testsupport
