#include "eegrecon/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace eegrecon::nn {

void set_trainable(const ParamList& params, bool trainable) {
  for (const auto& p : params) p.var->requires_grad = trainable;
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var->value.size();
  return n;
}

void zero_grad(const ParamList& params) {
  for (const auto& p : params) p.var->grad = Tensor();
}

Var make_param(Shape shape, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = dist(rng);
  return leaf(std::move(t), true);
}

Var make_zero_param(Shape shape) { return leaf(Tensor(std::move(shape), 0.0), true); }

Linear::Linear(int in, int out, std::mt19937_64& rng)
    : weight(make_param({out, in}, in, rng)), bias(make_param({out}, in, rng)) {}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv2d::Conv2d(int in, int out, int kernel, int stride_, int padding_, std::mt19937_64& rng)
    : weight(make_param({out, in, kernel, kernel}, in * kernel * kernel, rng)),
      bias(make_param({out}, in * kernel * kernel, rng)),
      stride(stride_),
      padding(padding_) {}

Conv2d Conv2d::zeros(int in, int out) {
  Conv2d c;
  c.weight = make_zero_param({out, in, 1, 1});
  c.bias = make_zero_param({out});
  return c;
}

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv1d::Conv1d(int in, int out, int kernel, int stride_, int padding_, std::mt19937_64& rng)
    : weight(make_param({out, in, kernel}, in * kernel, rng)),
      bias(make_param({out}, in * kernel, rng)),
      stride(stride_),
      padding(padding_) {}

void Conv1d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Lstm::Lstm(int input_, int hidden_, std::mt19937_64& rng)
    : w_ih(make_param({4 * hidden_, input_}, hidden_, rng)),
      w_hh(make_param({4 * hidden_, hidden_}, hidden_, rng)),
      bias(make_param({4 * hidden_}, hidden_, rng)),
      input(input_),
      hidden(hidden_) {
  // Forget-gate bias starts at 1 so early gradients survive long sequences.
  for (int j = hidden; j < 2 * hidden; ++j) bias->value.data[j] += 1.0;
}

namespace {

std::vector<Var> run_lstm(const Lstm& cell, const Var& x) {
  const int n = x->value.dim(0);
  const int steps = x->value.dim(2);
  Var h = constant(Tensor({n, cell.hidden}));
  Var c = constant(Tensor({n, cell.hidden}));
  std::vector<Var> hs;
  hs.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    Var gates = add(linear(time_step(x, t), cell.w_ih, cell.bias), linear(h, cell.w_hh, nullptr));
    Var i = sigmoid(slice(gates, 0, cell.hidden));
    Var f = sigmoid(slice(gates, cell.hidden, cell.hidden));
    Var g = tanh(slice(gates, 2 * cell.hidden, cell.hidden));
    Var o = sigmoid(slice(gates, 3 * cell.hidden, cell.hidden));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    hs.push_back(h);
  }
  return hs;
}

}  // namespace

Var Lstm::forward_last(const Var& x) const {
  if (x->value.dim(1) != input) throw std::invalid_argument("lstm: input width mismatch");
  return run_lstm(*this, x).back();
}

Var Lstm::forward_sequence(const Var& x) const {
  if (x->value.dim(1) != input) throw std::invalid_argument("lstm: input width mismatch");
  return stack_time(run_lstm(*this, x));
}

void Lstm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w_ih", w_ih});
  out.push_back({prefix + ".w_hh", w_hh});
  out.push_back({prefix + ".bias", bias});
}

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var->value.size(), 0.0);
    v_.emplace_back(p.var->value.size(), 0.0);
  }
}

void Adam::zero_grad() { nn::zero_grad(params_); }

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_)
    for (double g : p.var->grad.data) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (const auto& p : params_)
      for (double& g : p.var->grad.data) g *= k;
  }
  return norm;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Node& p = *params_[k].var;
    if (p.grad.size() != p.value.size()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value.data[i] -= lr_ * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_) + wd_ * p.value.data[i]);
    }
  }
}

void copy_values(const ParamList& src, const ParamList& dst) {
  if (src.size() != dst.size()) throw std::invalid_argument("copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].var->value.shape != dst[i].var->value.shape) {
      throw std::invalid_argument("copy_values: shape mismatch at " + dst[i].name);
    }
    dst[i].var->value.data = src[i].var->value.data;
  }
}

}  // namespace eegrecon::nn
