#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "eegrecon/nn/ops.hpp"

namespace eegrecon::nn {

struct NamedParam {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedParam>;

void set_trainable(const ParamList& params, bool trainable);
std::size_t count_parameters(const ParamList& params);
void zero_grad(const ParamList& params);

// Uniform(-bound, bound) with bound = 1/sqrt(fan_in).
Var make_param(Shape shape, int fan_in, std::mt19937_64& rng);
Var make_zero_param(Shape shape);

struct Linear {
  Var weight, bias;
  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Conv2d {
  Var weight, bias;
  int stride = 1, padding = 0;
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int padding, std::mt19937_64& rng);
  static Conv2d zeros(int in, int out);  // 1x1, all-zero weights and bias
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride, padding); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Conv1d {
  Var weight, bias;
  int stride = 1, padding = 0;
  Conv1d() = default;
  Conv1d(int in, int out, int kernel, int stride, int padding, std::mt19937_64& rng);
  Var operator()(const Var& x) const { return conv1d(x, weight, bias, stride, padding); }
  void collect(ParamList& out, const std::string& prefix) const;
};

// Single-layer LSTM over [N,C,L]; gate order i,f,g,o. Returns the final hidden state [N,H].
struct Lstm {
  Var w_ih, w_hh, bias;
  int input = 0, hidden = 0;
  Lstm() = default;
  Lstm(int input, int hidden, std::mt19937_64& rng);
  Var forward_last(const Var& x) const;
  // Full hidden sequence, as [N,H,L], for stacking layers.
  Var forward_sequence(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

class Adam {
 public:
  Adam(ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  // decoupled (AdamW-style) decay applied to every parameter
  void set_weight_decay(double wd) { wd_ = wd; }
  // Rescales gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
  double clip_grad_norm(double max_norm);

 private:
  ParamList params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  double wd_ = 0.0;
  long t_ = 0;
};

// Copies values (not nodes) from src into dst; names and shapes must agree pairwise.
void copy_values(const ParamList& src, const ParamList& dst);

}  // namespace eegrecon::nn
