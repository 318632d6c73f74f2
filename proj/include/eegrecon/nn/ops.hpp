#pragma once

#include <vector>

#include "eegrecon/nn/tensor.hpp"

namespace eegrecon::nn {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var silu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);

// y = x W^T + b with x [N,F], W [G,F], b [G] (b may be null).
Var linear(const Var& x, const Var& weight, const Var& bias);

// x [N,Ci,H,W], weight [Co,Ci,kh,kw], bias [Co] or null.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

// x [N,Ci,L], weight [Co,Ci,k], bias [Co] or null.
Var conv1d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

Var upsample_nearest2x(const Var& x);

// Concatenate / slice along dim 1; trailing dims must agree.
Var concat(const Var& a, const Var& b);
Var slice(const Var& x, int start, int length);

Var reshape(const Var& x, Shape shape);

// x [N,C,...] + v [N,C] broadcast over the trailing dims.
Var add_channelwise(const Var& x, const Var& v);

// [N,C,L] -> [N,C,L/window], non-overlapping mean windows (tail dropped).
Var avg_pool1d(const Var& x, int window);

// [N,C,L] -> [N,C,bins], contiguous near-equal segments.
Var adaptive_avg_pool1d(const Var& x, int bins);

// [N,C,L] -> [N,C] at time index t.
Var time_step(const Var& x, int t);

// L tensors of [N,C] -> [N,C,L]; inverse of time_step over all t.
Var stack_time(const std::vector<Var>& steps);

// Rows of table [V,E] averaged per sample: out[n] = mean(table[ids[n][*]]).
Var embedding_mean(const Var& table, const std::vector<std::vector<int>>& ids);

Var sum(const Var& x);
Var mean(const Var& x);

// Mean over all elements of (pred - target)^2.
Var mse_loss(const Var& pred, const Var& target);

// Mean softmax cross-entropy of logits [N,K] against integer labels.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

}  // namespace eegrecon::nn
