#include <doctest.h>

#include <cmath>

#include "eegrecon/nn/layers.hpp"
#include "support/gradcheck.hpp"

using namespace eegrecon::nn;
using testsupport::grad_check;
using testsupport::random_tensor;

TEST_CASE("conv2d matches a direct nested-loop convolution") {
  std::mt19937_64 rng(1);
  Var x = constant(random_tensor({2, 3, 5, 6}, rng));
  Var w = constant(random_tensor({4, 3, 3, 3}, rng));
  Var b = constant(random_tensor({4}, rng));
  Var y = conv2d(x, w, b, 2, 1);
  REQUIRE(y->shape() == Shape{2, 4, 3, 3});
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double acc = b->value[o];
          for (int c = 0; c < 3; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const int yy = i * 2 - 1 + ki, xx = j * 2 - 1 + kj;
                if (yy < 0 || yy >= 5 || xx < 0 || xx >= 6) continue;
                acc += w->value[((o * 3 + c) * 3 + ki) * 3 + kj] * x->value[((n * 3 + c) * 5 + yy) * 6 + xx];
              }
          CHECK(y->value[((n * 4 + o) * 3 + i) * 3 + j] == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("conv and pooling gradients match finite differences") {
  std::mt19937_64 rng(2);
  Conv2d c1(3, 4, 3, 1, 1, rng), c2(4, 2, 3, 2, 1, rng);
  Conv1d c3(2, 3, 5, 2, 2, rng);
  Var x = constant(random_tensor({2, 3, 6, 6}, rng));
  ParamList params;
  c1.collect(params, "c1");
  c2.collect(params, "c2");
  c3.collect(params, "c3");
  auto loss = [&] {
    Var h = silu(c1(x));
    h = upsample_nearest2x(c2(h));          // [2,2,6,6]
    Var seq = reshape(h, {2, 2, 36});
    Var z = c3(seq);                         // [2,3,18]
    Var pooled = adaptive_avg_pool1d(avg_pool1d(z, 2), 4);
    return mean(mul(pooled, pooled));
  };
  auto res = grad_check(loss, params, 8);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("lstm, embedding and cross-entropy gradients match finite differences") {
  std::mt19937_64 rng(3);
  Lstm cell(3, 5, rng);
  Linear head(5, 4, rng);
  Var table = make_param({6, 5}, 5, rng);
  Var x = constant(random_tensor({2, 3, 7}, rng));
  ParamList params;
  cell.collect(params, "lstm");
  head.collect(params, "head");
  params.push_back({"table", table});
  auto loss = [&] {
    Var h = cell.forward_last(x);
    Var e = embedding_mean(table, {{0, 2, 2}, {5}});
    Var logits = head(add(h, tanh(e)));
    Var seq = cell.forward_sequence(x);
    return add(cross_entropy(logits, {1, 3}), scale(mean(exp(scale(seq, 0.5))), 0.1));
  };
  auto res = grad_check(loss, params, 8);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("concat, slice, channelwise add and mse gradients") {
  std::mt19937_64 rng(4);
  Var a = make_param({2, 3, 2, 2}, 3, rng);
  Var b = make_param({2, 1, 2, 2}, 3, rng);
  Var v = make_param({2, 4}, 3, rng);
  Var target = constant(random_tensor({2, 2, 2, 2}, rng));
  ParamList params{{"a", a}, {"b", b}, {"v", v}};
  auto loss = [&] {
    Var c = add_channelwise(concat(a, b), v);
    Var s = slice(c, 1, 2);
    return mse_loss(sigmoid(add_scalar(sub(s, scale(s, 0.3)), 0.2)), target);
  };
  auto res = grad_check(loss, params, 16);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("no-grad mode builds no graph") {
  std::mt19937_64 rng(5);
  Linear l(3, 2, rng);
  NoGradGuard guard;
  Var y = l(constant(Tensor({1, 3}, 1.0)));
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("adam with zero learning rate leaves weights untouched") {
  std::mt19937_64 rng(6);
  Linear l(3, 2, rng);
  ParamList params;
  l.collect(params, "l");
  const auto before = l.weight->value.data;
  Adam opt(params, 0.0);
  backward(mean(l(constant(Tensor({4, 3}, 1.0)))));
  opt.step();
  CHECK(l.weight->value.data == before);
}
