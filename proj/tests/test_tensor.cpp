// SPDX-License-Identifier: Apache-2.0
#include "dysi/tensor.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "dysi/optimizer.hpp"
#include "dysi/rng.hpp"
#include "testutil.hpp"

using namespace dysi;

TEST_CASE("softmax hand values and shift invariance") {
  auto t = Tensor::from_values({2}, {0.0f, 0.0f});
  auto y = softmax(t, 0);
  CHECK(y.values()[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(y.values()[1] == doctest::Approx(0.5).epsilon(1e-6));

  const float ln3 = std::log(3.0f);
  auto y2 = softmax(Tensor::from_values({2}, {0.0f, ln3}), 0);
  CHECK(y2.values()[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(y2.values()[1] == doctest::Approx(0.75).epsilon(1e-6));

  // Adding any constant along the axis must not change the result.
  for (float c : {-50.0f, -1.0f, 3.25f, 200.0f}) {
    auto shifted = softmax(Tensor::from_values({2}, {c, c + ln3}), 0);
    CHECK(shifted.values()[0] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(shifted.values()[1] == doctest::Approx(0.75).epsilon(1e-6));
  }
}

TEST_CASE("softmax rows sum to one and stay positive") {
  Rng rng(7);
  auto logits = Tensor::from_values({6, 9}, testutil::random_values<float>(54, rng, 4.0));
  auto y = softmax_lastdim(logits);
  for (int r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (int j = 0; j < 9; ++j) {
      const float p = y.values()[static_cast<std::size_t>(r * 9 + j)];
      CHECK(p > 0.0f);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax rejects an invalid axis") {
  auto t = Tensor::from_values({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  CHECK_THROWS_AS(softmax(t, 2), ShapeError);
  CHECK_THROWS_AS(softmax(t, -1), ShapeError);
}

TEST_CASE("softmax over a non-final axis normalizes that axis") {
  auto t = Tensor::from_values({2, 2}, {0.0f, 5.0f, 0.0f, 5.0f});
  auto y = softmax(t, 0);
  CHECK(y.values()[0] == doctest::Approx(0.5));
  CHECK(y.values()[2] == doctest::Approx(0.5));
}

TEST_CASE("label smoothed nll hand values") {
  // eps 0, p(target) = 0.5
  auto lp = Tensor::from_values({2}, {std::log(0.5f), std::log(0.5f)});
  CHECK(label_smoothed_nll(lp, 0, 0.0).item() == doctest::Approx(0.6931).epsilon(1e-3));

  // eps 0.1, uniform over V=4: smoothing cannot change a uniform row.
  auto uni = Tensor::from_values({4}, std::vector<float>(4, std::log(0.25f)));
  CHECK(label_smoothed_nll(uni, 2, 0.1).item() == doctest::Approx(1.3863).epsilon(1e-3));

  // eps 0.1, V=2, p=[0.9, 0.1], target 0
  auto lp2 = Tensor::from_values({2}, {std::log(0.9f), std::log(0.1f)});
  CHECK(label_smoothed_nll(lp2, 0, 0.1).item() == doctest::Approx(0.3251).epsilon(1e-3));
}

TEST_CASE("label smoothed nll with eps 0 is plain nll bitwise") {
  Rng rng(3);
  auto logits = Tensor::from_values({5}, testutil::random_values<float>(5, rng));
  auto lp = log_softmax_lastdim(logits);
  const float direct = -lp.values()[3];
  CHECK(label_smoothed_nll(lp, 3, 0.0).item() == direct);
}

TEST_CASE("label smoothed nll rejects out-of-range targets") {
  auto lp = Tensor::from_values({2}, {std::log(0.5f), std::log(0.5f)});
  CHECK_THROWS_AS(label_smoothed_nll(lp, 2, 0.0), IndexError);
  CHECK_THROWS_AS(label_smoothed_nll(lp, -1, 0.0), IndexError);
}

TEST_CASE("kl divergence hand values") {
  auto p = Tensor::from_values({2}, {1.0f, 0.0f});
  auto lq = Tensor::from_values({2}, {std::log(0.5f), std::log(0.5f)});
  CHECK(kl_divergence(p, lq).item() == doctest::Approx(0.6931).epsilon(1e-3));

  auto p2 = Tensor::from_values({2}, {0.5f, 0.5f});
  auto lq2 = Tensor::from_values({2}, {std::log(0.25f), std::log(0.75f)});
  CHECK(kl_divergence(p2, lq2).item() == doctest::Approx(0.1438).epsilon(1e-3));
}

TEST_CASE("kl of a distribution against its own log is exactly zero") {
  Rng rng(11);
  auto logits = Tensor::from_values({8}, testutil::random_values<float>(8, rng, 2.0));
  auto p = softmax_lastdim(logits);
  std::vector<float> logs(p.values().size());
  for (std::size_t i = 0; i < logs.size(); ++i) logs[i] = std::log(p.values()[i]);
  auto lq = Tensor::from_values({8}, logs);
  CHECK(kl_divergence(p, lq).item() == 0.0f);
}

TEST_CASE("kl is nonnegative up to float slack on random pairs") {
  Rng rng(13);
  for (int trial = 0; trial < 2000; ++trial) {
    auto p = softmax_lastdim(Tensor::from_values({6}, testutil::random_values<float>(6, rng, 3.0)));
    auto lq =
        log_softmax_lastdim(Tensor::from_values({6}, testutil::random_values<float>(6, rng, 3.0)));
    CHECK(kl_divergence(p, lq).item_f64() >= -1e-6);
  }
}

TEST_CASE("kl rejects shape mismatches") {
  auto p = Tensor::from_values({2}, {0.5f, 0.5f});
  auto lq = Tensor::from_values({3}, {-1.0f, -1.0f, -1.2f});
  CHECK_THROWS_AS(kl_divergence(p, lq), ShapeError);
}

TEST_CASE("backward of sum gives ones; x*x gives 2x") {
  auto x = Tensor::parameter({3}, {1.0f, 2.0f, 3.0f});
  backward(sum_all(x));
  CHECK(x.grad() == std::vector<float>{1.0f, 1.0f, 1.0f});

  backward(sum_all(mul(x, x)));
  CHECK(x.grad() == std::vector<float>{2.0f, 4.0f, 6.0f});
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor::parameter({3}, {1.0f, 2.0f, 3.0f});
  CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
}

TEST_CASE("stop_gradient passes values through and blocks the path") {
  auto x = Tensor::parameter({2}, {1.5f, -2.25f});
  auto s = stop_gradient(x);
  CHECK(s.values() == x.values());

  // The barrier hides x from backward entirely: it never receives a
  // contribution, which reads as zero once the trainer zero-fills grads.
  x.grad_mut().assign(2, 0.0f);
  backward(sum_all(stop_gradient(x)));
  CHECK(x.grad() == std::vector<float>{0.0f, 0.0f});

  // One frozen factor: d/dx sum(x * stop(x)) = stop(x) = x.
  auto x2 = Tensor::parameter({1}, {2.0f});
  backward(sum_all(mul(x2, stop_gradient(x2))));
  CHECK(x2.grad() == std::vector<float>{2.0f});
}

TEST_CASE("no-grad mode builds no graph") {
  auto x = Tensor::parameter({2}, {1.0f, 2.0f});
  NoGradGuard guard;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("finite differences validate every differentiable primitive") {
  using D = TensorT<double>;
  Rng rng(21);

  SUBCASE("matmul + add bias + gelu chain") {
    std::vector<D> leaves = {
        D::parameter({3, 4}, testutil::random_values<double>(12, rng, 0.7)),
        D::parameter({4, 5}, testutil::random_values<double>(20, rng, 0.7)),
        D::parameter({5}, testutil::random_values<double>(5, rng, 0.3))};
    auto loss = [&] { return sum_all(gelu(add(matmul(leaves[0], leaves[1]), leaves[2]))); };
    CHECK(testutil::max_fd_rel_error<double>(leaves, loss) < 1e-3);
  }

  SUBCASE("bmm both orientations") {
    std::vector<D> leaves = {
        D::parameter({2, 3, 4}, testutil::random_values<double>(24, rng, 0.6)),
        D::parameter({2, 4, 3}, testutil::random_values<double>(24, rng, 0.6))};
    auto loss_nn = [&] { return sum_all(mul(bmm(leaves[0], leaves[1], false),
                                            bmm(leaves[0], leaves[1], false))); };
    CHECK(testutil::max_fd_rel_error<double>(leaves, loss_nn) < 1e-3);
    std::vector<D> leaves_t = {
        D::parameter({2, 3, 4}, testutil::random_values<double>(24, rng, 0.6)),
        D::parameter({2, 5, 4}, testutil::random_values<double>(40, rng, 0.6))};
    auto loss_nt = [&] { return sum_all(gelu(bmm(leaves_t[0], leaves_t[1], true))); };
    CHECK(testutil::max_fd_rel_error<double>(leaves_t, loss_nt) < 1e-3);
  }

  SUBCASE("softmax and log-softmax") {
    std::vector<D> leaves = {D::parameter({4, 6}, testutil::random_values<double>(24, rng, 1.5))};
    auto target = D::from_values({4, 6}, testutil::random_values<double>(24, rng, 0.5));
    auto loss_sm = [&] { return sum_all(mul(softmax_lastdim(leaves[0]), target)); };
    CHECK(testutil::max_fd_rel_error<double>(leaves, loss_sm) < 1e-3);
    auto loss_lsm = [&] { return sum_all(mul(log_softmax_lastdim(leaves[0]), target)); };
    CHECK(testutil::max_fd_rel_error<double>(leaves, loss_lsm) < 1e-3);
  }

  SUBCASE("layer norm") {
    std::vector<D> leaves = {
        D::parameter({5, 8}, testutil::random_values<double>(40, rng, 1.0)),
        D::parameter({8}, testutil::random_values<double>(8, rng, 0.5)),
        D::parameter({8}, testutil::random_values<double>(8, rng, 0.5))};
    auto probe = D::from_values({5, 8}, testutil::random_values<double>(40, rng, 0.5));
    auto loss = [&] {
      return sum_all(mul(layer_norm(leaves[0], leaves[1], leaves[2]), probe));
    };
    CHECK(testutil::max_fd_rel_error<double>(leaves, loss) < 1e-3);
  }

  SUBCASE("embedding, permute, reshape, slice") {
    std::vector<std::int32_t> ids = {2, 0, 1, 2};
    std::vector<D> leaves = {D::parameter({3, 4}, testutil::random_values<double>(12, rng, 0.8))};
    auto loss = [&] {
      auto e = embedding_lookup(leaves[0], ids);             // [4,4]
      auto r = reshape(e, {2, 2, 4});
      auto p = permute(r, {1, 0, 2});
      auto s = slice_rows(reshape(p, {4, 4}), 3);
      return sum_all(mul(s, s));
    };
    CHECK(testutil::max_fd_rel_error<double>(leaves, loss) < 1e-3);
  }

  SUBCASE("label smoothed nll and kl") {
    std::vector<D> leaves = {D::parameter({3, 5}, testutil::random_values<double>(15, rng, 1.0)),
                             D::parameter({3, 5}, testutil::random_values<double>(15, rng, 1.0))};
    std::vector<std::int32_t> targets = {1, 4, 0};
    std::vector<float> mask = {1.0f, 1.0f, 0.0f};
    auto loss = [&] {
      auto lp = log_softmax_lastdim(leaves[0]);
      auto q = log_softmax_lastdim(leaves[1]);
      auto p = softmax_lastdim(leaves[0]);
      auto nll = label_smoothed_nll_mean(lp, targets, mask, 0.1);
      auto kl = kl_masked_mean(p, q, mask);
      return add(nll, scale(kl, 0.5));
    };
    CHECK(testutil::max_fd_rel_error<double>(leaves, loss) < 1e-3);
  }

  SUBCASE("two-layer network matches finite differences") {
    std::vector<D> leaves = {
        D::parameter({6, 8}, testutil::random_values<double>(48, rng, 0.5)),
        D::parameter({8}, testutil::random_values<double>(8, rng, 0.2)),
        D::parameter({8, 4}, testutil::random_values<double>(32, rng, 0.5)),
        D::parameter({4}, testutil::random_values<double>(4, rng, 0.2))};
    auto x = D::from_values({3, 6}, testutil::random_values<double>(18, rng, 1.0));
    std::vector<std::int32_t> targets = {0, 3, 1};
    std::vector<float> mask = {1.0f, 1.0f, 1.0f};
    auto loss = [&] {
      auto h = gelu(add(matmul(x, leaves[0]), leaves[1]));
      auto logits = add(matmul(h, leaves[2]), leaves[3]);
      return label_smoothed_nll_mean(log_softmax_lastdim(logits), targets, mask, 0.0);
    };
    CHECK(testutil::max_fd_rel_error<double>(leaves, loss, 1e-3) < 1e-3);
  }
}

TEST_CASE("dropout scales and is deterministic per seed") {
  auto x = Tensor::constant({1000}, 1.0f);
  Rng r1(99, 5), r2(99, 5);
  auto y1 = dropout(x, 0.4, r1);
  auto y2 = dropout(x, 0.4, r2);
  CHECK(y1.values() == y2.values());
  int kept = 0;
  for (float v : y1.values()) {
    if (v != 0.0f) {
      CHECK(v == doctest::Approx(1.0f / 0.6f));
      ++kept;
    }
  }
  CHECK(kept > 500);
  CHECK(kept < 700);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  ParamSet params;
  auto p = params.add("w", Tensor::parameter({3}, {1.0f, -2.0f, 0.5f}));
  OptimizerState state;
  state.init(params);
  params.zero_grads();
  const std::vector<float> before = p.values();
  adam_step(params, state, 0.01);
  CHECK(p.values() == before);
  CHECK(state.step == 1);
}

TEST_CASE("first adam step moves a scalar by about lr") {
  ParamSet params;
  auto p = params.add("w", Tensor::parameter({1}, {0.0f}));
  OptimizerState state;
  state.init(params);
  p.grad_mut() = {1.0f};
  adam_step(params, state, 0.001);
  // Bias-corrected first step: lr * g / (|g| + eps).
  CHECK(p.values()[0] == doctest::Approx(-0.001).epsilon(1e-4));
}

TEST_CASE("adam runs are bit-identical for identical inputs") {
  auto run = [] {
    ParamSet params;
    auto p = params.add("w", Tensor::parameter({4}, {0.1f, 0.2f, -0.3f, 0.4f}));
    OptimizerState state;
    state.init(params);
    Rng rng(5);
    for (int i = 0; i < 25; ++i) {
      auto g = testutil::random_values<float>(4, rng);
      p.grad_mut() = g;
      adam_step(params, state, 0.01);
    }
    return p.values();
  };
  CHECK(run() == run());
}

TEST_CASE("inverse sqrt schedule") {
  CHECK(lr_inverse_sqrt(4000, 4000, 8e-4) == doctest::Approx(8e-4));
  CHECK(lr_inverse_sqrt(2000, 4000, 8e-4) == doctest::Approx(4e-4));
  CHECK(lr_inverse_sqrt(16000, 4000, 8e-4) == doctest::Approx(4e-4));
  CHECK_THROWS_AS(lr_inverse_sqrt(1, 0, 8e-4), ConfigError);
}

TEST_CASE("forward primitives keep finite inputs finite") {
  Rng rng(31);
  auto a = Tensor::from_values({4, 5}, testutil::random_values<float>(20, rng, 10.0));
  CHECK(all_finite(softmax_lastdim(a)));
  CHECK(all_finite(log_softmax_lastdim(a)));
  CHECK(all_finite(gelu(a)));
}
