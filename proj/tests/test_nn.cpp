#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cpdss/nn.hpp"

using cpdss::Tensor;

namespace {

template <class T>
Tensor<T> random_tensor(std::size_t r, std::size_t c, cpdss::Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(r, c);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("attention with a single position returns projected values", "[numcore]") {
  cpdss::Rng rng(1);
  cpdss::MultiHeadAttention<double> mha(8, 2, false, rng);
  auto q = random_tensor<double>(1, 8, rng);
  auto k = random_tensor<double>(1, 8, rng);
  auto v = random_tensor<double>(1, 8, rng);
  auto out = mha.attend(q, k, v, nullptr);
  auto expected = mha.wo.forward(v);
  for (std::size_t i = 0; i < out.size(); ++i)
    REQUIRE(out.data()[i] == Catch::Approx(expected.data()[i]).margin(1e-12));
}

TEST_CASE("causal mask blocks information from later positions", "[numcore]") {
  cpdss::Rng rng(2);
  cpdss::MultiHeadAttention<double> mha(8, 2, true, rng);
  auto x = random_tensor<double>(4, 8, rng);
  auto mask = cpdss::causal_mask<double>(4);
  auto base = mha.forward(x, x, &mask);

  auto perturbed = x.detach();
  for (std::size_t j = 0; j < 8; ++j) perturbed.at(3, j) += 1.5;
  auto moved = mha.forward(perturbed, perturbed, &mask);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) REQUIRE(base.at(i, j) == moved.at(i, j));
  bool last_changed = false;
  for (std::size_t j = 0; j < 8; ++j) last_changed = last_changed || base.at(3, j) != moved.at(3, j);
  REQUIRE(last_changed);
}

TEST_CASE("two-token attention matches a hand computation", "[numcore]") {
  // d_model = 2, one head, no rope: every intermediate fits on paper.
  cpdss::Rng rng(3);
  cpdss::MultiHeadAttention<double> mha(2, 1, false, rng);
  auto q = Tensor<double>::from_data(2, 2, {1.0, 0.0, 0.0, 1.0});
  auto k = Tensor<double>::from_data(2, 2, {2.0, 0.0, 0.0, 2.0});
  auto v = Tensor<double>::from_data(2, 2, {1.0, 2.0, 3.0, 4.0});
  auto out = mha.attend(q, k, v, nullptr);

  const double s = 1.0 / std::sqrt(2.0);
  // scores row 0: (q0 . k0, q0 . k1) * s = (2s, 0); row 1: (0, 2s)
  const double a = std::exp(2 * s) / (std::exp(2 * s) + 1.0);
  // row 0 attends to v0 with weight a, v1 with 1-a; row 1 mirrored.
  double expect[2][2] = {{a * 1.0 + (1 - a) * 3.0, a * 2.0 + (1 - a) * 4.0},
                         {(1 - a) * 1.0 + a * 3.0, (1 - a) * 2.0 + a * 4.0}};
  auto proj = mha.wo.forward(Tensor<double>::from_data(2, 2, {expect[0][0], expect[0][1],
                                                              expect[1][0], expect[1][1]}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      REQUIRE(out.at(i, j) == Catch::Approx(proj.at(i, j)).margin(1e-12));
}

TEST_CASE("attention head divisibility is enforced", "[numcore]") {
  cpdss::Rng rng(4);
  REQUIRE_THROWS_AS(cpdss::MultiHeadAttention<double>(6, 4, false, rng), cpdss::ConfigError);
}

TEST_CASE("attention gradients pass finite differences", "[numcore]") {
  cpdss::Rng rng(5);
  cpdss::MultiHeadAttention<double> mha(4, 2, true, rng);
  auto x = random_tensor<double>(3, 4, rng);
  auto mask = cpdss::causal_mask<double>(3);
  auto loss_fn = [&] {
    auto y = mha.forward(x, x, &mask);
    return cpdss::mean(cpdss::mul(y, y));
  };
  REQUIRE(cpdss::finite_difference_check<double>(loss_fn, x, 1e-5) < 1e-5);
  REQUIRE(cpdss::finite_difference_check<double>(loss_fn, mha.wq.w, 1e-5) < 1e-5);
  REQUIRE(cpdss::finite_difference_check<double>(loss_fn, mha.wo.b, 1e-5) < 1e-5);
}

TEST_CASE("mlp stack gradients", "[numcore]") {
  cpdss::Rng rng(6);
  cpdss::Mlp<double> mlp({5, 8, 8, 3}, rng, cpdss::Activation::Silu, false);
  auto x = random_tensor<double>(4, 5, rng);
  auto loss_fn = [&] { return cpdss::mean(cpdss::mul(mlp.forward(x), mlp.forward(x))); };
  for (auto& layer : mlp.layers)
    REQUIRE(cpdss::finite_difference_check<double>(loss_fn, layer.w, 1e-5) < 1e-5);
}

TEST_CASE("linear init is within the fan-in bound and bias is zero", "[numcore]") {
  cpdss::Rng rng(7);
  cpdss::Linear<double> lin(16, 8, rng);
  const double bound = 1.0 / std::sqrt(16.0);
  for (double w : lin.w.data()) {
    REQUIRE(w <= bound);
    REQUIRE(w >= -bound);
  }
  for (double b : lin.b.data()) REQUIRE(b == 0.0);
}
