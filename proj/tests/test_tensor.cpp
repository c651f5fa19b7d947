#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cpdss/nn.hpp"
#include "cpdss/rng.hpp"
#include "cpdss/tensor.hpp"

using cpdss::Tensor;

namespace {

template <class T>
Tensor<T> random_tensor(std::size_t r, std::size_t c, cpdss::Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(r, c);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("matmul identity, hand product, zero", "[numcore]") {
  auto eye = Tensor<double>::zeros(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  cpdss::Rng rng(1);
  auto b = random_tensor<double>(3, 4, rng);
  auto prod = cpdss::matmul(eye, b);
  REQUIRE(prod.data() == b.data());

  auto a = Tensor<double>::from_data(2, 2, {1, 2, 3, 4});
  auto v = Tensor<double>::from_data(2, 1, {0, 1});
  auto av = cpdss::matmul(a, v);
  REQUIRE(av.at(0, 0) == 2.0);
  REQUIRE(av.at(1, 0) == 4.0);

  auto zero = Tensor<double>::zeros(2, 3);
  auto zb = cpdss::matmul(zero, random_tensor<double>(3, 2, rng));
  for (double x : zb.data()) REQUIRE(x == 0.0);

  REQUIRE_THROWS_WITH(cpdss::matmul(a, Tensor<double>::zeros(3, 3)),
                      Catch::Matchers::ContainsSubstring("2x2") &&
                          Catch::Matchers::ContainsSubstring("3x3"));
}

TEST_CASE("softmax uniform, stability, closed form", "[numcore]") {
  auto u = cpdss::softmax(Tensor<double>::from_data(1, 3, {0, 0, 0}), 1);
  for (double x : u.data()) REQUIRE(x == Catch::Approx(1.0 / 3).margin(1e-12));

  auto big = cpdss::softmax(Tensor<double>::from_data(1, 2, {1000, 1000}), 1);
  REQUIRE(big.at(0, 0) == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(std::isfinite(big.at(0, 1)));

  auto cf = cpdss::softmax(Tensor<double>::from_data(1, 2, {0.0, std::log(3.0)}), 1);
  REQUIRE(cf.at(0, 0) == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(cf.at(0, 1) == Catch::Approx(0.75).margin(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance", "[numcore]") {
  cpdss::Rng rng(7);
  auto x = random_tensor<double>(5, 9, rng);
  auto y = cpdss::softmax(x, 1);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) s += y.at(i, j);
    REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
  }
  auto shifted = cpdss::softmax(cpdss::add_scalar(x, 123.456), 1);
  for (std::size_t i = 0; i < y.size(); ++i)
    REQUIRE(std::abs(y.data()[i] - shifted.data()[i]) < 1e-6);

  REQUIRE_THROWS_AS(
      cpdss::softmax(Tensor<double>::from_data(1, 2, {std::nan(""), 0.0}), 1),
      cpdss::NumericError);
}

TEST_CASE("softmax axis 0 normalizes columns", "[numcore]") {
  auto x = Tensor<double>::from_data(2, 2, {0.0, 1.0, std::log(3.0), 1.0});
  auto y = cpdss::softmax(x, 0);
  REQUIRE(y.at(0, 0) == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(y.at(1, 0) == Catch::Approx(0.75).margin(1e-12));
  REQUIRE(y.at(0, 1) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("conv1d_k1 identity, channel sum, constant", "[numcore]") {
  cpdss::Rng rng(3);
  auto x = random_tensor<double>(4, 3, rng);
  auto eye = Tensor<double>::zeros(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  auto same = cpdss::conv1d_k1(x, eye, Tensor<double>::zeros(1, 3));
  REQUIRE(same.data() == x.data());

  auto ones = Tensor<double>::filled(3, 1, 1.0);
  auto sums = cpdss::conv1d_k1(x, ones, Tensor<double>::zeros(1, 1));
  for (std::size_t i = 0; i < x.rows(); ++i)
    REQUIRE(sums.at(i, 0) ==
            Catch::Approx(x.at(i, 0) + x.at(i, 1) + x.at(i, 2)).margin(1e-12));

  auto constant =
      cpdss::conv1d_k1(x, Tensor<double>::zeros(3, 2), Tensor<double>::filled(1, 2, 0.5));
  for (double v : constant.data()) REQUIRE(v == 0.5);

  REQUIRE_THROWS_AS(cpdss::conv1d_k1(x, Tensor<double>::zeros(5, 2), Tensor<double>::zeros(1, 2)),
                    cpdss::ShapeError);
}

TEST_CASE("layer_norm constant row, two-point row, zero gain", "[numcore]") {
  auto gain = Tensor<double>::filled(1, 2, 1.0);
  auto bias = Tensor<double>::zeros(1, 2);

  auto flat = cpdss::layer_norm(Tensor<double>::filled(1, 2, 4.0), gain, bias);
  REQUIRE(flat.at(0, 0) == 0.0);
  REQUIRE(flat.at(0, 1) == 0.0);

  auto two = cpdss::layer_norm(Tensor<double>::from_data(1, 2, {1, 3}), gain, bias);
  REQUIRE(two.at(0, 0) == Catch::Approx(-1.0).margin(1e-4));
  REQUIRE(two.at(0, 1) == Catch::Approx(1.0).margin(1e-4));

  auto b2 = Tensor<double>::from_data(1, 2, {7.0, -2.0});
  auto only_bias =
      cpdss::layer_norm(Tensor<double>::from_data(1, 2, {1, 3}), Tensor<double>::zeros(1, 2), b2);
  REQUIRE(only_bias.at(0, 0) == 7.0);
  REQUIRE(only_bias.at(0, 1) == -2.0);
}

TEST_CASE("cross entropy margins, uniform, all-pad", "[numcore]") {
  auto confident = Tensor<double>::zeros(2, 4);
  confident.at(0, 1) = 50.0;
  confident.at(1, 3) = 50.0;
  auto l0 = cpdss::cross_entropy(confident, {1, 3});
  REQUIRE(l0.item() == Catch::Approx(0.0).margin(1e-12));

  auto uniform = Tensor<double>::zeros(3, 20);
  auto l1 = cpdss::cross_entropy(uniform, {0, 5, 19});
  REQUIRE(l1.item() == Catch::Approx(std::log(20.0)).margin(1e-12));

  auto logits = Tensor<double>::zeros(2, 4);
  logits.set_requires_grad(true);
  auto l2 = cpdss::cross_entropy(logits, {-1, -1}, -1);
  REQUIRE(l2.item() == 0.0);
  l2.backward();
  REQUIRE_FALSE(logits.has_grad());

  REQUIRE_THROWS_AS(cpdss::cross_entropy(uniform, {0, 20, 1}), cpdss::IndexError);
}

TEST_CASE("backward sum, elementwise square, detach", "[numcore]") {
  auto x = Tensor<double>::from_data(1, 4, {1, 2, 3, 4});
  x.set_requires_grad(true);
  cpdss::sum(x).backward();
  for (double g : x.grad()) REQUIRE(g == 1.0);

  auto y = Tensor<double>::from_data(1, 3, {1.5, -2.0, 0.5});
  y.set_requires_grad(true);
  cpdss::sum(cpdss::mul(y, y)).backward();
  for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y.grad()[i] == 2.0 * y.data()[i]);

  auto z = Tensor<double>::from_data(1, 2, {1, 2});
  z.set_requires_grad(true);
  auto zd = z.detach();
  auto loss = cpdss::add(cpdss::sum(z), cpdss::sum(zd));
  loss.backward();
  REQUIRE(z.has_grad());
  REQUIRE_FALSE(zd.has_grad());

  REQUIRE_THROWS_AS(cpdss::mul(z, z).backward(), cpdss::ContractError);
}

TEST_CASE("backward shared input equals sum of independent tapes", "[numcore]") {
  cpdss::Rng rng(11);
  auto make_x = [&](cpdss::Rng& r) {
    auto t = random_tensor<double>(2, 3, r);
    t.set_requires_grad(true);
    return t;
  };
  cpdss::Rng r1(42), r2(42), r3(42);
  auto x_shared = make_x(r1);
  auto branch_a = [](const Tensor<double>& x) { return cpdss::sum(cpdss::mul(x, x)); };
  auto branch_b = [](const Tensor<double>& x) { return cpdss::sum(cpdss::silu(x)); };
  cpdss::add(branch_a(x_shared), branch_b(x_shared)).backward();

  auto xa = make_x(r2);
  branch_a(xa).backward();
  auto xb = make_x(r3);
  branch_b(xb).backward();
  for (std::size_t i = 0; i < x_shared.size(); ++i)
    REQUIRE(x_shared.grad()[i] == Catch::Approx(xa.grad()[i] + xb.grad()[i]).margin(1e-14));
  (void)rng;
}

TEST_CASE("forward and backward are bit deterministic", "[numcore]") {
  auto run = [] {
    cpdss::Rng rng(99);
    auto x = random_tensor<float>(6, 6, rng);
    x.set_requires_grad(true);
    auto w = random_tensor<float>(6, 6, rng);
    w.set_requires_grad(true);
    auto y = cpdss::softmax(cpdss::matmul(cpdss::silu(x), w), 1);
    auto loss = cpdss::mean(cpdss::mul(y, y));
    loss.backward();
    return std::make_pair(loss.item(), x.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  REQUIRE(l1 == l2);
  REQUIRE(g1 == g2);
}

TEST_CASE("adamw zero grad no-op, first step size, decoupled decay", "[numcore]") {
  auto p = Tensor<double>::scalar(1.0);
  p.set_requires_grad(true);
  cpdss::AdamW<double> opt({p}, 0.1, 0.0);
  cpdss::scale(cpdss::sum(p), 0.0).backward();
  opt.step();
  REQUIRE(p.item() == 1.0);

  auto q = Tensor<double>::scalar(1.0);
  q.set_requires_grad(true);
  cpdss::AdamW<double> opt2({q}, 0.1, 0.0);
  cpdss::sum(q).backward();
  opt2.step();
  REQUIRE(q.item() == Catch::Approx(0.9).margin(1e-6));

  auto r = Tensor<double>::scalar(2.0);
  r.set_requires_grad(true);
  cpdss::AdamW<double> opt3({r}, 0.1, 0.5);
  for (int s = 0; s < 5; ++s) {
    r.zero_grad();
    cpdss::scale(cpdss::sum(r), 0.0).backward();
    opt3.step();
  }
  REQUIRE(r.item() == Catch::Approx(2.0 * std::pow(1.0 - 0.1 * 0.5, 5)).margin(1e-12));

  auto s = Tensor<double>::scalar(1.0);
  s.set_requires_grad(true);
  cpdss::AdamW<double> opt4({s}, 0.1, 0.0);
  REQUIRE_THROWS_AS(opt4.step(), cpdss::ContractError);
}

TEST_CASE("finite differences: quadratic, constant", "[numcore]") {
  auto x = Tensor<double>::from_data(1, 2, {1, 2});
  auto err = cpdss::finite_difference_check<double>(
      [&] { return cpdss::sum(cpdss::mul(x, x)); }, x, 1e-5);
  REQUIRE(err < 1e-7);

  auto y = Tensor<double>::from_data(1, 3, {1, 2, 3});
  auto err2 = cpdss::finite_difference_check<double>(
      [&] { return cpdss::scale(cpdss::sum(y), 0.0); }, y, 1e-5);
  REQUIRE(err2 == 0.0);
}

TEST_CASE("finite differences across every op", "[numcore]") {
  cpdss::Rng rng(2024);
  auto x = random_tensor<double>(4, 6, rng);
  auto w = random_tensor<double>(6, 6, rng);
  w.set_requires_grad(true);
  auto gain = Tensor<double>::filled(1, 6, 1.2);
  gain.set_requires_grad(true);
  auto bias = Tensor<double>::filled(1, 6, -0.3);
  bias.set_requires_grad(true);
  auto colv = random_tensor<double>(4, 1, rng);
  colv.set_requires_grad(true);

  auto loss_fn = [&] {
    auto h = cpdss::matmul(x, w);
    h = cpdss::layer_norm(h, gain, bias);
    h = cpdss::gelu(h);
    h = cpdss::mul_colvec(h, colv);
    h = cpdss::softmax(h, 1);
    auto parts = std::vector<Tensor<double>>{cpdss::slice_cols(h, 0, 3),
                                             cpdss::slice_cols(h, 3, 6)};
    auto back = cpdss::concat_cols(parts);
    auto gathered = cpdss::index_select_rows(back, {0, 2, 2, 3});
    auto spread = cpdss::scatter_sum_rows(gathered, {1, 0, 1, 2}, 3);
    auto rs = cpdss::row_sum(cpdss::silu(spread));
    auto tr = cpdss::transpose(rs);
    return cpdss::mean(cpdss::mul(tr, tr));
  };

  REQUIRE(cpdss::finite_difference_check<double>(loss_fn, x, 1e-5) < 1e-5);
  REQUIRE(cpdss::finite_difference_check<double>(loss_fn, w, 1e-5) < 1e-5);
  REQUIRE(cpdss::finite_difference_check<double>(loss_fn, gain, 1e-5) < 1e-5);
  REQUIRE(cpdss::finite_difference_check<double>(loss_fn, colv, 1e-5) < 1e-5);

  auto logits = random_tensor<double>(5, 7, rng);
  auto ce_fn = [&] { return cpdss::cross_entropy(logits, {1, 6, -1, 0, 3}, -1); };
  REQUIRE(cpdss::finite_difference_check<double>(ce_fn, logits, 1e-5) < 1e-5);

  auto q = random_tensor<double>(3, 4, rng);
  auto rope_fn = [&] {
    auto r = cpdss::rope_rows(q, {0, 1, 2});
    return cpdss::sum(cpdss::mul(r, r));
  };
  REQUIRE(cpdss::finite_difference_check<double>(rope_fn, q, 1e-5) < 1e-5);

  auto e = random_tensor<double>(2, 5, rng);
  auto mse_fn = [&] {
    auto stacked = cpdss::concat_rows(std::vector<Tensor<double>>{e, cpdss::scale(e, 0.5)});
    return cpdss::mse(cpdss::slice_rows(stacked, 0, 2),
                      cpdss::add_scalar(cpdss::slice_rows(stacked, 2, 4), 0.25));
  };
  REQUIRE(cpdss::finite_difference_check<double>(mse_fn, e, 1e-5) < 1e-5);
}

TEST_CASE("rope identity at origin, relative offsets, hand rotation", "[numcore]") {
  cpdss::Rng rng(5);
  auto q = random_tensor<double>(1, 8, rng);
  auto r0 = cpdss::rope_rows(q, {0});
  REQUIRE(r0.data() == q.data());

  auto k = random_tensor<double>(1, 8, rng);
  auto dot = [](const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
  };
  const double d1 = dot(cpdss::rope_rows(q, {3}), cpdss::rope_rows(k, {7}));
  const double d2 = dot(cpdss::rope_rows(q, {10}), cpdss::rope_rows(k, {14}));
  REQUIRE(d1 == Catch::Approx(d2).margin(1e-5));

  auto xy = Tensor<double>::from_data(1, 2, {1.0, 0.0});
  auto rot = cpdss::rope_rows(xy, {1});  // d_head=2: theta_0 = 1, angle = 1 rad
  REQUIRE(rot.at(0, 0) == Catch::Approx(std::cos(1.0)).margin(1e-12));
  REQUIRE(rot.at(0, 1) == Catch::Approx(std::sin(1.0)).margin(1e-12));

  REQUIRE_THROWS_AS(cpdss::rope_rows(random_tensor<double>(1, 3, rng), {0}),
                    cpdss::ConfigError);
}
