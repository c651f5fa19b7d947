#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cpdss/diffusion.hpp"
#include "cpdss/egnn.hpp"

using cpdss::NoiseSchedule;
using cpdss::ScheduleKind;
using cpdss::Tensor;

namespace {

cpdss::SSGraph tiny_graph(std::size_t m, cpdss::Rng& rng) {
  cpdss::SSGraph g;
  g.id = "toy";
  const char classes[3] = {'H', 'E', 'C'};
  for (std::size_t i = 0; i < m; ++i) {
    g.types.push_back(classes[i % 3]);
    g.coords.push_back({rng.normal() * 6, rng.normal() * 6, rng.normal() * 6});
    g.segments.push_back({g.types.back(), 2 * i, 2});
  }
  if (m > 1) {
    const auto edges = cpdss::build_knn(g.coords, 3);
    const auto w = cpdss::edge_features(edges, g.coords);
    for (std::size_t e = 0; e < edges.size(); ++e)
      g.edges.push_back({edges[e].first, edges[e].second, w[e]});
  }
  return g;
}

}  // namespace

TEST_CASE("schedule closed forms and clamping", "[diffusion]") {
  REQUIRE(std::abs(cpdss::alpha_bar_raw(ScheduleKind::Sqrt, 0, 200) - 0.99) < 1e-12);
  REQUIRE_THROWS_AS(cpdss::make_schedule("warped", 10), cpdss::ConfigError);
  REQUIRE_THROWS_AS(cpdss::make_schedule(ScheduleKind::Sqrt, 0), cpdss::ConfigError);

  for (const auto kind : {ScheduleKind::Sqrt, ScheduleKind::Linear, ScheduleKind::Cosine}) {
    for (const std::size_t total : {std::size_t{10}, std::size_t{200}, std::size_t{1000}}) {
      const NoiseSchedule s = cpdss::make_schedule(kind, total);
      REQUIRE(s.alpha_bar.size() == total + 1);
      for (std::size_t t = 0; t <= total; ++t) {
        REQUIRE(s.alpha_bar[t] >= cpdss::kAlphaBarFloor);
        REQUIRE(s.alpha_bar[t] <= cpdss::kAlphaBarCeil);
        if (t > 0) REQUIRE(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      }
      for (std::size_t t = 1; t <= total; ++t) {
        REQUIRE(s.beta[t] > 0.0);
        REQUIRE(s.beta[t] < 1.0);
        REQUIRE(s.posterior_var[t] >= 0.0);
      }
    }
  }

  // cosine reaches the floor exactly at t = T
  const NoiseSchedule cos1000 = cpdss::make_schedule(ScheduleKind::Cosine, 1000);
  REQUIRE(cos1000.alpha_bar[1000] == cpdss::kAlphaBarFloor);

  // linear and cosine saturate the ceiling at t = 0
  REQUIRE(cpdss::make_schedule(ScheduleKind::Linear, 200).alpha_bar[0] == cpdss::kAlphaBarCeil);
  REQUIRE(cpdss::make_schedule(ScheduleKind::Cosine, 200).alpha_bar[0] == cpdss::kAlphaBarCeil);

  // sqrt starts at the closed-form 0.99 (inside the clamp range)
  REQUIRE(cpdss::make_schedule(ScheduleKind::Sqrt, 200).alpha_bar[0] ==
          Catch::Approx(0.99).margin(1e-12));
}

TEST_CASE("q_sample forms", "[diffusion]") {
  const NoiseSchedule s = cpdss::make_schedule(ScheduleKind::Sqrt, 100);
  cpdss::Rng rng(1);
  Tensor<double> h0 = cpdss::gaussian_tensor<double>(3, 4, rng);
  Tensor<double> zero = Tensor<double>::zeros(3, 4);

  const auto no_noise = cpdss::q_sample(h0, 7, zero, s);
  for (std::size_t i = 0; i < h0.size(); ++i)
    REQUIRE(no_noise.data()[i] ==
            Catch::Approx(std::sqrt(s.alpha_bar[7]) * h0.data()[i]).margin(1e-14));

  REQUIRE_THROWS_AS(cpdss::q_sample(h0, 101, zero, s), cpdss::IndexError);

  // at the floor-clamped endpoint the signal leaks through sqrt(1e-4)
  Tensor<double> eps = cpdss::gaussian_tensor<double>(3, 4, rng);
  const auto floored = cpdss::q_sample(h0, 100, eps, s);
  for (std::size_t i = 0; i < h0.size(); ++i)
    REQUIRE(floored.data()[i] == Catch::Approx(0.01 * h0.data()[i] +
                                               std::sqrt(1.0 - 1e-4) * eps.data()[i])
                                     .margin(1e-12));
}

TEST_CASE("q_sample marginal variance and norm match Monte Carlo", "[diffusion]") {
  const NoiseSchedule s = cpdss::make_schedule(ScheduleKind::Sqrt, 200);
  cpdss::Rng rng(2);
  Tensor<double> h0 = cpdss::gaussian_tensor<double>(4, 4, rng);
  const std::size_t t = 60;
  const std::size_t draws = 10000;
  const double root_abar = std::sqrt(s.alpha_bar[t]);

  double sum_sq = 0, count = 0, norm_mean = 0, norm_m2 = 0;
  for (std::size_t trial = 0; trial < draws; ++trial) {
    Tensor<double> eps = cpdss::gaussian_tensor<double>(4, 4, rng);
    const auto ht = cpdss::q_sample(h0, t, eps, s);
    double norm_sq = 0;
    for (std::size_t i = 0; i < ht.size(); ++i) {
      const double resid = ht.data()[i] - root_abar * h0.data()[i];
      sum_sq += resid * resid;
      count += 1;
      norm_sq += ht.data()[i] * ht.data()[i];
    }
    const double delta = norm_sq - norm_mean;
    norm_mean += delta / static_cast<double>(trial + 1);
    norm_m2 += delta * (norm_sq - norm_mean);
  }
  const double var = sum_sq / count;
  REQUIRE(var == Catch::Approx(1.0 - s.alpha_bar[t]).epsilon(0.05));

  double h0_norm_sq = 0;
  for (double v : h0.data()) h0_norm_sq += v * v;
  const double expected_norm = s.alpha_bar[t] * h0_norm_sq + (1.0 - s.alpha_bar[t]) * 16.0;
  const double stderr_norm = std::sqrt(norm_m2 / draws / draws);
  REQUIRE(std::abs(norm_mean - expected_norm) < 3.0 * stderr_norm + 1e-9);
}

TEST_CASE("training loss against oracle denoisers", "[diffusion]") {
  const NoiseSchedule s = cpdss::make_schedule(ScheduleKind::Sqrt, 50);
  cpdss::Rng graph_rng(3);
  const auto g = tiny_graph(4, graph_rng);
  Tensor<double> h0 = cpdss::gaussian_tensor<double>(4, 6, graph_rng);

  cpdss::Rng rng_a(11);
  auto perfect = [&](const Tensor<double>&, std::size_t, const cpdss::SSGraph&) { return h0; };
  REQUIRE(cpdss::training_loss(perfect, h0, g, s, rng_a).item() == 0.0);

  cpdss::Rng rng_b(11);
  auto silent = [&](const Tensor<double>&, std::size_t, const cpdss::SSGraph&) {
    return Tensor<double>::zeros(4, 6);
  };
  double expected = 0;
  for (double v : h0.data()) expected += v * v;
  expected /= static_cast<double>(h0.size());
  REQUIRE(cpdss::training_loss(silent, h0, g, s, rng_b).item() ==
          Catch::Approx(expected).margin(1e-12));

  // fixed seed, bit-identical loss
  cpdss::Rng model_rng(5);
  cpdss::EgnnDenoiser<double> model(6, 8, 8, 1, 4, model_rng);
  auto net = [&](const Tensor<double>& ht, std::size_t t, const cpdss::SSGraph& gg) {
    return model.denoise(ht, t, gg);
  };
  cpdss::Rng r1(77), r2(77);
  REQUIRE(cpdss::training_loss(net, h0, g, s, r1).item() ==
          cpdss::training_loss(net, h0, g, s, r2).item());
}

TEST_CASE("single-step sampling returns the model prediction exactly", "[diffusion]") {
  const NoiseSchedule s = cpdss::make_schedule(ScheduleKind::Sqrt, 1);
  cpdss::Rng graph_rng(4);
  const auto g = tiny_graph(3, graph_rng);
  auto halve = [](const Tensor<double>& ht, std::size_t, const cpdss::SSGraph&) {
    return cpdss::scale(ht, 0.5);
  };
  cpdss::Rng sample_rng(123);
  const auto out = cpdss::p_sample<double>(g, s, halve, sample_rng, 5);

  cpdss::Rng replay(123);
  const auto h1 = cpdss::gaussian_tensor<double>(3, 5, replay);
  for (std::size_t i = 0; i < out.size(); ++i)
    REQUIRE(out.data()[i] == 0.5 * h1.data()[i]);
}

TEST_CASE("sampler collapses onto a constant oracle prediction", "[diffusion]") {
  const NoiseSchedule s = cpdss::make_schedule(ScheduleKind::Sqrt, 200);
  cpdss::Rng graph_rng(5);
  const auto g = tiny_graph(4, graph_rng);
  const double target = 5.0;
  auto oracle = [&](const Tensor<double>&, std::size_t, const cpdss::SSGraph&) {
    return Tensor<double>::filled(4, 6, target);
  };
  cpdss::Rng rng(9);
  const auto out = cpdss::p_sample<double>(g, s, oracle, rng, 6);
  for (double v : out.data()) REQUIRE(v == Catch::Approx(target).epsilon(0.05));

  cpdss::Rng r1(31), r2(31);
  const auto a = cpdss::p_sample<double>(g, s, oracle, r1, 6);
  const auto b = cpdss::p_sample<double>(g, s, oracle, r2, 6);
  REQUIRE(a.data() == b.data());
}

TEST_CASE("posterior mean coefficients obey the closed-form deficit", "[diffusion]") {
  // c_pred + c_cur = 1 - (1-a)(1-b)/(1+ab) with a = sqrt(alpha_t),
  // b = sqrt(abar_{t-1}); the sum reaches 1 exactly only when abar_{t-1} = 1,
  // which is how the final sampling step is defined.
  for (const auto kind : {ScheduleKind::Sqrt, ScheduleKind::Linear, ScheduleKind::Cosine}) {
    const NoiseSchedule s = cpdss::make_schedule(kind, 200);
    for (std::size_t t = 2; t <= 200; ++t) {
      const double a = std::sqrt(s.alpha[t]);
      const double b = std::sqrt(s.alpha_bar[t - 1]);
      const double c_pred = b * s.beta[t] / (1.0 - s.alpha_bar[t]);
      const double c_cur = a * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]);
      const double deficit = (1.0 - a) * (1.0 - b) / (1.0 + a * b);
      REQUIRE(std::abs((c_pred + c_cur) - (1.0 - deficit)) < 1e-10);
    }
  }
}

TEST_CASE("latent standardization round-trips and normalizes", "[diffusion]") {
  cpdss::Rng rng(6);
  std::vector<Tensor<double>> latents;
  for (int i = 0; i < 5; ++i) {
    auto h = cpdss::gaussian_tensor<double>(3 + i, 4, rng);
    for (auto& v : h.data()) v = v * 3.0 + 10.0;
    latents.push_back(h);
  }
  const auto stats = cpdss::compute_latent_stats(latents);
  REQUIRE(stats.mean.size() == 4);

  double mean_acc = 0, var_acc = 0;
  std::size_t rows = 0;
  for (const auto& h : latents) {
    const auto z = cpdss::standardize(h, stats);
    const auto back = cpdss::destandardize(z, stats);
    for (std::size_t i = 0; i < h.size(); ++i)
      REQUIRE(back.data()[i] == Catch::Approx(h.data()[i]).margin(1e-9));
    for (std::size_t i = 0; i < z.rows(); ++i) {
      mean_acc += z.at(i, 0);
      var_acc += z.at(i, 0) * z.at(i, 0);
      ++rows;
    }
  }
  REQUIRE(mean_acc / rows == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(var_acc / rows == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("a small denoiser fits one latent", "[diffusion]") {
  const NoiseSchedule s = cpdss::make_schedule(ScheduleKind::Sqrt, 50);
  cpdss::Rng rng(7);
  const auto g = tiny_graph(4, rng);
  Tensor<float> h0 = cpdss::gaussian_tensor<float>(4, 8, rng);
  cpdss::EgnnDenoiser<float> model(8, 24, 24, 2, 8, rng);
  auto params = model.named_params();
  auto values = cpdss::values_of(params);
  cpdss::AdamW<float> opt(values, 2e-3f, 0.0f);
  auto net = [&](const Tensor<float>& ht, std::size_t t, const cpdss::SSGraph& gg) {
    return model.denoise(ht, t, gg);
  };
  double initial = 0, last = 0;
  for (int step = 0; step < 600; ++step) {
    cpdss::Rng step_rng(cpdss::hash_mix(13, static_cast<std::uint64_t>(step)));
    opt.zero_grad();
    auto loss = cpdss::training_loss(net, h0, g, s, step_rng);
    loss.backward();
    cpdss::ensure_grads(values);
    opt.step();
    if (step == 0) initial = loss.item();
    last = loss.item();
  }
  REQUIRE(last < 0.5 * initial);
}
