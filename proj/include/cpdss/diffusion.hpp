#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cpdss/nn.hpp"
#include "cpdss/rng.hpp"
#include "cpdss/ssgraph.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

enum class ScheduleKind { Sqrt, Linear, Cosine };

inline ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "sqrt") return ScheduleKind::Sqrt;
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "cosine") return ScheduleKind::Cosine;
  throw ConfigError("unknown noise schedule '" + name + "'");
}

inline std::string schedule_kind_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Sqrt: return "sqrt";
    case ScheduleKind::Linear: return "linear";
    default: return "cosine";
  }
}

inline constexpr double kAlphaBarFloor = 1e-4;
inline constexpr double kAlphaBarCeil = 1.0 - 1e-4;

// Closed-form alpha-bar before clamping.
inline double alpha_bar_raw(ScheduleKind kind, std::size_t t, std::size_t total) {
  const double ft = static_cast<double>(t) / static_cast<double>(total);
  switch (kind) {
    case ScheduleKind::Sqrt:
      return 1.0 - std::sqrt(ft + 1e-4);
    case ScheduleKind::Linear: {
      double prod = 1.0;
      for (std::size_t u = 1; u <= t; ++u) {
        const double frac =
            total > 1 ? static_cast<double>(u - 1) / static_cast<double>(total - 1) : 0.0;
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * frac);
      }
      return prod;
    }
    default: {
      const double s = 0.008;
      auto f = [s](double u) {
        const double a = std::cos(((u + s) / (1.0 + s)) * M_PI / 2.0);
        return a * a;
      };
      return f(ft) / f(0.0);
    }
  }
}

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::Sqrt;
  std::size_t steps = 0;                // T
  std::vector<double> alpha_bar;        // T+1 values, strictly decreasing
  std::vector<double> beta;             // beta[t], t in [1, T]; beta[0] unused
  std::vector<double> alpha;            // 1 - beta
  std::vector<double> posterior_var;    // beta-tilde, same indexing as beta
};

// alpha-bar from the closed forms, clamped into [1e-4, 1-1e-4]; runs of
// saturated values at either end are re-spaced linearly toward the bound so
// the sequence stays strictly decreasing while honoring the clamp.
inline NoiseSchedule make_schedule(ScheduleKind kind, std::size_t total) {
  if (total < 1) throw ConfigError("make_schedule: T must be >= 1");
  NoiseSchedule s;
  s.kind = kind;
  s.steps = total;
  s.alpha_bar.resize(total + 1);
  for (std::size_t t = 0; t <= total; ++t)
    s.alpha_bar[t] =
        std::min(kAlphaBarCeil, std::max(kAlphaBarFloor, alpha_bar_raw(kind, t, total)));

  std::size_t first_free = 0;
  while (first_free <= total && s.alpha_bar[first_free] >= kAlphaBarCeil) ++first_free;
  if (first_free > 1 && first_free <= total) {
    const double next = s.alpha_bar[first_free];
    for (std::size_t t = 0; t < first_free; ++t)
      s.alpha_bar[t] = next + (kAlphaBarCeil - next) *
                                  static_cast<double>(first_free - t) /
                                  static_cast<double>(first_free);
  }
  std::size_t last_free = total;
  while (last_free > 0 && s.alpha_bar[last_free] <= kAlphaBarFloor) --last_free;
  if (last_free < total) {
    const double prev = s.alpha_bar[last_free];
    for (std::size_t t = last_free + 1; t <= total; ++t)
      s.alpha_bar[t] = kAlphaBarFloor + (prev - kAlphaBarFloor) *
                                            static_cast<double>(total - t) /
                                            static_cast<double>(total - last_free);
  }

  s.beta.resize(total + 1, 0.0);
  s.alpha.resize(total + 1, 1.0);
  s.posterior_var.resize(total + 1, 0.0);
  for (std::size_t t = 1; t <= total; ++t) {
    s.beta[t] = 1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1];
    s.alpha[t] = 1.0 - s.beta[t];
    s.posterior_var[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  return s;
}

inline NoiseSchedule make_schedule(const std::string& kind, std::size_t total) {
  return make_schedule(parse_schedule_kind(kind), total);
}

// ---------------------------------------------------------------------------
// forward process and sampling
// ---------------------------------------------------------------------------

// H_t = sqrt(abar_t) H_0 + sqrt(1 - abar_t) eps
template <class T>
Tensor<T> q_sample(const Tensor<T>& h0, std::size_t t, const Tensor<T>& eps,
                   const NoiseSchedule& schedule) {
  if (t > schedule.steps)
    throw IndexError("q_sample: t=" + std::to_string(t) + " outside [0, " +
                     std::to_string(schedule.steps) + "]");
  detail::check_same_shape("q_sample", h0, eps);
  const T a = static_cast<T>(std::sqrt(schedule.alpha_bar[t]));
  const T b = static_cast<T>(std::sqrt(1.0 - schedule.alpha_bar[t]));
  return add(scale(h0, a), scale(eps, b));
}

// One training term: t ~ U{1..T}, eps ~ N(0,I), predict H0 from H_t, MSE.
// The weighting constants of the variational bound are dropped.
template <class T, class DenoiseFn>
Tensor<T> training_loss(DenoiseFn&& denoise, const Tensor<T>& h0, const SSGraph& graph,
                        const NoiseSchedule& schedule, Rng& rng) {
  const std::size_t t = rng.uniform_int(1, schedule.steps);
  const Tensor<T> eps = gaussian_tensor<T>(h0.rows(), h0.cols(), rng);
  const Tensor<T> ht = q_sample(h0, t, eps, schedule);
  return mse(denoise(ht, t, graph), h0);
}

// Ancestral sampling in the x0 parameterization. The final step adopts the
// DDPM convention alpha_bar_0 = 1, so the t=1 update returns the model's
// clean prediction exactly (and adds no noise).
template <class T, class DenoiseFn>
Tensor<T> p_sample(const SSGraph& graph, const NoiseSchedule& schedule, DenoiseFn&& denoise,
                   Rng& rng, std::size_t latent_dim) {
  if (graph.num_nodes() < 1) throw ContractError("p_sample: empty graph");
  NoGradGuard no_grad;
  const std::size_t m = graph.num_nodes();
  Tensor<T> h = gaussian_tensor<T>(m, latent_dim, rng);
  for (std::size_t t = schedule.steps; t >= 1; --t) {
    const Tensor<T> pred = denoise(h, t, graph);
    if (t == 1) {
      h = pred;
      break;
    }
    const double abar_t = schedule.alpha_bar[t];
    const double abar_prev = schedule.alpha_bar[t - 1];
    const double beta_t = schedule.beta[t];
    const double alpha_t = schedule.alpha[t];
    const T c_pred = static_cast<T>(std::sqrt(abar_prev) * beta_t / (1.0 - abar_t));
    const T c_cur = static_cast<T>(std::sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t));
    Tensor<T> mu = add(scale(pred, c_pred), scale(h, c_cur));
    const T sigma = static_cast<T>(std::sqrt(schedule.posterior_var[t]));
    h = add(mu, scale(gaussian_tensor<T>(m, latent_dim, rng), sigma));
  }
  return h;
}

// ---------------------------------------------------------------------------
// latent standardization (per-channel over the training set)
// ---------------------------------------------------------------------------

struct LatentStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

template <class T>
LatentStats compute_latent_stats(const std::vector<Tensor<T>>& latents) {
  if (latents.empty()) throw ContractError("compute_latent_stats: empty latent set");
  const std::size_t d = latents.front().cols();
  LatentStats st;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  std::size_t rows = 0;
  for (const auto& h : latents) {
    if (h.cols() != d) throw ShapeError("compute_latent_stats: inconsistent latent dims");
    rows += h.rows();
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) st.mean[j] += static_cast<double>(h.at(i, j));
  }
  for (auto& v : st.mean) v /= static_cast<double>(rows);
  for (const auto& h : latents)
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double dlt = static_cast<double>(h.at(i, j)) - st.mean[j];
        st.stddev[j] += dlt * dlt;
      }
  for (auto& v : st.stddev) v = std::max(std::sqrt(v / static_cast<double>(rows)), 1e-6);
  return st;
}

template <class T>
Tensor<T> standardize(const Tensor<T>& h, const LatentStats& st) {
  Tensor<T> out = h.detach();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out.at(i, j) = static_cast<T>((static_cast<double>(h.at(i, j)) - st.mean[j]) / st.stddev[j]);
  return out;
}

template <class T>
Tensor<T> destandardize(const Tensor<T>& h, const LatentStats& st) {
  Tensor<T> out = h.detach();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out.at(i, j) = static_cast<T>(static_cast<double>(h.at(i, j)) * st.stddev[j] + st.mean[j]);
  return out;
}

}  // namespace cpdss
