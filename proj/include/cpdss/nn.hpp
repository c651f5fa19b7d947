#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cpdss/rng.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
std::vector<Tensor<T>> values_of(const NamedParams<T>& named) {
  std::vector<Tensor<T>> out;
  out.reserve(named.size());
  for (const auto& [name, p] : named) out.push_back(p);
  return out;
}

template <class T>
std::size_t param_count(const NamedParams<T>& named) {
  std::size_t n = 0;
  for (const auto& [name, p] : named) n += p.size();
  return n;
}

// ---------------------------------------------------------------------------
// initial: linear weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero,
// embeddings N(0, 0.02^2)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<T> t = Tensor<T>::zeros(rows, cols);
  for (auto& v : t.data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> embedding_init(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(rows, cols);
  for (auto& v : t.data()) v = static_cast<T>(0.02 * rng.normal());
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> gaussian_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(rows, cols);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal());
  return t;
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <class T>
struct Linear {
  Tensor<T> w;  // in x out
  Tensor<T> b;  // 1 x out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : w(uniform_init<T>(in, out, in, rng)),
        b(Tensor<T>::zeros(1, out)) {
    b.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return add_rowvec(matmul(x, w), b); }

  void named_params(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

// Kernel-size-1 convolution over positions == per-position affine map.
template <class T>
Tensor<T> conv1d_k1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_rowvec(matmul(x, w), b);
}

template <class T>
struct LayerNormLayer {
  Tensor<T> gain;  // 1 x d
  Tensor<T> bias;  // 1 x d
  T eps = T(1e-5);

  LayerNormLayer() = default;
  explicit LayerNormLayer(std::size_t d)
      : gain(Tensor<T>::filled(1, d, T(1))), bias(Tensor<T>::zeros(1, d)) {
    gain.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gain, bias, eps); }

  void named_params(const std::string& prefix, NamedParams<T>& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
  }
};

enum class Activation { Silu, Gelu };

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  return a == Activation::Silu ? silu(x) : gelu(x);
}

// Dense stack; activation after every layer except optionally the last.
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;
  Activation act = Activation::Silu;
  bool activate_last = false;

  Mlp() = default;
  Mlp(const std::vector<std::size_t>& dims, Rng& rng, Activation a = Activation::Silu,
      bool act_last = false)
      : act(a), activate_last(act_last) {
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.emplace_back(dims[i], dims[i + 1], rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(h);
      if (i + 1 < layers.size() || activate_last) h = activate(h, act);
    }
    return h;
  }

  void named_params(const std::string& prefix, NamedParams<T>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].named_params(prefix + ".l" + std::to_string(i), out);
  }
};

// Additive causal mask: 0 on/below the diagonal, -inf above.
template <class T>
Tensor<T> causal_mask(std::size_t len) {
  Tensor<T> m = Tensor<T>::zeros(len, len);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = i + 1; j < len; ++j)
      m.at(i, j) = -std::numeric_limits<T>::infinity();
  return m;
}

template <class T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  std::size_t n_heads = 1;
  bool use_rope = false;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t heads, bool rope, Rng& rng)
      : wq(d_model, d_model, rng),
        wk(d_model, d_model, rng),
        wv(d_model, d_model, rng),
        wo(d_model, d_model, rng),
        n_heads(heads),
        use_rope(rope) {
    if (d_model % heads != 0)
      throw ConfigError("attention: model dim " + std::to_string(d_model) +
                        " not divisible by " + std::to_string(heads) + " heads");
    if (rope && (d_model / heads) % 2 != 0)
      throw ConfigError("attention: rope requires an even head dim");
  }

  // Scaled dot-product over already-projected q/k/v, heads concatenated then
  // projected through wo. mask, when given, is additive (len_q x len_k).
  Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                   const Tensor<T>* mask) const {
    const std::size_t d_model = q.cols();
    if (d_model % n_heads != 0)
      throw ConfigError("attention: model dim not divisible by head count");
    const std::size_t d_head = d_model / n_heads;
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(d_head));
    std::vector<std::size_t> q_pos(q.rows()), k_pos(k.rows());
    for (std::size_t i = 0; i < q_pos.size(); ++i) q_pos[i] = i;
    for (std::size_t i = 0; i < k_pos.size(); ++i) k_pos[i] = i;
    std::vector<Tensor<T>> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
      Tensor<T> qh = slice_cols(q, h * d_head, (h + 1) * d_head);
      Tensor<T> kh = slice_cols(k, h * d_head, (h + 1) * d_head);
      Tensor<T> vh = slice_cols(v, h * d_head, (h + 1) * d_head);
      if (use_rope) {
        qh = rope_rows(qh, q_pos);
        kh = rope_rows(kh, k_pos);
      }
      Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_scale);
      if (mask) scores = add(scores, *mask);
      heads.push_back(matmul(softmax(scores, 1), vh));
    }
    return wo.forward(concat_cols(heads));
  }

  Tensor<T> forward(const Tensor<T>& x_q, const Tensor<T>& x_kv, const Tensor<T>* mask) const {
    return attend(wq.forward(x_q), wk.forward(x_kv), wv.forward(x_kv), mask);
  }

  void named_params(const std::string& prefix, NamedParams<T>& out) const {
    wq.named_params(prefix + ".wq", out);
    wk.named_params(prefix + ".wk", out);
    wv.named_params(prefix + ".wv", out);
    wo.named_params(prefix + ".wo", out);
  }
};

// ---------------------------------------------------------------------------
// optimizer: Adam with decoupled weight decay
// ---------------------------------------------------------------------------

template <class T>
struct AdamW {
  T lr = T(5e-4);
  T weight_decay = T(1e-5);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::int64_t step_count = 0;

  explicit AdamW(std::vector<Tensor<T>> params, T learning_rate = T(5e-4), T wd = T(1e-5))
      : lr(learning_rate), weight_decay(wd), params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  void step() {
    ++step_count;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi];
      if (!p.has_grad())
        throw ContractError("adamw: parameter " + std::to_string(pi) + " has no gradient");
      const auto& g = p.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      auto& w = p.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        w[i] -= lr * weight_decay * w[i];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t n_params() const { return params_.size(); }
  std::vector<T>& moment1(std::size_t i) { return m_[i]; }
  std::vector<T>& moment2(std::size_t i) { return v_[i]; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

// Backfills zero grads for parameters the loss did not touch (e.g. the last
// EGNN layer's position head, whose moved coordinates are discarded). Call
// between backward() and step().
template <class T>
void ensure_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params)
    if (!p.has_grad()) p.ensure_zero_grad();
}

// ---------------------------------------------------------------------------
// gradient oracle
// ---------------------------------------------------------------------------

// Central-difference check of d f / d x against the tape. f must be a pure
// function of x's current values (reseed any internal randomness per call).
// Relative error uses a unit floor so near-zero components are compared
// absolutely. Run with T = double; f32 central differences are too noisy.
template <class T, class F>
T finite_difference_check(F f, Tensor<T>& x, T eps = T(1e-5)) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<T> loss = f();
  if (!loss.is_scalar()) throw ContractError("finite_difference_check: f must return a scalar");
  loss.backward();
  // a parameter the loss never touches has no grad buffer; that is a zero
  const std::vector<T> analytic =
      x.has_grad() ? x.grad() : std::vector<T>(x.size(), T(0));
  T max_rel = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = x.data()[i];
    x.data()[i] = orig + eps;
    const T fp = f().item();
    x.data()[i] = orig - eps;
    const T fm = f().item();
    x.data()[i] = orig;
    const T numeric = (fp - fm) / (T(2) * eps);
    const T denom = std::max({std::abs(analytic[i]), std::abs(numeric), T(1)});
    max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace cpdss
