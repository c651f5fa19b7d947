#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "cpdss/encoder.hpp"
#include "cpdss/nn.hpp"
#include "cpdss/rng.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

// Decoder vocabulary: the 20 amino acids, X, and control tokens.
inline constexpr std::size_t kVocabSize = 24;
inline constexpr int kTokX = 20;
inline constexpr int kTokBos = 21;
inline constexpr int kTokEos = 22;
inline constexpr int kTokPad = 23;

inline char token_to_aa(int tok) {
  if (tok >= 0 && tok < 20) return kAaAlphabet[tok];
  if (tok == kTokX) return 'X';
  throw IndexError("token " + std::to_string(tok) + " is not an amino acid");
}

inline std::vector<int> encode_tokens(const std::string& aa_seq) {
  std::vector<int> out;
  out.reserve(aa_seq.size());
  for (char c : aa_seq) out.push_back(static_cast<int>(aa_token(c)));
  return out;
}

// Pre-norm transformer block: causal rotary self-attention, cross-attention
// over the SS latents, feed-forward.
template <class T>
struct DecoderBlock {
  LayerNormLayer<T> ln_self, ln_cross, ln_ffn;
  MultiHeadAttention<T> self_attn;
  MultiHeadAttention<T> cross_attn;
  Linear<T> ffn_in, ffn_out;

  DecoderBlock() = default;
  DecoderBlock(std::size_t d, std::size_t heads, std::size_t ffn_dim, Rng& rng)
      : ln_self(d),
        ln_cross(d),
        ln_ffn(d),
        self_attn(d, heads, true, rng),
        cross_attn(d, heads, false, rng),
        ffn_in(d, ffn_dim, rng),
        ffn_out(ffn_dim, d, rng) {}

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& latents,
                    const Tensor<T>& mask) const {
    Tensor<T> h = x;
    const Tensor<T> a = ln_self.forward(h);
    h = add(h, self_attn.forward(a, a, &mask));
    h = add(h, cross_attn.forward(ln_cross.forward(h), latents, nullptr));
    return add(h, ffn_out.forward(gelu(ffn_in.forward(ln_ffn.forward(h)))));
  }

  void named_params(const std::string& prefix, NamedParams<T>& out) const {
    ln_self.named_params(prefix + ".ln_self", out);
    ln_cross.named_params(prefix + ".ln_cross", out);
    ln_ffn.named_params(prefix + ".ln_ffn", out);
    self_attn.named_params(prefix + ".self", out);
    cross_attn.named_params(prefix + ".cross", out);
    ffn_in.named_params(prefix + ".ffn_in", out);
    ffn_out.named_params(prefix + ".ffn_out", out);
  }
};

struct GenerationConfig {
  std::size_t max_len = 160;
  double temperature = 1.0;  // 0 = greedy argmax
  std::size_t top_k = 0;     // 0 = off
  std::uint64_t seed = 0;
};

struct GeneratedSequence {
  std::string sequence;
  bool truncated = false;
};

// Autoregressive translator from m SS-level latent vectors to an AA sequence
// of unconstrained length.
template <class T>
struct DecoderModel {
  Tensor<T> token_table;  // kVocabSize x d
  std::vector<DecoderBlock<T>> blocks;
  LayerNormLayer<T> ln_final;
  Linear<T> out_proj;

  DecoderModel() = default;
  DecoderModel(std::size_t d, std::size_t heads, std::size_t n_blocks, std::size_t ffn_dim,
               Rng& rng)
      : token_table(embedding_init<T>(kVocabSize, d, rng)),
        ln_final(d),
        out_proj(d, kVocabSize, rng) {
    for (std::size_t b = 0; b < n_blocks; ++b) blocks.emplace_back(d, heads, ffn_dim, rng);
  }

  // tokens: BOS-prefixed ids. Returns len x vocab logits; row i sees tokens
  // <= i and every latent row.
  Tensor<T> forward(const std::vector<int>& tokens, const Tensor<T>& latents) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (int t : tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= kVocabSize)
        throw IndexError("decoder token id " + std::to_string(t) + " out of range");
      ids.push_back(static_cast<std::size_t>(t));
    }
    Tensor<T> h = index_select_rows(token_table, ids);
    const Tensor<T> mask = causal_mask<T>(ids.size());
    for (const auto& blk : blocks) h = blk.forward(h, latents, mask);
    return out_proj.forward(ln_final.forward(h));
  }

  GeneratedSequence generate(const Tensor<T>& latents, const GenerationConfig& cfg) const {
    NoGradGuard no_grad;
    Rng rng(cfg.seed);
    std::vector<int> tokens = {kTokBos};
    GeneratedSequence out;
    while (out.sequence.size() < cfg.max_len) {
      const Tensor<T> logits = forward(tokens, latents);
      const std::size_t last = logits.rows() - 1;
      std::vector<double> row(kVocabSize);
      for (std::size_t v = 0; v < kVocabSize; ++v)
        row[v] = static_cast<double>(logits.at(last, v));
      // control tokens other than EOS are never emitted
      row[kTokBos] = -std::numeric_limits<double>::infinity();
      row[kTokPad] = -std::numeric_limits<double>::infinity();
      const int next = sample_token(row, cfg, rng);
      if (next == kTokEos) return out;
      tokens.push_back(next);
      out.sequence.push_back(token_to_aa(next));
    }
    out.truncated = true;
    return out;
  }

  NamedParams<T> named_params() const {
    NamedParams<T> out;
    out.emplace_back("decoder.tokens", token_table);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      blocks[b].named_params("decoder.b" + std::to_string(b), out);
    ln_final.named_params("decoder.ln_final", out);
    out_proj.named_params("decoder.out_proj", out);
    return out;
  }

 private:
  static int sample_token(std::vector<double> logits, const GenerationConfig& cfg, Rng& rng) {
    if (cfg.temperature <= 0.0) {
      std::size_t best = 0;
      for (std::size_t v = 1; v < logits.size(); ++v)
        if (logits[v] > logits[best]) best = v;  // ties keep the lowest id
      return static_cast<int>(best);
    }
    if (cfg.top_k > 0 && cfg.top_k < logits.size()) {
      std::vector<std::size_t> order(logits.size());
      for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
      for (std::size_t r = cfg.top_k; r < order.size(); ++r)
        logits[order[r]] = -std::numeric_limits<double>::infinity();
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> probs(logits.size());
    double total = 0;
    for (std::size_t v = 0; v < logits.size(); ++v) {
      probs[v] = std::isinf(logits[v]) ? 0.0 : std::exp((logits[v] - mx) / cfg.temperature);
      total += probs[v];
    }
    const double u = rng.uniform() * total;
    double acc = 0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      acc += probs[v];
      if (u < acc) return static_cast<int>(v);
    }
    return static_cast<int>(probs.size() - 1);
  }
};

// Teacher-forcing loss for one sequence: inputs BOS + tokens, targets
// tokens + EOS, mean cross-entropy. Sequences beyond max_len are truncated.
template <class T>
struct SequenceLoss {
  Tensor<T> loss;
  std::size_t n_tokens = 0;
  bool truncated = false;
};

template <class T>
SequenceLoss<T> decoder_sequence_loss(const DecoderModel<T>& model, const std::string& aa_seq,
                                      const Tensor<T>& latents, std::size_t max_len) {
  std::vector<int> body = encode_tokens(aa_seq);
  SequenceLoss<T> out;
  if (body.size() > max_len) {
    body.resize(max_len);
    out.truncated = true;
  }
  std::vector<int> inputs = {kTokBos};
  inputs.insert(inputs.end(), body.begin(), body.end());
  std::vector<int> targets = body;
  targets.push_back(kTokEos);
  out.loss = cross_entropy(model.forward(inputs, latents), targets, kTokPad);
  out.n_tokens = targets.size();
  return out;
}

// Teacher-forced next-token accuracy (greedy argmax against the targets).
template <class T>
double teacher_forced_accuracy(const DecoderModel<T>& model, const std::string& aa_seq,
                               const Tensor<T>& latents) {
  NoGradGuard no_grad;
  std::vector<int> body = encode_tokens(aa_seq);
  std::vector<int> inputs = {kTokBos};
  inputs.insert(inputs.end(), body.begin(), body.end());
  std::vector<int> targets = body;
  targets.push_back(kTokEos);
  const Tensor<T> logits = model.forward(inputs, latents);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < kVocabSize; ++v)
      if (logits.at(i, v) > logits.at(i, best)) best = v;
    hits += static_cast<int>(best) == targets[i];
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

}  // namespace cpdss
