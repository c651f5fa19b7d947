#pragma once

#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "cpdss/checkpoint.hpp"
#include "cpdss/nn.hpp"
#include "cpdss/rng.hpp"
#include "cpdss/ssgraph.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

inline constexpr const char* kAaAlphabet = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr std::size_t kAaUnknown = 20;     // 'X'
inline constexpr std::size_t kEmbedderVocab = 22;  // 20 AAs + X + pad

inline std::size_t aa_token(char c) {
  const char* p = std::strchr(kAaAlphabet, c);
  return (c != '\0' && p) ? static_cast<std::size_t>(p - kAaAlphabet) : kAaUnknown;
}

// Seam for the per-residue sequence embedder. The pretrained-model path
// enters through import_embeddings; ToyEmbedder is the trainable stand-in.
template <class T>
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  virtual Tensor<T> embed(const std::string& aa_seq) const = 0;
  virtual NamedParams<T> named_params() const { return {}; }
};

// Two pre-norm bidirectional self-attention blocks over a token table.
// Rotary embeddings make the blocks position-aware.
template <class T>
class ToyEmbedder : public Embedder<T> {
 public:
  ToyEmbedder(std::size_t d, std::size_t heads, std::size_t n_blocks, Rng& rng)
      : d_(d), token_table_(embedding_init<T>(kEmbedderVocab, d, rng)) {
    for (std::size_t b = 0; b < n_blocks; ++b) blocks_.emplace_back(d, heads, rng);
  }

  std::size_t dim() const override { return d_; }

  Tensor<T> embed(const std::string& aa_seq) const override {
    std::vector<std::size_t> ids;
    ids.reserve(aa_seq.size());
    for (char c : aa_seq) ids.push_back(aa_token(c));
    Tensor<T> h = index_select_rows(token_table_, ids);
    for (const auto& blk : blocks_) h = blk.forward(h);
    return h;
  }

  NamedParams<T> named_params() const override {
    NamedParams<T> out;
    out.emplace_back("embedder.tokens", token_table_);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      blocks_[b].named_params("embedder.b" + std::to_string(b), out);
    return out;
  }

  // Freezing stops gradient flow into the embedder entirely.
  void set_frozen(bool frozen) {
    for (auto& [name, p] : named_params_mutable()) p.set_requires_grad(!frozen);
  }

 private:
  struct Block {
    LayerNormLayer<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    Linear<T> ffn_in, ffn_out;

    Block(std::size_t d, std::size_t heads, Rng& rng)
        : ln1(d), ln2(d), attn(d, heads, true, rng), ffn_in(d, 4 * d, rng), ffn_out(4 * d, d, rng) {}

    Tensor<T> forward(const Tensor<T>& x) const {
      const Tensor<T> normed = ln1.forward(x);
      Tensor<T> h = add(x, attn.forward(normed, normed, nullptr));
      return add(h, ffn_out.forward(gelu(ffn_in.forward(ln2.forward(h)))));
    }

    void named_params(const std::string& prefix, NamedParams<T>& out) const {
      ln1.named_params(prefix + ".ln1", out);
      ln2.named_params(prefix + ".ln2", out);
      attn.named_params(prefix + ".attn", out);
      ffn_in.named_params(prefix + ".ffn_in", out);
      ffn_out.named_params(prefix + ".ffn_out", out);
    }
  };

  NamedParams<T> named_params_mutable() { return named_params(); }

  std::size_t d_;
  Tensor<T> token_table_;
  std::vector<Block> blocks_;
};

// Attention pooling: per-segment softmax over kernel-size-1 conv scores,
// pooled vector is the score-weighted average of the segment's residues.
template <class T>
struct AttnPool {
  Tensor<T> conv_w;  // d x 1
  Tensor<T> conv_b;  // 1 x 1

  AttnPool() = default;
  AttnPool(std::size_t d, Rng& rng)
      : conv_w(uniform_init<T>(d, 1, d, rng)), conv_b(Tensor<T>::zeros(1, 1)) {
    conv_b.set_requires_grad(true);
  }

  Tensor<T> pool(const Tensor<T>& z, const std::vector<Segment>& segments) const {
    std::vector<Tensor<T>> rows;
    rows.reserve(segments.size());
    for (const auto& s : segments) {
      Tensor<T> zk = slice_rows(z, s.start, s.start + s.length);
      Tensor<T> scores = conv1d_k1(zk, conv_w, conv_b);  // n_k x 1
      Tensor<T> weights = softmax(scores, 0);
      rows.push_back(matmul(transpose(weights), zk));  // 1 x d
    }
    return concat_rows(rows);
  }

  NamedParams<T> named_params() const {
    return {{"attnpool.conv_w", conv_w}, {"attnpool.conv_b", conv_b}};
  }
};

// ---------------------------------------------------------------------------
// externally computed embeddings (one named array per protein id)
// ---------------------------------------------------------------------------

template <class T>
void export_embedding(Checkpoint& ck, const std::string& protein_id, const Tensor<T>& z) {
  ck.add_tensor(protein_id, z);
}

template <class T>
Tensor<T> import_embeddings(const Checkpoint& ck, const std::string& protein_id,
                            std::size_t expected_len) {
  const NamedArray& a = ck.get(protein_id);
  if (a.dims.size() != 2)
    throw CheckpointError("embedding '" + protein_id + "' must be 2-D");
  if (a.dims[0] != expected_len)
    throw CheckpointError("embedding '" + protein_id + "' has " + std::to_string(a.dims[0]) +
                          " rows for a protein of length " + std::to_string(expected_len));
  Tensor<T> z = Tensor<T>::zeros(a.dims[0], a.dims[1]);
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = static_cast<T>(a.data[i]);
  return z;
}

// Fixed per-residue embeddings loaded from a container; not trainable.
template <class T>
class ImportedEmbedder : public Embedder<T> {
 public:
  ImportedEmbedder(Checkpoint container, std::size_t d)
      : container_(std::move(container)), d_(d) {}

  std::size_t dim() const override { return d_; }

  Tensor<T> embed(const std::string&) const override {
    throw ContractError("imported embeddings are keyed by protein id; use embed_id()");
  }

  Tensor<T> embed_id(const std::string& protein_id, std::size_t expected_len) const {
    Tensor<T> z = import_embeddings<T>(container_, protein_id, expected_len);
    if (z.cols() != d_)
      throw CheckpointError("embedding '" + protein_id + "' has dim " + std::to_string(z.cols()) +
                            ", config expects " + std::to_string(d_));
    return z;
  }

 private:
  Checkpoint container_;
  std::size_t d_;
};

}  // namespace cpdss
