#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cpdss/nn.hpp"
#include "cpdss/rng.hpp"
#include "cpdss/ssgraph.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

// E(3)-equivariant message-passing layer. phi_x acts on the edge message
// m_ij (not on the coordinates), which is what keeps latent outputs invariant
// and coordinate updates equivariant under rigid motions.
template <class T>
struct EgnnLayer {
  Mlp<T> phi_e;  // 2*d_h + 2 -> d_m, SiLU after each layer
  Mlp<T> phi_x;  // d_m -> 1
  Mlp<T> phi_h;  // d_h + d_m -> d_h

  EgnnLayer() = default;
  EgnnLayer(std::size_t d_h, std::size_t d_m, Rng& rng)
      : phi_e({2 * d_h + 2, d_m, d_m}, rng, Activation::Silu, true),
        phi_x({d_m, d_m, 1}, rng, Activation::Silu, false),
        phi_h({d_h + d_m, d_h, d_h}, rng, Activation::Silu, false) {}

  // h: m x d_h node states, x: m x 3 coordinates. Edge (src, dst) carries a
  // message into src; position updates are mean-normalized over each node's
  // out-degree.
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& h, const Tensor<T>& x,
                                          const std::vector<GraphEdge>& edges) const {
    const std::size_t m = h.rows();
    const std::size_t d_m = phi_x.layers.front().w.rows();
    if (edges.empty()) {
      Tensor<T> zero_msg = Tensor<T>::zeros(m, d_m);
      return {phi_h.forward(concat_cols<T>({h, zero_msg})), x};
    }
    std::vector<std::size_t> src, dst;
    src.reserve(edges.size());
    dst.reserve(edges.size());
    Tensor<T> ew = Tensor<T>::zeros(edges.size(), 1);
    std::vector<T> inv_deg_data(m, T(0));
    for (std::size_t e = 0; e < edges.size(); ++e) {
      src.push_back(edges[e].src);
      dst.push_back(edges[e].dst);
      ew.data()[e] = static_cast<T>(edges[e].weight);
      inv_deg_data[edges[e].src] += T(1);
    }
    for (auto& v : inv_deg_data) v = v > T(0) ? T(1) / v : T(0);
    Tensor<T> inv_deg = Tensor<T>::from_data(m, 1, std::move(inv_deg_data));

    Tensor<T> h_src = index_select_rows(h, src);
    Tensor<T> h_dst = index_select_rows(h, dst);
    Tensor<T> dx = sub(index_select_rows(x, src), index_select_rows(x, dst));
    Tensor<T> sq_dist = row_sum(mul(dx, dx));
    Tensor<T> msg = phi_e.forward(concat_cols<T>({h_src, h_dst, sq_dist, ew}));

    Tensor<T> coef = phi_x.forward(msg);  // one scalar per edge
    Tensor<T> moved = scatter_sum_rows(mul_colvec(dx, coef), src, m);
    Tensor<T> x_out = add(x, mul_colvec(moved, inv_deg));

    Tensor<T> msg_sum = scatter_sum_rows(msg, src, m);
    Tensor<T> h_out = phi_h.forward(concat_cols<T>({h, msg_sum}));
    return {h_out, x_out};
  }

  void named_params(const std::string& prefix, NamedParams<T>& out) const {
    phi_e.named_params(prefix + ".phi_e", out);
    phi_x.named_params(prefix + ".phi_x", out);
    phi_h.named_params(prefix + ".phi_h", out);
  }
};

// Denoising backbone over the SS graph: latent + one-hot class + sinusoidal
// time embedding in, L equivariant layers, latent out. Coordinates move
// through the stack but only the latents are returned; denoise_with_coords
// exposes the final coordinates for the equivariance tests.
template <class T>
struct EgnnDenoiser {
  std::size_t latent_dim = 0;
  std::size_t time_dim = 0;
  T coord_scale = T(0.1);  // angstrom -> nm-ish; keeps squared distances tame
  Linear<T> in_proj;
  std::vector<EgnnLayer<T>> layers;
  Linear<T> out_proj;

  EgnnDenoiser() = default;
  EgnnDenoiser(std::size_t d, std::size_t d_h, std::size_t d_m, std::size_t n_layers,
               std::size_t t_dim, Rng& rng, T scale = T(0.1))
      : latent_dim(d),
        time_dim(t_dim),
        coord_scale(scale),
        in_proj(d + 3 + t_dim, d_h, rng),
        out_proj(d_h, d, rng) {
    for (std::size_t l = 0; l < n_layers; ++l) layers.emplace_back(d_h, d_m, rng);
  }

  Tensor<T> time_embedding(std::size_t t, std::size_t rows) const {
    const std::size_t half = time_dim / 2;
    Tensor<T> emb = Tensor<T>::zeros(rows, time_dim);
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      const T s = static_cast<T>(std::sin(static_cast<double>(t) * freq));
      const T c = static_cast<T>(std::cos(static_cast<double>(t) * freq));
      for (std::size_t r = 0; r < rows; ++r) {
        emb.at(r, 2 * i) = s;
        emb.at(r, 2 * i + 1) = c;
      }
    }
    return emb;
  }

  std::pair<Tensor<T>, Tensor<T>> denoise_with_coords(const Tensor<T>& noisy_latent,
                                                      std::size_t t,
                                                      const SSGraph& graph) const {
    if (noisy_latent.cols() != latent_dim)
      throw ShapeError("denoise: latent dim " + std::to_string(noisy_latent.cols()) +
                       " does not match config dim " + std::to_string(latent_dim));
    if (noisy_latent.rows() != graph.num_nodes())
      throw ShapeError("denoise: latent rows do not match graph nodes");
    const std::size_t m = graph.num_nodes();
    Tensor<T> onehot = Tensor<T>::zeros(m, 3);
    for (std::size_t i = 0; i < m; ++i)
      onehot.at(i, static_cast<std::size_t>(ss_class_index(graph.types[i]))) = T(1);
    Tensor<T> x = Tensor<T>::zeros(m, 3);
    for (std::size_t i = 0; i < m; ++i) {
      x.at(i, 0) = static_cast<T>(graph.coords[i].x) * coord_scale;
      x.at(i, 1) = static_cast<T>(graph.coords[i].y) * coord_scale;
      x.at(i, 2) = static_cast<T>(graph.coords[i].z) * coord_scale;
    }
    Tensor<T> h =
        in_proj.forward(concat_cols<T>({noisy_latent, onehot, time_embedding(t, m)}));
    for (const auto& layer : layers) {
      auto [h_next, x_next] = layer.forward(h, x, graph.edges);
      h = h_next;
      x = x_next;
    }
    return {out_proj.forward(h), x};
  }

  Tensor<T> denoise(const Tensor<T>& noisy_latent, std::size_t t, const SSGraph& graph) const {
    return denoise_with_coords(noisy_latent, t, graph).first;
  }

  NamedParams<T> named_params() const {
    NamedParams<T> out;
    in_proj.named_params("egnn.in_proj", out);
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].named_params("egnn.l" + std::to_string(l), out);
    out_proj.named_params("egnn.out_proj", out);
    return out;
  }
};

}  // namespace cpdss
