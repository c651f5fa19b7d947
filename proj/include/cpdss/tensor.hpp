#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace cpdss {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IndexError : std::runtime_error {
  explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables tape recording in the current thread (sampling / generation paths).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <class T>
class Tensor;

// One tape record: the op's output value plus everything backward needs.
// Children hold shared_ptrs to parents, so the reachable tape is a DAG kept
// alive by the loss tensor.
template <class T>
struct TapeNode {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;  // sized lazily during backward
  bool requires_grad = false;
  bool tracked = false;  // participates in some backward pass
  std::vector<std::shared_ptr<TapeNode<T>>> parents;
  std::function<void(TapeNode<T>&)> backward_fn;  // scatters grad into parents

  std::size_t size() const { return rows * cols; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// 2-D dense tensor handle (rows x cols, row-major). Scalars are 1x1.
// Copying a Tensor copies the handle; the tape record is shared.
template <class T>
class Tensor {
 public:
  using Node = TapeNode<T>;

  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return filled(rows, cols, T(0));
  }
  static Tensor filled(std::size_t rows, std::size_t cols, T v) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->rows = rows;
    t.node_->cols = cols;
    t.node_->value.assign(rows * cols, v);
    return t;
  }
  static Tensor scalar(T v) { return filled(1, 1, v); }
  static Tensor from_data(std::size_t rows, std::size_t cols, std::vector<T> data) {
    if (data.size() != rows * cols)
      throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->rows = rows;
    t.node_->cols = cols;
    t.node_->value = std::move(data);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  T& at(std::size_t i, std::size_t j) { return node_->value[i * cols() + j]; }
  T at(std::size_t i, std::size_t j) const { return node_->value[i * cols() + j]; }
  T item() const {
    if (!is_scalar()) throw ContractError("item() requires a 1x1 tensor");
    return node_->value[0];
  }

  Tensor& set_requires_grad(bool v = true) {
    node_->requires_grad = v;
    node_->tracked = v;
    return *this;
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool tracked() const { return node_->tracked; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (node_->grad.empty()) throw ContractError("grad() called before backward populated it");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  void ensure_zero_grad() { node_->ensure_grad(); }

  // New leaf with a copy of the values and no tape history.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->rows = rows();
    t.node_->cols = cols();
    t.node_->value = node_->value;
    return t;
  }

  std::shared_ptr<Node> node() const { return node_; }

  // Reverse-topological sweep from this scalar; accumulates parent grads.
  void backward() const {
    if (!is_scalar()) throw ContractError("backward() requires a scalar loss");
    if (!node_->tracked)
      throw ContractError("backward() on a tensor with no differentiable inputs");
    std::vector<Node*> order;
    topo_sort(node_.get(), order);
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

 private:
  static void topo_sort(Node* root, std::vector<Node*>& order) {
    // Iterative post-order DFS; parent lists have fixed order, so the
    // traversal (and therefore accumulation order) is deterministic.
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->tracked && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <class T>
Tensor<T> make_result(std::size_t rows, std::size_t cols,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(TapeNode<T>&)> backward_fn) {
  Tensor<T> out = Tensor<T>::zeros(rows, cols);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.tracked();
  if (!any) return out;
  auto node = out.node();
  node->tracked = true;
  for (const auto& in : inputs)
    if (in.tracked()) node->parents.push_back(in.node());
  node->backward_fn = std::move(backward_fn);
  return out;
}

template <class T>
void accumulate(const std::shared_ptr<TapeNode<T>>& node, std::size_t idx, T g) {
  if (node->tracked) node->ensure_grad()[idx] += g;
}

template <class T>
std::string shape_str(const Tensor<T>& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

template <class T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  auto an = a.node(), bn = b.node();
  auto out = detail::make_result<T>(a.rows(), a.cols(), {a, b}, [an, bn](TapeNode<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      detail::accumulate(an, i, o.grad[i]);
      detail::accumulate(bn, i, o.grad[i]);
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  auto an = a.node(), bn = b.node();
  auto out = detail::make_result<T>(a.rows(), a.cols(), {a, b}, [an, bn](TapeNode<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      detail::accumulate(an, i, o.grad[i]);
      detail::accumulate(bn, i, -o.grad[i]);
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  auto an = a.node(), bn = b.node();
  auto out = detail::make_result<T>(a.rows(), a.cols(), {a, b}, [an, bn](TapeNode<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      detail::accumulate(an, i, o.grad[i] * bn->value[i]);
      detail::accumulate(bn, i, o.grad[i] * an->value[i]);
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto an = a.node();
  auto out = detail::make_result<T>(a.rows(), a.cols(), {a}, [an, c](TapeNode<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) detail::accumulate(an, i, o.grad[i] * c);
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
  return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  auto an = a.node();
  auto out = detail::make_result<T>(a.rows(), a.cols(), {a}, [an](TapeNode<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) detail::accumulate(an, i, o.grad[i]);
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + c;
  return out;
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree, " + detail::shape_str(a) + " x " +
                     detail::shape_str(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto an = a.node(), bn = b.node();
  auto out = detail::make_result<T>(m, n, {a, b}, [an, bn, m, k, n](TapeNode<T>& o) {
    if (an->tracked) {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = o.grad[i * n + j];
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += g * bn->value[p * n + j];
        }
    }
    if (bn->tracked) {
      auto& gb = bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = an->value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * o.grad[i * n + j];
        }
    }
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a.data()[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] += av * b.data()[p * n + j];
    }
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto an = a.node();
  auto out = detail::make_result<T>(n, m, {a}, [an, m, n](TapeNode<T>& o) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) detail::accumulate(an, i * n + j, o.grad[j * m + i]);
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  return out;
}

// ---------------------------------------------------------------------------
// structure: slicing, concatenation, gather/scatter
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
  if (r0 > r1 || r1 > a.rows()) throw ShapeError("slice_rows: bad range");
  const std::size_t n = a.cols();
  auto an = a.node();
  auto out = detail::make_result<T>(r1 - r0, n, {a}, [an, r0, n](TapeNode<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i)
      detail::accumulate(an, r0 * n + i, o.grad[i]);
  });
  std::copy(a.data().begin() + r0 * n, a.data().begin() + r1 * n, out.data().begin());
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > a.cols()) throw ShapeError("slice_cols: bad range");
  const std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
  auto an = a.node();
  auto out = detail::make_result<T>(m, w, {a}, [an, c0, n, w, m](TapeNode<T>& o) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        detail::accumulate(an, i * n + c0 + j, o.grad[i * w + j]);
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out.data()[i * w + j] = a.data()[i * n + c0 + j];
  return out;
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: column mismatch");
    m += p.rows();
  }
  Tensor<T> out = Tensor<T>::zeros(m, n);
  bool any = false;
  for (const auto& p : parts) any = any || p.tracked();
  if (grad_enabled() && any) {
    auto node = out.node();
    node->tracked = true;
    std::vector<std::pair<std::shared_ptr<TapeNode<T>>, std::size_t>> spans;
    std::size_t row = 0;
    for (const auto& p : parts) {
      if (p.tracked()) node->parents.push_back(p.node());
      spans.emplace_back(p.node(), row);
      row += p.rows();
    }
    node->backward_fn = [spans, n](TapeNode<T>& o) {
      for (const auto& [pn, row0] : spans) {
        if (!pn->tracked) continue;
        auto& g = pn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[row0 * n + i];
      }
    };
  }
  std::size_t row = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + row * n);
    row += p.rows();
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row mismatch");
    n += p.cols();
  }
  Tensor<T> out = Tensor<T>::zeros(m, n);
  bool any = false;
  for (const auto& p : parts) any = any || p.tracked();
  if (grad_enabled() && any) {
    auto node = out.node();
    node->tracked = true;
    std::vector<std::pair<std::shared_ptr<TapeNode<T>>, std::size_t>> spans;
    std::size_t col = 0;
    for (const auto& p : parts) {
      if (p.tracked()) node->parents.push_back(p.node());
      spans.emplace_back(p.node(), col);
      col += p.cols();
    }
    node->backward_fn = [spans, m, n](TapeNode<T>& o) {
      for (const auto& [pn, col0] : spans) {
        if (!pn->tracked) continue;
        auto& g = pn->ensure_grad();
        const std::size_t w = pn->cols;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += o.grad[i * n + col0 + j];
      }
    };
  }
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out.data()[i * n + col + j] = p.data()[i * w + j];
    col += w;
  }
  return out;
}

template <class T>
Tensor<T> index_select_rows(const Tensor<T>& a, const std::vector<std::size_t>& idx) {
  const std::size_t n = a.cols();
  for (std::size_t r : idx)
    if (r >= a.rows()) throw IndexError("index_select_rows: row " + std::to_string(r) +
                                        " out of range [0, " + std::to_string(a.rows()) + ")");
  auto an = a.node();
  auto out = detail::make_result<T>(idx.size(), n, {a}, [an, idx, n](TapeNode<T>& o) {
    auto& g = an->ensure_grad();
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (std::size_t j = 0; j < n; ++j) g[idx[e] * n + j] += o.grad[e * n + j];
  });
  for (std::size_t e = 0; e < idx.size(); ++e)
    for (std::size_t j = 0; j < n; ++j) out.data()[e * n + j] = a.data()[idx[e] * n + j];
  return out;
}

// out[idx[e], :] += src[e, :]; fixed e-order keeps reductions deterministic.
template <class T>
Tensor<T> scatter_sum_rows(const Tensor<T>& src, const std::vector<std::size_t>& idx,
                           std::size_t out_rows) {
  if (idx.size() != src.rows()) throw ShapeError("scatter_sum_rows: one index per source row");
  const std::size_t n = src.cols();
  for (std::size_t r : idx)
    if (r >= out_rows) throw IndexError("scatter_sum_rows: target row out of range");
  auto sn = src.node();
  auto out = detail::make_result<T>(out_rows, n, {src}, [sn, idx, n](TapeNode<T>& o) {
    auto& g = sn->ensure_grad();
    for (std::size_t e = 0; e < idx.size(); ++e)
      for (std::size_t j = 0; j < n; ++j) g[e * n + j] += o.grad[idx[e] * n + j];
  });
  for (std::size_t e = 0; e < idx.size(); ++e)
    for (std::size_t j = 0; j < n; ++j) out.data()[idx[e] * n + j] += src.data()[e * n + j];
  return out;
}

// ---------------------------------------------------------------------------
// broadcast helpers (row vector across rows, column vector across columns)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw ShapeError("add_rowvec: expected 1x" + std::to_string(a.cols()) + " bias, got " +
                     detail::shape_str(b));
  const std::size_t m = a.rows(), n = a.cols();
  auto an = a.node(), bn = b.node();
  auto out = detail::make_result<T>(m, n, {a, b}, [an, bn, m, n](TapeNode<T>& o) {
    if (an->tracked) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bn->tracked) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
    }
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = a.data()[i * n + j] + b.data()[j];
  return out;
}

template <class T>
Tensor<T> mul_colvec(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.cols() != 1 || s.rows() != a.rows())
    throw ShapeError("mul_colvec: expected " + std::to_string(a.rows()) + "x1 scale, got " +
                     detail::shape_str(s));
  const std::size_t m = a.rows(), n = a.cols();
  auto an = a.node(), sn = s.node();
  auto out = detail::make_result<T>(m, n, {a, s}, [an, sn, m, n](TapeNode<T>& o) {
    for (std::size_t i = 0; i < m; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        const T g = o.grad[i * n + j];
        detail::accumulate(an, i * n + j, g * sn->value[i]);
        dot += g * an->value[i * n + j];
      }
      detail::accumulate(sn, i, dot);
    }
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = a.data()[i * n + j] * s.data()[i];
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  auto an = a.node();
  auto out = detail::make_result<T>(1, 1, {a}, [an](TapeNode<T>& o) {
    const T g = o.grad[0];
    auto& ga = an->ensure_grad();
    for (auto& v : ga) v += g;
  });
  T s = T(0);
  for (T v : a.data()) s += v;
  out.data()[0] = s;
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <class T>
Tensor<T> row_sum(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto an = a.node();
  auto out = detail::make_result<T>(m, 1, {a}, [an, m, n](TapeNode<T>& o) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) detail::accumulate(an, i * n + j, o.grad[i]);
  });
  for (std::size_t i = 0; i < m; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += a.data()[i * n + j];
    out.data()[i] = s;
  }
  return out;
}

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mse", a, b);
  const std::size_t n = a.size();
  auto an = a.node(), bn = b.node();
  auto out = detail::make_result<T>(1, 1, {a, b}, [an, bn, n](TapeNode<T>& o) {
    const T g = o.grad[0] * T(2) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = an->value[i] - bn->value[i];
      detail::accumulate(an, i, g * d);
      detail::accumulate(bn, i, -g * d);
    }
  });
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  out.data()[0] = s / static_cast<T>(n);
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities and normalization
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  auto an = a.node();
  auto out = detail::make_result<T>(a.rows(), a.cols(), {a}, [an](TapeNode<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T x = an->value[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      detail::accumulate(an, i, o.grad[i] * s * (T(1) + x * (T(1) - s)));
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.data()[i];
    out.data()[i] = x / (T(1) + std::exp(-x));
  }
  return out;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  // tanh approximation
  const T c = std::sqrt(T(2) / T(M_PI));
  auto an = a.node();
  auto out = detail::make_result<T>(a.rows(), a.cols(), {a}, [an, c](TapeNode<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T x = an->value[i];
      const T cube = T(0.044715) * x * x * x;
      const T th = std::tanh(c * (x + cube));
      const T sech2 = T(1) - th * th;
      const T local = T(0.5) * (T(1) + th) +
                      T(0.5) * x * sech2 * c * (T(1) + T(3) * T(0.044715) * x * x);
      detail::accumulate(an, i, o.grad[i] * local);
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.data()[i];
    out.data()[i] = T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
  }
  return out;
}

// Softmax along axis (0 = down columns, 1 = along rows), max-subtracted.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  if (axis != 0 && axis != 1) throw ConfigError("softmax: axis must be 0 or 1");
  for (T v : a.data())
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  const std::size_t m = a.rows(), n = a.cols();
  const std::size_t lanes = axis == 1 ? m : n;
  const std::size_t len = axis == 1 ? n : m;
  auto index = [axis, n](std::size_t lane, std::size_t k) {
    return axis == 1 ? lane * n + k : k * n + lane;
  };
  auto an = a.node();
  Tensor<T> out = Tensor<T>::zeros(m, n);
  for (std::size_t l = 0; l < lanes; ++l) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, a.data()[index(l, k)]);
    T s = T(0);
    for (std::size_t k = 0; k < len; ++k) {
      const T e = std::exp(a.data()[index(l, k)] - mx);
      out.data()[index(l, k)] = e;
      s += e;
    }
    if (!(s > T(0))) throw NumericError("softmax: fully masked lane");
    for (std::size_t k = 0; k < len; ++k) out.data()[index(l, k)] /= s;
  }
  if (grad_enabled() && a.tracked()) {
    auto node = out.node();
    node->tracked = true;
    node->parents.push_back(an);
    auto y = out.data();  // saved output
    node->backward_fn = [an, y, lanes, len, index](TapeNode<T>& o) {
      auto& g = an->ensure_grad();
      for (std::size_t l = 0; l < lanes; ++l) {
        T dot = T(0);
        for (std::size_t k = 0; k < len; ++k) dot += o.grad[index(l, k)] * y[index(l, k)];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = index(l, k);
          g[i] += y[i] * (o.grad[i] - dot);
        }
      }
    };
  }
  return out;
}

// Per-row normalization over the last axis, then affine with gain/bias (1 x cols).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  if (gain.rows() != 1 || gain.cols() != a.cols() || bias.rows() != 1 || bias.cols() != a.cols())
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(a.cols()));
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be > 0");
  const std::size_t m = a.rows(), n = a.cols();
  auto an = a.node(), gn = gain.node(), bn = bias.node();
  Tensor<T> out = Tensor<T>::zeros(m, n);
  std::vector<T> xhat(m * n), rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += a.data()[i * n + j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T d = a.data()[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T r = T(1) / std::sqrt(var + eps);
    rstd[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const T xh = (a.data()[i * n + j] - mu) * r;
      xhat[i * n + j] = xh;
      out.data()[i * n + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  bool any = a.tracked() || gain.tracked() || bias.tracked();
  if (grad_enabled() && any) {
    auto node = out.node();
    node->tracked = true;
    if (a.tracked()) node->parents.push_back(an);
    if (gain.tracked()) node->parents.push_back(gn);
    if (bias.tracked()) node->parents.push_back(bn);
    node->backward_fn = [an, gn, bn, xhat, rstd, m, n](TapeNode<T>& o) {
      for (std::size_t i = 0; i < m; ++i) {
        T mean_dxh = T(0), mean_dxh_xh = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          const T dy = o.grad[i * n + j];
          const T dxh = dy * gn->value[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xhat[i * n + j];
          detail::accumulate(gn, j, dy * xhat[i * n + j]);
          detail::accumulate(bn, j, dy);
        }
        mean_dxh /= static_cast<T>(n);
        mean_dxh_xh /= static_cast<T>(n);
        if (an->tracked) {
          auto& g = an->ensure_grad();
          for (std::size_t j = 0; j < n; ++j) {
            const T dxh = o.grad[i * n + j] * gn->value[j];
            g[i * n + j] += (dxh - mean_dxh - xhat[i * n + j] * mean_dxh_xh) * rstd[i];
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean negative log-likelihood over positions whose target != ignore_id.
// All positions ignored -> loss 0 with zero gradient.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        int ignore_id = -1) {
  const std::size_t m = logits.rows(), v = logits.cols();
  if (targets.size() != m)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(m) + " rows");
  for (int t : targets)
    if (t != ignore_id && (t < 0 || static_cast<std::size_t>(t) >= v))
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(v) + ")");
  std::size_t n_eff = 0;
  for (int t : targets) n_eff += (t != ignore_id);
  auto ln = logits.node();
  std::vector<T> probs(m * v);
  T loss = T(0);
  for (std::size_t i = 0; i < m; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, logits.data()[i * v + j]);
    T s = T(0);
    for (std::size_t j = 0; j < v; ++j) s += std::exp(logits.data()[i * v + j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(logits.data()[i * v + j] - lse);
    if (targets[i] != ignore_id) loss += lse - logits.data()[i * v + static_cast<std::size_t>(targets[i])];
  }
  auto out = detail::make_result<T>(1, 1, {logits},
                                    [ln, probs, targets, ignore_id, n_eff, m, v](TapeNode<T>& o) {
    if (n_eff == 0) return;
    const T g = o.grad[0] / static_cast<T>(n_eff);
    auto& gl = ln->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      if (targets[i] == ignore_id) continue;
      for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += g * probs[i * v + j];
      gl[i * v + static_cast<std::size_t>(targets[i])] -= g;
    }
  });
  out.data()[0] = n_eff == 0 ? T(0) : loss / static_cast<T>(n_eff);
  return out;
}

// ---------------------------------------------------------------------------
// rotary position embedding (linear per-pair rotation, exactly invertible)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> rope_rows(const Tensor<T>& a, const std::vector<std::size_t>& positions,
                    T base = T(10000)) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n % 2 != 0) throw ConfigError("rope_rows: head dimension must be even");
  if (positions.size() != m) throw ShapeError("rope_rows: one position per row");
  std::vector<T> cs(m * n / 2), sn(m * n / 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < n / 2; ++p) {
      const T theta = std::pow(base, -static_cast<T>(2 * p) / static_cast<T>(n));
      const T ang = static_cast<T>(positions[i]) * theta;
      cs[i * (n / 2) + p] = std::cos(ang);
      sn[i * (n / 2) + p] = std::sin(ang);
    }
  auto an = a.node();
  auto out = detail::make_result<T>(m, n, {a}, [an, cs, sn, m, n](TapeNode<T>& o) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < n / 2; ++p) {
        const T c = cs[i * (n / 2) + p], s = sn[i * (n / 2) + p];
        const T g0 = o.grad[i * n + 2 * p], g1 = o.grad[i * n + 2 * p + 1];
        // transpose of the rotation
        g[i * n + 2 * p] += c * g0 + s * g1;
        g[i * n + 2 * p + 1] += -s * g0 + c * g1;
      }
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < n / 2; ++p) {
      const T c = cs[i * (n / 2) + p], s = sn[i * (n / 2) + p];
      const T x0 = a.data()[i * n + 2 * p], x1 = a.data()[i * n + 2 * p + 1];
      out.data()[i * n + 2 * p] = x0 * c - x1 * s;
      out.data()[i * n + 2 * p + 1] = x0 * s + x1 * c;
    }
  return out;
}

}  // namespace cpdss
