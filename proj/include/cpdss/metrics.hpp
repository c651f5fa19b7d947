#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdss/geom.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

struct AlignScores {
  int match = 1;
  int mismatch = -1;
  int gap = -1;  // linear gap penalty
};

struct Alignment {
  std::string aligned1;
  std::string aligned2;
  int score = 0;
  std::size_t matches = 0;
  std::size_t alignment_length = 0;  // matches + mismatches + gaps
};

// Needleman-Wunsch global alignment. Traceback ties prefer diagonal, then up
// (gap in s2), then left (gap in s1), so results are deterministic.
inline Alignment global_align(const std::string& s1, const std::string& s2,
                              AlignScores sc = {}) {
  if (s1.empty() || s2.empty())
    throw ContractError("global_align: empty sequence");
  const std::size_t n1 = s1.size(), n2 = s2.size();
  std::vector<int> h((n1 + 1) * (n2 + 1));
  std::vector<unsigned char> ptr((n1 + 1) * (n2 + 1));  // 0 diag, 1 up, 2 left
  auto at = [n2](std::size_t i, std::size_t j) { return i * (n2 + 1) + j; };
  for (std::size_t i = 1; i <= n1; ++i) {
    h[at(i, 0)] = static_cast<int>(i) * sc.gap;
    ptr[at(i, 0)] = 1;
  }
  for (std::size_t j = 1; j <= n2; ++j) {
    h[at(0, j)] = static_cast<int>(j) * sc.gap;
    ptr[at(0, j)] = 2;
  }
  for (std::size_t i = 1; i <= n1; ++i)
    for (std::size_t j = 1; j <= n2; ++j) {
      const int diag = h[at(i - 1, j - 1)] + (s1[i - 1] == s2[j - 1] ? sc.match : sc.mismatch);
      const int up = h[at(i - 1, j)] + sc.gap;
      const int left = h[at(i, j - 1)] + sc.gap;
      if (diag >= up && diag >= left) {
        h[at(i, j)] = diag;
        ptr[at(i, j)] = 0;
      } else if (up >= left) {
        h[at(i, j)] = up;
        ptr[at(i, j)] = 1;
      } else {
        h[at(i, j)] = left;
        ptr[at(i, j)] = 2;
      }
    }
  Alignment out;
  out.score = h[at(n1, n2)];
  std::size_t i = n1, j = n2;
  std::string a1, a2;
  while (i > 0 || j > 0) {
    switch (ptr[at(i, j)]) {
      case 0:
        a1.push_back(s1[--i]);
        a2.push_back(s2[--j]);
        break;
      case 1:
        a1.push_back(s1[--i]);
        a2.push_back('-');
        break;
      default:
        a1.push_back('-');
        a2.push_back(s2[--j]);
        break;
    }
  }
  std::reverse(a1.begin(), a1.end());
  std::reverse(a2.begin(), a2.end());
  out.aligned1 = std::move(a1);
  out.aligned2 = std::move(a2);
  out.alignment_length = out.aligned1.size();
  for (std::size_t k = 0; k < out.alignment_length; ++k)
    if (out.aligned1[k] == out.aligned2[k] && out.aligned1[k] != '-') ++out.matches;
  return out;
}

// 100 * matches / alignment_length
inline double identity(const std::string& s1, const std::string& s2, AlignScores sc = {}) {
  const Alignment a = global_align(s1, s2, sc);
  return 100.0 * static_cast<double>(a.matches) / static_cast<double>(a.alignment_length);
}

struct SsIdentityResult {
  double percent = 0.0;
  bool empty_after_filter = false;
};

// Identity between two {H,E,C} strings; drop_loops removes all 'C' from both
// sides first. Either side emptying out yields a flagged 0.
inline SsIdentityResult ss_identity(const std::string& cond_ss, const std::string& gen_ss,
                                    bool drop_loops, AlignScores sc = {}) {
  std::string a = cond_ss, b = gen_ss;
  if (drop_loops) {
    auto strip = [](std::string& s) {
      s.erase(std::remove(s.begin(), s.end(), 'C'), s.end());
    };
    strip(a);
    strip(b);
  }
  if (a.empty() || b.empty()) return {0.0, true};
  return {identity(a, b, sc), false};
}

struct SSComposition {
  double pct_h = 0.0;
  double pct_e = 0.0;
  double pct_c = 0.0;
};

inline SSComposition ss_composition(const std::string& ss) {
  if (ss.empty()) throw ContractError("ss_composition: empty sequence");
  double h = 0, e = 0, c = 0;
  for (char ch : ss) {
    if (ch == 'H') ++h;
    else if (ch == 'E') ++e;
    else ++c;
  }
  const double n = static_cast<double>(ss.size());
  return {100.0 * h / n, 100.0 * e / n, 100.0 * c / n};
}

// Mean over the three classes of squared percentage differences.
inline double composition_mse(const SSComposition& a, const SSComposition& b) {
  const double dh = a.pct_h - b.pct_h;
  const double de = a.pct_e - b.pct_e;
  const double dc = a.pct_c - b.pct_c;
  return (dh * dh + de * de + dc * dc) / 3.0;
}

struct CompositionMseResult {
  double value = 0.0;
  bool empty_after_filter = false;
};

// Without-loop variant: percentages recomputed over {H, E} only, mean over 2
// classes. A string with no H/E at all yields a flagged 0.
inline CompositionMseResult composition_mse_no_loops(const std::string& ss_a,
                                                     const std::string& ss_b) {
  auto he = [](const std::string& s) -> std::array<double, 2> {
    double h = 0, e = 0;
    for (char c : s) {
      if (c == 'H') ++h;
      else if (c == 'E') ++e;
    }
    const double t = h + e;
    if (t == 0) return {-1.0, -1.0};
    return {100.0 * h / t, 100.0 * e / t};
  };
  const auto a = he(ss_a), b = he(ss_b);
  if (a[0] < 0 || b[0] < 0) return {0.0, true};
  const double dh = a[0] - b[0], de = a[1] - b[1];
  return {(dh * dh + de * de) / 2.0, false};
}

// Mean pairwise identity over all unordered sample pairs (lower = more
// diverse). Fixed pair order keeps the accumulation deterministic.
inline double diversity_mean_pairwise_identity(const std::vector<std::string>& samples,
                                               AlignScores sc = {}) {
  if (samples.size() < 2)
    throw ContractError("diversity: need at least 2 samples, got " +
                        std::to_string(samples.size()));
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      total += identity(samples[i], samples[j], sc);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

namespace detail {

// Cyclic Jacobi eigensolver for small symmetric matrices; returns the largest
// eigenvalue. Plenty for the 4x4 quaternion matrix below.
template <std::size_t N>
double jacobi_max_eigenvalue(std::array<std::array<double, N>, N> a) {
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t q = p + 1; q < N; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t q = p + 1; q < N; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < N; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  double best = a[0][0];
  for (std::size_t i = 1; i < N; ++i) best = std::max(best, a[i][i]);
  return best;
}

}  // namespace detail

// RMSD after optimal rigid superposition (proper rotations only), via the
// quaternion formulation: the largest eigenvalue of the 4x4 key matrix equals
// the maximum of sum(b . R a) over rotations R.
inline double kabsch_rmsd(const std::vector<Vec3>& a_in, const std::vector<Vec3>& b_in) {
  if (a_in.size() != b_in.size())
    throw ContractError("kabsch_rmsd: point counts differ");
  const std::size_t n = a_in.size();
  if (n < 3) throw ContractError("kabsch_rmsd: need at least 3 points");
  Vec3 ca{0, 0, 0}, cb{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    ca = ca + a_in[i];
    cb = cb + b_in[i];
  }
  ca = ca * (1.0 / static_cast<double>(n));
  cb = cb * (1.0 / static_cast<double>(n));
  double ga = 0, gb = 0;
  Mat3 m{};
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = a_in[i] - ca;
    const Vec3 b = b_in[i] - cb;
    ga += dot(a, a);
    gb += dot(b, b);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m[r][c] += a[r] * b[c];
  }
  const double sxx = m[0][0], sxy = m[0][1], sxz = m[0][2];
  const double syx = m[1][0], syy = m[1][1], syz = m[1][2];
  const double szx = m[2][0], szy = m[2][1], szz = m[2][2];
  std::array<std::array<double, 4>, 4> key = {{
      {sxx + syy + szz, syz - szy, szx - sxz, sxy - syx},
      {syz - szy, sxx - syy - szz, sxy + syx, szx + sxz},
      {szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy},
      {sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz},
  }};
  const double lambda_max = detail::jacobi_max_eigenvalue(key);
  const double e = std::max(0.0, ga + gb - 2.0 * lambda_max);
  return std::sqrt(e / static_cast<double>(n));
}

}  // namespace cpdss
