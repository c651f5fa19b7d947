#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cpdss/geom.hpp"
#include "cpdss/protein.hpp"

namespace cpdss {

// Simplified Kabsch-Sander assignment over 3 classes: 4-turn alpha helices
// and bridge-pattern sheets; everything else is coil. Pi/3-10 helices, bends
// and turns are not detected (sidecar files exist for full-DSSP fidelity).

struct SsAssignStats {
  std::size_t residues_missing_backbone = 0;
};

namespace detail {

inline constexpr double kHBondCoupling = 0.084 * 332.0;  // kcal/mol * A
inline constexpr double kHBondCutoff = -0.5;
inline constexpr double kMinAtomSeparation = 0.5;
inline constexpr double kClashEnergy = -9.9;

struct BackboneAtoms {
  bool complete = false;
  Vec3 n, ca, c, o;
  std::optional<Vec3> h;  // amide hydrogen, reconstructed
};

inline std::vector<BackboneAtoms> collect_backbone(const Protein& p, SsAssignStats* stats) {
  std::vector<BackboneAtoms> bb(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    bb[i].ca = p.ca[i];
    if (p.n[i] && p.c[i] && p.o[i]) {
      bb[i].complete = true;
      bb[i].n = *p.n[i];
      bb[i].c = *p.c[i];
      bb[i].o = *p.o[i];
    } else if (stats) {
      ++stats->residues_missing_backbone;
    }
  }
  // H sits 1 A from N along the unit sum of the normalized N-C_prev and
  // N-O_prev directions. The first residue (and any residue after a chain
  // break) has no H and cannot donate.
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (!bb[i].complete || !bb[i - 1].complete || p.break_before(i)) continue;
    const Vec3 u = normalized(bb[i].n - bb[i - 1].c);
    const Vec3 v = normalized(bb[i].n - bb[i - 1].o);
    const Vec3 w = normalized(u + v);
    bb[i].h = bb[i].n + w;
  }
  return bb;
}

// E = q * (1/r_ON + 1/r_CH - 1/r_OH - 1/r_CN); donor supplies N-H, acceptor C=O.
inline double hbond_energy(const BackboneAtoms& donor, const BackboneAtoms& acceptor) {
  const Vec3& h = *donor.h;
  const double r_on = distance(acceptor.o, donor.n);
  const double r_ch = distance(acceptor.c, h);
  const double r_oh = distance(acceptor.o, h);
  const double r_cn = distance(acceptor.c, donor.n);
  if (r_on < kMinAtomSeparation || r_ch < kMinAtomSeparation || r_oh < kMinAtomSeparation ||
      r_cn < kMinAtomSeparation)
    return kClashEnergy;
  return kHBondCoupling * (1.0 / r_on + 1.0 / r_ch - 1.0 / r_oh - 1.0 / r_cn);
}

}  // namespace detail

inline std::string assign_ss(const Protein& p, SsAssignStats* stats = nullptr) {
  const std::size_t n = p.size();
  const auto bb = detail::collect_backbone(p, stats);

  auto crosses_break = [&p](std::size_t a, std::size_t b) {
    const std::size_t lo = std::min(a, b), hi = std::max(a, b);
    for (std::size_t i = lo + 1; i <= hi; ++i)
      if (p.break_before(i)) return true;
    return false;
  };

  // bond[a][d]: C=O of residue a accepts a hydrogen bond from N-H of residue d.
  // The donor immediately following its acceptor is excluded: its H was
  // reconstructed from that acceptor's own C=O.
  std::vector<std::vector<bool>> bond(n, std::vector<bool>(n, false));
  for (std::size_t d = 0; d < n; ++d) {
    if (!bb[d].h) continue;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == d || d == a + 1) continue;
      if (!bb[a].complete) continue;
      if (crosses_break(a, d)) continue;
      bond[a][d] = detail::hbond_energy(bb[d], bb[a]) < detail::kHBondCutoff;
    }
  }

  // 4-turn at i: CO(i) accepts from NH(i+4).
  std::vector<bool> turn4(n, false);
  for (std::size_t i = 0; i + 4 < n; ++i) turn4[i] = bond[i][i + 4];

  // Kabsch-Sander bridge patterns, |i-j| >= 3, both flavors mark i and j.
  std::vector<bool> bridge(n, false);
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = i + 3; j + 1 < n; ++j) {
      const bool parallel = (bond[i - 1][j] && bond[j][i + 1]) ||
                            (bond[j - 1][i] && bond[i][j + 1]);
      const bool antiparallel = (bond[i][j] && bond[j][i]) ||
                                (bond[i - 1][j + 1] && bond[j - 1][i + 1]);
      if (parallel || antiparallel) bridge[i] = bridge[j] = true;
    }

  std::string ss(n, 'C');
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= 1 && turn4[i - 1] && turn4[i])
      ss[i] = 'H';
    else if (bridge[i])
      ss[i] = 'E';
  }
  return ss;
}

}  // namespace cpdss
