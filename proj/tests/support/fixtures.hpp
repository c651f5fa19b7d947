#pragma once

// Ideal-geometry backbone fixtures for secondary-structure tests, built with
// standard bond lengths/angles and caller-supplied phi/psi torsions.

#include <cmath>
#include <string>
#include <vector>

#include "cpdss/geom.hpp"
#include "cpdss/protein.hpp"

namespace fixtures {

using cpdss::Vec3;

// Position d relative to frame (a, b, c): |cd| = r, angle(b,c,d) = theta_deg,
// dihedral(a,b,c,d) = torsion_deg.
inline Vec3 place_atom(const Vec3& a, const Vec3& b, const Vec3& c, double r, double theta_deg,
                       double torsion_deg) {
  const double theta = theta_deg * M_PI / 180.0;
  const double tors = torsion_deg * M_PI / 180.0;
  const Vec3 bc = cpdss::normalized(c - b);
  const Vec3 n = cpdss::normalized(cpdss::cross(b - a, bc));
  const Vec3 m = cpdss::cross(n, bc);
  const double dx = -r * std::cos(theta);
  const double dy = r * std::sin(theta) * std::cos(tors);
  const double dz = r * std::sin(theta) * std::sin(tors);
  return c + bc * dx + m * dy + n * dz;
}

constexpr double kBondNCa = 1.458, kBondCaC = 1.525, kBondCN = 1.329, kBondCO = 1.231;
constexpr double kAngleNCaC = 111.2, kAngleCaCN = 116.2, kAngleCNCa = 121.7, kAngleCaCO = 120.8;

// Poly-alanine backbone with uniform torsions. All four backbone atoms present.
inline cpdss::Protein build_backbone(std::size_t n_res, double phi, double psi,
                                     double omega = 180.0, const std::string& id = "fixture") {
  const std::size_t m = n_res + 1;  // one spare residue to place the last O
  std::vector<Vec3> n(m), ca(m), c(m);
  n[0] = {0, 0, 0};
  ca[0] = {kBondNCa, 0, 0};
  const double ang = (180.0 - kAngleNCaC) * M_PI / 180.0;
  c[0] = ca[0] + Vec3{std::cos(ang) * kBondCaC, std::sin(ang) * kBondCaC, 0};
  for (std::size_t i = 1; i < m; ++i) {
    n[i] = place_atom(n[i - 1], ca[i - 1], c[i - 1], kBondCN, kAngleCaCN, psi);
    ca[i] = place_atom(ca[i - 1], c[i - 1], n[i], kBondNCa, kAngleCNCa, omega);
    c[i] = place_atom(c[i - 1], n[i], ca[i], kBondCaC, kAngleNCaC, phi);
  }
  cpdss::Protein p;
  p.id = id;
  for (std::size_t i = 0; i < n_res; ++i) {
    p.aa_seq.push_back('A');
    p.ca.push_back(ca[i]);
    p.n.emplace_back(n[i]);
    p.c.emplace_back(c[i]);
    p.o.emplace_back(place_atom(n[i + 1], ca[i], c[i], kBondCO, kAngleCaCO, 180.0));
  }
  return p;
}

inline cpdss::Protein ideal_helix(std::size_t n_res = 12) {
  return build_backbone(n_res, -57.0, -47.0, 180.0, "helix");
}

inline cpdss::Protein extended_chain(std::size_t n_res = 3) {
  return build_backbone(n_res, -139.0, 135.0, 180.0, "extended");
}

inline cpdss::Protein rigid_transform(cpdss::Protein p, const cpdss::Mat3& r, const Vec3& t) {
  auto move = [&](Vec3& v) { v = cpdss::apply(r, v) + t; };
  for (auto& v : p.ca) move(v);
  for (auto& v : p.n)
    if (v) move(*v);
  for (auto& v : p.c)
    if (v) move(*v);
  for (auto& v : p.o)
    if (v) move(*v);
  return p;
}

inline cpdss::Protein concat_proteins(const cpdss::Protein& a, const cpdss::Protein& b,
                                      const std::string& id) {
  cpdss::Protein p;
  p.id = id;
  p.aa_seq = a.aa_seq + b.aa_seq;
  p.ca = a.ca;
  p.ca.insert(p.ca.end(), b.ca.begin(), b.ca.end());
  auto join = [](auto dst, const auto& more) {
    dst.insert(dst.end(), more.begin(), more.end());
    return dst;
  };
  p.n = join(a.n, b.n);
  p.c = join(a.c, b.c);
  p.o = join(a.o, b.o);
  return p;
}

// Two ideal strands, the second flipped to run antiparallel and placed so the
// mutual N-H...O=C register forms. The transform constants come from a grid
// search plus coordinate descent on the summed hydrogen-bond energies of the
// target register (i + j = 11), with a steric floor keeping heavy atoms at
// beta-sheet contact distance; bonds land at 1.9-2.3 A O..H.
inline cpdss::Protein antiparallel_sheet() {
  const auto strand = build_backbone(6, -139.0, 135.0, 180.0, "sheet");
  const Vec3 axis = cpdss::normalized(strand.ca.back() - strand.ca.front());
  const Vec3 perp = cpdss::normalized(cpdss::cross(axis, {0, 0, 1}));
  const cpdss::Mat3 rot = cpdss::matmul3(cpdss::axis_angle(axis, 230.678827 * M_PI / 180.0),
                                         cpdss::axis_angle(perp, M_PI));
  const auto flipped = rigid_transform(strand, rot, {18.1, 8.6, 4.96875});
  return concat_proteins(strand, flipped, "sheet");
}

}  // namespace fixtures
