#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdss/geom.hpp"
#include "cpdss/protein.hpp"

namespace cpdss {

// Maximal run of one SS class; the node unit of the SS graph.
struct Segment {
  char ss_class = 'C';
  std::size_t start = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

inline std::vector<Segment> segment(const std::string& ss_seq) {
  if (ss_seq.empty()) throw ContractError("segment: empty ss sequence");
  std::vector<Segment> out;
  std::size_t i = 0;
  while (i < ss_seq.size()) {
    std::size_t j = i;
    while (j < ss_seq.size() && ss_seq[j] == ss_seq[i]) ++j;
    out.push_back({ss_seq[i], i, j - i});
    i = j;
  }
  return out;
}

inline std::string expand_segments(const std::vector<Segment>& segments) {
  std::string out;
  for (const auto& s : segments) out += std::string(s.length, s.ss_class);
  return out;
}

// Mean CA position per segment.
inline std::vector<Vec3> segment_coords(const std::vector<Vec3>& ca,
                                        const std::vector<Segment>& segments) {
  std::vector<Vec3> out;
  out.reserve(segments.size());
  for (const auto& s : segments) {
    Vec3 acc{0, 0, 0};
    for (std::size_t i = s.start; i < s.start + s.length; ++i) acc = acc + ca[i];
    out.push_back(acc * (1.0 / static_cast<double>(s.length)));
  }
  return out;
}

struct GraphEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 0.0;

  bool operator==(const GraphEdge&) const = default;
};

// Directed kNN: each node points at its min(k, m-1) nearest others, ties
// broken by lower index. Edge order: ascending source, then (distance, index).
inline std::vector<std::pair<std::size_t, std::size_t>> build_knn(const std::vector<Vec3>& coords,
                                                                  std::size_t k) {
  if (k < 1) throw ConfigError("build_knn: k must be >= 1");
  const std::size_t m = coords.size();
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(m - 1);
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) cand.emplace_back(distance(coords[i], coords[j]), j);
    std::sort(cand.begin(), cand.end());
    const std::size_t take = std::min(k, m - 1);
    for (std::size_t t = 0; t < take; ++t) edges.emplace_back(i, cand[t].second);
  }
  return edges;
}

// "Fraction of the Euclidean distance" normalization. PerNodeSum is the
// default reading (features sum to 1 per source node); the alternatives stay
// selectable because the phrase is ambiguous.
enum class EdgeNorm { PerNodeSum, PerNodeMax, GlobalMax };

inline EdgeNorm parse_edge_norm(const std::string& name) {
  if (name == "sum") return EdgeNorm::PerNodeSum;
  if (name == "max") return EdgeNorm::PerNodeMax;
  if (name == "global_max") return EdgeNorm::GlobalMax;
  throw ConfigError("unknown edge normalization '" + name + "'");
}

// w_ij = d_ij / (per-mode normalizer); a node whose neighbors are all at
// distance 0 gets uniform weights.
inline std::vector<double> edge_features(
    const std::vector<std::pair<std::size_t, std::size_t>>& edges,
    const std::vector<Vec3>& coords, EdgeNorm norm = EdgeNorm::PerNodeSum) {
  std::vector<double> dist(edges.size());
  std::vector<double> denom;
  std::vector<std::size_t> counts;
  double global_max = 0.0;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    dist[e] = distance(coords[i], coords[j]);
    if (i >= denom.size()) {
      denom.resize(i + 1, 0.0);
      counts.resize(i + 1, 0);
    }
    if (norm == EdgeNorm::PerNodeSum)
      denom[i] += dist[e];
    else
      denom[i] = std::max(denom[i], dist[e]);
    global_max = std::max(global_max, dist[e]);
    ++counts[i];
  }
  std::vector<double> w(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const std::size_t i = edges[e].first;
    const double d = norm == EdgeNorm::GlobalMax ? global_max : denom[i];
    w[e] = d > 0.0 ? dist[e] / d : 1.0 / static_cast<double>(counts[i]);
  }
  return w;
}

// SS-level graph: one node per segment with one-hot class and mean-CA
// coordinates, directed kNN edges with distance-fraction features.
struct SSGraph {
  std::string id;
  std::vector<char> types;  // per node, in {H, E, C}
  std::vector<Vec3> coords;
  std::vector<GraphEdge> edges;
  std::vector<Segment> segments;

  std::size_t num_nodes() const { return types.size(); }
  std::size_t residue_count() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.length;
    return n;
  }
  std::string ss_string() const { return expand_segments(segments); }
};

inline SSGraph build_ss_graph(const Protein& p, std::size_t k,
                              EdgeNorm norm = EdgeNorm::PerNodeSum) {
  if (p.ss_seq.size() != p.size())
    throw ContractError("build_ss_graph: protein " + p.id + " has no ss assignment");
  SSGraph g;
  g.id = p.id;
  g.segments = segment(p.ss_seq);
  for (const auto& s : g.segments) g.types.push_back(s.ss_class);
  g.coords = segment_coords(p.ca, g.segments);
  const auto edges = build_knn(g.coords, k);
  const auto weights = edge_features(edges, g.coords, norm);
  for (std::size_t e = 0; e < edges.size(); ++e)
    g.edges.push_back({edges[e].first, edges[e].second, weights[e]});
  return g;
}

inline int ss_class_index(char c) { return c == 'H' ? 0 : (c == 'E' ? 1 : 2); }

inline nlohmann::json graph_to_json(const SSGraph& g) {
  nlohmann::json j;
  j["id"] = g.id;
  j["types"] = nlohmann::json::array();
  for (char t : g.types) j["types"].push_back(std::string(1, t));
  j["coords"] = nlohmann::json::array();
  for (const auto& c : g.coords) j["coords"].push_back({c.x, c.y, c.z});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges) j["edges"].push_back({e.src, e.dst, e.weight});
  j["segments"] = nlohmann::json::array();
  for (const auto& s : g.segments)
    j["segments"].push_back({std::string(1, s.ss_class), s.start, s.length});
  return j;
}

inline SSGraph graph_from_json(const nlohmann::json& j) {
  SSGraph g;
  g.id = j.at("id").get<std::string>();
  for (const auto& t : j.at("types")) g.types.push_back(t.get<std::string>().at(0));
  for (const auto& c : j.at("coords")) g.coords.push_back({c.at(0), c.at(1), c.at(2)});
  for (const auto& e : j.at("edges"))
    g.edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(),
                       e.at(2).get<double>()});
  for (const auto& s : j.at("segments"))
    g.segments.push_back({s.at(0).get<std::string>().at(0), s.at(1).get<std::size_t>(),
                          s.at(2).get<std::size_t>()});
  if (g.types.size() != g.coords.size() || g.types.size() != g.segments.size())
    throw ParseError("graph json: inconsistent node counts");
  for (const auto& e : g.edges)
    if (e.src >= g.num_nodes() || e.dst >= g.num_nodes())
      throw ParseError("graph json: edge endpoint out of range");
  return g;
}

}  // namespace cpdss
