#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cpdss/geom.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};
struct EmptyProteinError : std::runtime_error {
  explicit EmptyProteinError(const std::string& msg) : std::runtime_error(msg) {}
};

// Gap between consecutive CA atoms beyond which the chain is considered broken.
inline constexpr double kChainBreakDistance = 10.0;

struct Protein {
  std::string id;
  std::string aa_seq;  // one-letter codes, 'X' for nonstandard
  std::string ss_seq;  // over {H,E,C}; empty until assigned or loaded
  std::vector<Vec3> ca;
  std::vector<std::optional<Vec3>> n, c, o;
  std::vector<std::size_t> chain_breaks;  // i means a break between i-1 and i

  std::size_t size() const { return aa_seq.size(); }
  bool break_before(std::size_t i) const {
    return std::find(chain_breaks.begin(), chain_breaks.end(), i) != chain_breaks.end();
  }
};

// One parsed ATOM record (fixed-column PDB).
struct ResidueRecord {
  char chain = ' ';
  int res_num = 0;
  char icode = ' ';
  std::string res_name;
  std::string atom_name;
  Vec3 pos;
};

struct ParseStats {
  std::size_t atoms_kept = 0;
  std::size_t residues_without_ca = 0;
  std::size_t altloc_skipped = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline const std::unordered_map<std::string, char>& three_to_one_map() {
  static const std::unordered_map<std::string, char> m = {
      {"ALA", 'A'}, {"ARG", 'R'}, {"ASN", 'N'}, {"ASP", 'D'}, {"CYS", 'C'},
      {"GLN", 'Q'}, {"GLU", 'E'}, {"GLY", 'G'}, {"HIS", 'H'}, {"ILE", 'I'},
      {"LEU", 'L'}, {"LYS", 'K'}, {"MET", 'M'}, {"PHE", 'F'}, {"PRO", 'P'},
      {"SER", 'S'}, {"THR", 'T'}, {"TRP", 'W'}, {"TYR", 'Y'}, {"VAL", 'V'}};
  return m;
}

inline const std::unordered_map<char, std::string>& one_to_three_map() {
  static const std::unordered_map<char, std::string> m = [] {
    std::unordered_map<char, std::string> r;
    for (const auto& [three, one] : three_to_one_map()) r[one] = three;
    return r;
  }();
  return m;
}

inline double parse_fixed_double(const std::string& line, std::size_t col0, std::size_t width,
                                 std::size_t line_no, const char* what) {
  if (line.size() < col0 + width)
    throw ParseError("line " + std::to_string(line_no) + ": record too short for " + what);
  const std::string field = trim(line.substr(col0, width));
  if (field.empty())
    throw ParseError("line " + std::to_string(line_no) + ": empty " + std::string(what) +
                     " field");
  std::size_t consumed = 0;
  double v = 0;
  try {
    v = std::stod(field, &consumed);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + std::string(what) +
                     " field '" + field + "'");
  }
  if (consumed != field.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad " + std::string(what) +
                     " field '" + field + "'");
  return v;
}

inline int parse_fixed_int(const std::string& line, std::size_t col0, std::size_t width,
                           std::size_t line_no, const char* what) {
  const double v = parse_fixed_double(line, col0, width, line_no, what);
  return static_cast<int>(v);
}

}  // namespace detail

inline char three_to_one(const std::string& res_name) {
  auto it = detail::three_to_one_map().find(res_name);
  return it == detail::three_to_one_map().end() ? 'X' : it->second;
}

// Fixed-column ATOM parsing per the PDB 3.3 format description. First model
// only; first chain unless one is requested; altloc blank or 'A' only.
inline Protein parse_pdb(const std::string& text, const std::string& id = "",
                         char chain_select = '\0', ParseStats* stats = nullptr) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  char chain = chain_select;
  ParseStats local;
  std::vector<ResidueRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string rec = line.substr(0, 6);
    if (rec == "ENDMDL") break;  // first model only
    if (rec != "ATOM  ") continue;
    if (line.size() < 54)
      throw ParseError("line " + std::to_string(line_no) + ": ATOM record too short");
    const char altloc = line[16];
    if (altloc != ' ' && altloc != 'A') {
      ++local.altloc_skipped;
      continue;
    }
    const char line_chain = line[21];
    if (chain == '\0') chain = line_chain;
    if (line_chain != chain) continue;
    ResidueRecord r;
    r.chain = line_chain;
    r.atom_name = detail::trim(line.substr(12, 4));
    r.res_name = detail::trim(line.substr(17, 3));
    r.res_num = detail::parse_fixed_int(line, 22, 4, line_no, "residue number");
    r.icode = line[26];
    r.pos.x = detail::parse_fixed_double(line, 30, 8, line_no, "x coordinate");
    r.pos.y = detail::parse_fixed_double(line, 38, 8, line_no, "y coordinate");
    r.pos.z = detail::parse_fixed_double(line, 46, 8, line_no, "z coordinate");
    records.push_back(std::move(r));
    ++local.atoms_kept;
  }

  // Group by (residue number, insertion code); first occurrence wins per atom.
  std::map<std::pair<int, char>, std::map<std::string, Vec3>> residues;
  std::map<std::pair<int, char>, std::string> res_names;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.res_num, r.icode);
    residues[key].emplace(r.atom_name, r.pos);  // no overwrite: altloc ' ' then 'A'
    res_names.emplace(key, r.res_name);
  }

  Protein p;
  p.id = id;
  for (const auto& [key, atoms] : residues) {
    auto ca_it = atoms.find("CA");
    if (ca_it == atoms.end()) {
      ++local.residues_without_ca;
      continue;
    }
    p.aa_seq.push_back(three_to_one(res_names.at(key)));
    p.ca.push_back(ca_it->second);
    auto opt = [&atoms](const char* name) -> std::optional<Vec3> {
      auto it = atoms.find(name);
      if (it == atoms.end()) return std::nullopt;
      return it->second;
    };
    p.n.push_back(opt("N"));
    p.c.push_back(opt("C"));
    p.o.push_back(opt("O"));
  }
  if (p.ca.empty()) throw EmptyProteinError("no CA atoms found" + (id.empty() ? "" : " in " + id));
  for (std::size_t i = 1; i < p.ca.size(); ++i)
    if (distance(p.ca[i - 1], p.ca[i]) > kChainBreakDistance) p.chain_breaks.push_back(i);
  if (stats) *stats = local;
  return p;
}

// Debug writer for the retained backbone fields; parse(write(parse(x))) is
// idempotent on them.
inline std::string write_pdb(const Protein& p) {
  std::string out;
  char buf[96];
  int serial = 1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto it = detail::one_to_three_map().find(p.aa_seq[i]);
    const std::string res3 = it == detail::one_to_three_map().end() ? "UNK" : it->second;
    auto emit = [&](const char* name, const Vec3& pos) {
      std::snprintf(buf, sizeof(buf),
                    "ATOM  %5d  %-3s %3s A%4d    %8.3f%8.3f%8.3f  1.00  0.00\n", serial++,
                    name, res3.c_str(), static_cast<int>(i + 1), pos.x, pos.y, pos.z);
      out += buf;
    };
    if (p.n[i]) emit("N", *p.n[i]);
    emit("CA", p.ca[i]);
    if (p.c[i]) emit("C", *p.c[i]);
    if (p.o[i]) emit("O", *p.o[i]);
  }
  out += "TER\nEND\n";
  return out;
}

// 8-class DSSP codes collapse as {H,G,I}->H, {E,B}->E, everything else ->C.
inline char collapse_ss_class(char c) {
  switch (c) {
    case 'H':
    case 'G':
    case 'I':
      return 'H';
    case 'E':
    case 'B':
      return 'E';
    default:
      return 'C';
  }
}

// Replace ss_seq from a sidecar line (3- or 8-class codes).
inline Protein load_ss_sidecar(Protein p, const std::string& text) {
  const std::string line = detail::trim(text);
  if (line.size() != p.size())
    throw ParseError("ss sidecar length " + std::to_string(line.size()) +
                     " does not match protein length " + std::to_string(p.size()));
  std::string ss;
  ss.reserve(line.size());
  for (char c : line) ss.push_back(collapse_ss_class(c));
  p.ss_seq = std::move(ss);
  return p;
}

struct RejectedProtein {
  std::string id;
  char run_label = 'C';
  std::size_t run_length = 0;
};

struct FilterResult {
  std::vector<Protein> kept;
  std::vector<RejectedProtein> rejected;
};

// Reject proteins with any single-class SS run longer than max_run (strict >).
inline FilterResult filter_dataset(const std::vector<Protein>& proteins,
                                   std::size_t max_run = 100) {
  FilterResult out;
  for (const auto& p : proteins) {
    char worst_label = 'C';
    std::size_t worst_run = 0;
    std::size_t i = 0;
    while (i < p.ss_seq.size()) {
      std::size_t j = i;
      while (j < p.ss_seq.size() && p.ss_seq[j] == p.ss_seq[i]) ++j;
      if (j - i > worst_run) {
        worst_run = j - i;
        worst_label = p.ss_seq[i];
      }
      i = j;
    }
    if (worst_run > max_run)
      out.rejected.push_back({p.id, worst_label, worst_run});
    else
      out.kept.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// FASTA
// ---------------------------------------------------------------------------

inline std::string write_fasta(const std::vector<std::pair<std::string, std::string>>& seqs) {
  std::string out;
  for (const auto& [id, seq] : seqs) {
    out += ">" + id + "\n";
    for (std::size_t i = 0; i < seq.size(); i += 60) {
      out += seq.substr(i, 60);
      out += "\n";
    }
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> read_fasta(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::unordered_set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '>') {
      const std::string id = detail::trim(line.substr(1));
      if (!seen.insert(id).second) throw ParseError("duplicate fasta id '" + id + "'");
      out.emplace_back(id, "");
    } else {
      if (out.empty()) throw ParseError("fasta sequence data before any header");
      out.back().second += line;
    }
  }
  return out;
}

}  // namespace cpdss
