#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cpdss/nn.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Named-array container. Layout, all little-endian:
//   magic "CPDS" | version u32 | config length u32 | config UTF-8 JSON
//   then repeated: name length u32 | name UTF-8 | rank u32 | dims u64 x rank
//                  | payload f32 x prod(dims)
// Loading then saving reproduces the bytes exactly.
struct NamedArray {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::size_t size() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  std::string config_json;

  void add(const std::string& name, NamedArray array) {
    if (index_.count(name)) throw CheckpointError("duplicate checkpoint entry '" + name + "'");
    index_.insert(name);
    entries_.emplace_back(name, std::move(array));
  }

  template <class T>
  void add_tensor(const std::string& name, const Tensor<T>& t) {
    NamedArray a;
    a.dims = {t.rows(), t.cols()};
    a.data.reserve(t.size());
    for (T v : t.data()) a.data.push_back(static_cast<float>(v));
    add(name, std::move(a));
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const NamedArray& get(const std::string& name) const {
    for (const auto& [n, a] : entries_)
      if (n == name) return a;
    throw CheckpointError("checkpoint entry '" + name + "' not found");
  }

  template <class T>
  void load_into(const std::string& name, Tensor<T>& t) const {
    const NamedArray& a = get(name);
    if (a.dims.size() != 2 || a.dims[0] != t.rows() || a.dims[1] != t.cols())
      throw CheckpointError("checkpoint entry '" + name + "' has mismatched shape");
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(a.data[i]);
  }

  const std::vector<std::pair<std::string, NamedArray>>& entries() const { return entries_; }

  std::string serialize() const {
    std::string out;
    out += "CPDS";
    append_u32(out, kVersion);
    append_u32(out, static_cast<std::uint32_t>(config_json.size()));
    out += config_json;
    for (const auto& [name, a] : entries_) {
      append_u32(out, static_cast<std::uint32_t>(name.size()));
      out += name;
      append_u32(out, static_cast<std::uint32_t>(a.dims.size()));
      for (auto d : a.dims) append_u64(out, d);
      for (float v : a.data) append_f32(out, v);
    }
    return out;
  }

  static Checkpoint deserialize(const std::string& bytes) {
    Checkpoint ck;
    std::size_t pos = 0;
    if (bytes.size() < 4 || bytes.compare(0, 4, "CPDS") != 0)
      throw CheckpointError("bad checkpoint magic");
    pos = 4;
    const std::uint32_t version = read_u32(bytes, pos);
    if (version != kVersion)
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t cfg_len = read_u32(bytes, pos);
    if (pos + cfg_len > bytes.size()) throw CheckpointError("truncated checkpoint config");
    ck.config_json = bytes.substr(pos, cfg_len);
    pos += cfg_len;
    while (pos < bytes.size()) {
      const std::uint32_t name_len = read_u32(bytes, pos);
      if (pos + name_len > bytes.size()) throw CheckpointError("truncated entry name");
      std::string name = bytes.substr(pos, name_len);
      pos += name_len;
      NamedArray a;
      const std::uint32_t rank = read_u32(bytes, pos);
      a.dims.resize(rank);
      for (auto& d : a.dims) d = read_u64(bytes, pos);
      const std::size_t count = a.size();
      a.data.resize(count);
      for (auto& v : a.data) v = read_f32(bytes, pos);
      ck.add(name, std::move(a));
    }
    return ck;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }

 private:
  static void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void append_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(out, bits);
  }
  static std::uint32_t read_u32(const std::string& b, std::size_t& pos) {
    if (pos + 4 > b.size()) throw CheckpointError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  static std::uint64_t read_u64(const std::string& b, std::size_t& pos) {
    if (pos + 8 > b.size()) throw CheckpointError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  static float read_f32(const std::string& b, std::size_t& pos) {
    const std::uint32_t bits = read_u32(b, pos);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::vector<std::pair<std::string, NamedArray>> entries_;
  std::unordered_set<std::string> index_;
};

// Save/load an ordered parameter list; names must match exactly.
template <class T>
void save_params(Checkpoint& ck, const NamedParams<T>& params, const std::string& prefix = "") {
  for (const auto& [name, p] : params) ck.add_tensor(prefix + name, p);
}

template <class T>
void load_params(const Checkpoint& ck, NamedParams<T>& params, const std::string& prefix = "") {
  for (auto& [name, p] : params) ck.load_into(prefix + name, p);
}

}  // namespace cpdss
