#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdss/diffusion.hpp"
#include "cpdss/ssgraph.hpp"
#include "cpdss/tensor.hpp"

namespace cpdss {

// Resolved run configuration; serialized in full into every checkpoint and
// report. Desk-scale defaults; configs/paper.json carries the paper-scale
// preset.
struct Config {
  std::uint64_t seed = 7;
  bool deterministic = false;

  struct Model {
    std::string embedder = "toy";  // "toy" | "import"
    bool freeze_embedder = true;
    std::size_t d = 64;
    std::size_t embedder_heads = 4;
    std::size_t embedder_blocks = 2;
    std::size_t decoder_blocks = 2;
    std::size_t decoder_heads = 4;
    std::size_t decoder_ffn = 256;
    std::size_t egnn_layers = 4;
    std::size_t egnn_hidden = 64;
    std::size_t egnn_message = 64;
    std::size_t time_dim = 64;
    std::size_t max_len = 160;
    double coord_scale = 0.1;
  } model;

  struct Schedule {
    std::string kind = "sqrt";
    std::size_t steps = 200;
  } schedule;

  struct Optimizer {
    double lr = 5e-4;
    double weight_decay = 1e-5;
  } optimizer;

  struct Data {
    std::size_t knn_k = 3;
    std::size_t max_ss_run = 100;
    double val_fraction = 0.1;
    std::string chain;           // empty = first chain
    std::string edge_norm = "sum";  // sum | max | global_max
  } data;

  struct Training {
    std::size_t decoder_steps = 2000;
    std::size_t diffusion_steps = 5000;
    std::size_t batch_size = 8;
    std::size_t log_every = 50;
  } training;

  struct Generation {
    std::size_t n_samples = 20;
    double temperature = 1.0;
    std::size_t top_k = 0;
  } generation;
};

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["model"] = {{"embedder", c.model.embedder},
                {"freeze_embedder", c.model.freeze_embedder},
                {"d", c.model.d},
                {"embedder_heads", c.model.embedder_heads},
                {"embedder_blocks", c.model.embedder_blocks},
                {"decoder_blocks", c.model.decoder_blocks},
                {"decoder_heads", c.model.decoder_heads},
                {"decoder_ffn", c.model.decoder_ffn},
                {"egnn_layers", c.model.egnn_layers},
                {"egnn_hidden", c.model.egnn_hidden},
                {"egnn_message", c.model.egnn_message},
                {"time_dim", c.model.time_dim},
                {"max_len", c.model.max_len},
                {"coord_scale", c.model.coord_scale}};
  j["schedule"] = {{"kind", c.schedule.kind}, {"steps", c.schedule.steps}};
  j["optimizer"] = {{"lr", c.optimizer.lr}, {"weight_decay", c.optimizer.weight_decay}};
  j["data"] = {{"knn_k", c.data.knn_k},
               {"max_ss_run", c.data.max_ss_run},
               {"val_fraction", c.data.val_fraction},
               {"chain", c.data.chain},
               {"edge_norm", c.data.edge_norm}};
  j["training"] = {{"decoder_steps", c.training.decoder_steps},
                   {"diffusion_steps", c.training.diffusion_steps},
                   {"batch_size", c.training.batch_size},
                   {"log_every", c.training.log_every}};
  j["generation"] = {{"n_samples", c.generation.n_samples},
                     {"temperature", c.generation.temperature},
                     {"top_k", c.generation.top_k}};
  return j;
}

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  c.seed = j.value("seed", c.seed);
  c.deterministic = j.value("deterministic", c.deterministic);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.embedder = m.value("embedder", c.model.embedder);
    c.model.freeze_embedder = m.value("freeze_embedder", c.model.freeze_embedder);
    c.model.d = m.value("d", c.model.d);
    c.model.embedder_heads = m.value("embedder_heads", c.model.embedder_heads);
    c.model.embedder_blocks = m.value("embedder_blocks", c.model.embedder_blocks);
    c.model.decoder_blocks = m.value("decoder_blocks", c.model.decoder_blocks);
    c.model.decoder_heads = m.value("decoder_heads", c.model.decoder_heads);
    c.model.decoder_ffn = m.value("decoder_ffn", c.model.decoder_ffn);
    c.model.egnn_layers = m.value("egnn_layers", c.model.egnn_layers);
    c.model.egnn_hidden = m.value("egnn_hidden", c.model.egnn_hidden);
    c.model.egnn_message = m.value("egnn_message", c.model.egnn_message);
    c.model.time_dim = m.value("time_dim", c.model.time_dim);
    c.model.max_len = m.value("max_len", c.model.max_len);
    c.model.coord_scale = m.value("coord_scale", c.model.coord_scale);
  }
  if (j.contains("schedule")) {
    c.schedule.kind = j.at("schedule").value("kind", c.schedule.kind);
    c.schedule.steps = j.at("schedule").value("steps", c.schedule.steps);
  }
  if (j.contains("optimizer")) {
    c.optimizer.lr = j.at("optimizer").value("lr", c.optimizer.lr);
    c.optimizer.weight_decay =
        j.at("optimizer").value("weight_decay", c.optimizer.weight_decay);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    c.data.knn_k = d.value("knn_k", c.data.knn_k);
    c.data.max_ss_run = d.value("max_ss_run", c.data.max_ss_run);
    c.data.val_fraction = d.value("val_fraction", c.data.val_fraction);
    c.data.chain = d.value("chain", c.data.chain);
    c.data.edge_norm = d.value("edge_norm", c.data.edge_norm);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    c.training.decoder_steps = t.value("decoder_steps", c.training.decoder_steps);
    c.training.diffusion_steps = t.value("diffusion_steps", c.training.diffusion_steps);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.log_every = t.value("log_every", c.training.log_every);
  }
  if (j.contains("generation")) {
    const auto& g = j.at("generation");
    c.generation.n_samples = g.value("n_samples", c.generation.n_samples);
    c.generation.temperature = g.value("temperature", c.generation.temperature);
    c.generation.top_k = g.value("top_k", c.generation.top_k);
  }
  parse_schedule_kind(c.schedule.kind);  // validate early
  parse_edge_norm(c.data.edge_norm);
  if (c.model.embedder != "toy" && c.model.embedder != "import")
    throw ConfigError("model.embedder must be 'toy' or 'import'");
  return c;
}

// Canonical serialized form (sorted keys via nlohmann) used for hashing and
// resume-compatibility checks.
inline std::string config_canonical(const Config& c) { return config_to_json(c).dump(); }

inline std::string config_hash(const Config& c) {
  const std::string s = config_canonical(c);
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Paths of JSON keys whose values differ (for resume refusal messages).
inline void json_diff_paths(const nlohmann::json& a, const nlohmann::json& b,
                            const std::string& prefix, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    for (auto it = a.begin(); it != a.end(); ++it) {
      const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (!b.contains(it.key()))
        out.push_back(path);
      else
        json_diff_paths(it.value(), b.at(it.key()), path, out);
    }
    for (auto it = b.begin(); it != b.end(); ++it)
      if (!a.contains(it.key()))
        out.push_back(prefix.empty() ? it.key() : prefix + "." + it.key());
    return;
  }
  if (a != b) out.push_back(prefix);
}

}  // namespace cpdss
