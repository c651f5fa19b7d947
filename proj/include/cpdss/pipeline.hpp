#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cpdss/checkpoint.hpp"
#include "cpdss/config.hpp"
#include "cpdss/decoder.hpp"
#include "cpdss/diffusion.hpp"
#include "cpdss/egnn.hpp"
#include "cpdss/encoder.hpp"
#include "cpdss/metrics.hpp"
#include "cpdss/protein.hpp"
#include "cpdss/secondary.hpp"
#include "cpdss/ssgraph.hpp"

namespace cpdss {

namespace fs = std::filesystem;

struct PipelineError : std::runtime_error {
  explicit PipelineError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// small file helpers
// ---------------------------------------------------------------------------

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot read '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw PipelineError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// worker pool (CPDSS_THREADS caps it; deterministic mode forces one thread)
// ---------------------------------------------------------------------------

inline std::size_t worker_count(bool deterministic) {
  if (deterministic) return 1;
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CPDSS_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return n;
}

template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// prepare: pdb directory -> graphs + sequences + manifest
// ---------------------------------------------------------------------------

struct PrepareSummary {
  nlohmann::json manifest;
  std::size_t kept = 0;
  std::size_t rejected = 0;
  std::size_t errors = 0;
};

inline PrepareSummary run_prepare(const fs::path& in_dir, const fs::path& out_dir,
                                  const Config& cfg) {
  const auto files = list_files(in_dir, ".pdb");
  struct Slot {
    std::string id;
    std::string status;  // kept | rejected | error
    std::string reason;
    std::string ss_source;
    std::size_t warnings = 0;
    Protein protein;
  };
  std::vector<Slot> slots(files.size());
  const char chain = cfg.data.chain.empty() ? '\0' : cfg.data.chain[0];

  parallel_for(files.size(), worker_count(cfg.deterministic), [&](std::size_t i) {
    Slot& slot = slots[i];
    slot.id = files[i].stem().string();
    try {
      slot.protein = parse_pdb(read_file(files[i]), slot.id, chain);
      const fs::path sidecar = in_dir / (slot.id + ".ss");
      if (fs::exists(sidecar)) {
        slot.protein = load_ss_sidecar(slot.protein, read_file(sidecar));
        slot.ss_source = "sidecar";
      } else {
        SsAssignStats stats;
        slot.protein.ss_seq = assign_ss(slot.protein, &stats);
        slot.ss_source = "assigned";
        slot.warnings = stats.residues_missing_backbone;
      }
      slot.status = "kept";  // provisional until the run-length filter
    } catch (const std::exception& e) {
      slot.status = "error";
      slot.reason = e.what();
    }
  });

  std::vector<Protein> parsed;
  for (const auto& s : slots)
    if (s.status == "kept") parsed.push_back(s.protein);
  const FilterResult filtered = filter_dataset(parsed, cfg.data.max_ss_run);
  for (const auto& rej : filtered.rejected)
    for (auto& s : slots)
      if (s.id == rej.id) {
        s.status = "rejected";
        s.reason = "ss run of " + std::string(1, rej.run_label) + " x " +
                   std::to_string(rej.run_length) + " exceeds " +
                   std::to_string(cfg.data.max_ss_run);
      }

  PrepareSummary summary;
  std::vector<std::pair<std::string, std::string>> fasta;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& s : slots) {
    nlohmann::json e;
    e["id"] = s.id;
    e["status"] = s.status;
    if (!s.reason.empty()) e["reason"] = s.reason;
    if (s.status != "error") {
      e["n"] = s.protein.size();
      e["ss_source"] = s.ss_source;
      e["warnings"] = s.warnings;
    }
    if (s.status == "kept") {
      const SSGraph g = build_ss_graph(s.protein, cfg.data.knn_k,
                                      parse_edge_norm(cfg.data.edge_norm));
      e["m"] = g.num_nodes();
      write_file(out_dir / "graphs" / (s.id + ".json"), graph_to_json(g).dump(2) + "\n");
      write_file(out_dir / "ss" / (s.id + ".ss"), s.protein.ss_seq + "\n");
      fasta.emplace_back(s.id, s.protein.aa_seq);
      ++summary.kept;
    } else if (s.status == "rejected") {
      ++summary.rejected;
    } else {
      ++summary.errors;
    }
    entries.push_back(e);
  }
  write_file(out_dir / "sequences.fasta", write_fasta(fasta));

  summary.manifest["config"] = config_to_json(cfg);
  summary.manifest["config_hash"] = config_hash(cfg);
  summary.manifest["counts"] = {{"input_files", files.size()},
                                {"kept", summary.kept},
                                {"rejected", summary.rejected},
                                {"errors", summary.errors}};
  summary.manifest["proteins"] = entries;
  write_file(out_dir / "manifest.json", summary.manifest.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// prepared-dataset loading
// ---------------------------------------------------------------------------

struct PreparedProtein {
  std::string id;
  std::string aa_seq;
  std::string ss_seq;
  SSGraph graph;
};

inline std::vector<PreparedProtein> load_prepared(const fs::path& data_dir) {
  const auto manifest = nlohmann::json::parse(read_file(data_dir / "manifest.json"));
  std::unordered_map<std::string, std::string> seqs;
  for (const auto& [id, seq] : read_fasta(read_file(data_dir / "sequences.fasta")))
    seqs[id] = seq;
  std::vector<PreparedProtein> out;
  for (const auto& e : manifest.at("proteins")) {
    if (e.at("status") != "kept") continue;
    PreparedProtein p;
    p.id = e.at("id").get<std::string>();
    p.aa_seq = seqs.at(p.id);
    p.graph = graph_from_json(
        nlohmann::json::parse(read_file(data_dir / "graphs" / (p.id + ".json"))));
    p.ss_seq = p.graph.ss_string();
    if (p.ss_seq.size() != p.aa_seq.size())
      throw PipelineError("prepared protein " + p.id + " has inconsistent lengths");
    out.push_back(std::move(p));
  }
  return out;
}

// 90/10 split by id hash (fraction configurable).
inline bool is_validation_id(const std::string& id, double val_fraction) {
  return static_cast<double>(hash_mix(0x5eedULL, id) % 10000) < val_fraction * 10000.0;
}

// ---------------------------------------------------------------------------
// stage-1 model bundle: embedder + attention pool + decoder
// ---------------------------------------------------------------------------

template <class T>
struct Stage1Model {
  Config cfg;
  std::unique_ptr<ToyEmbedder<T>> toy;     // null in import mode
  std::unique_ptr<Checkpoint> embeddings;  // import mode container
  AttnPool<T> pool;
  DecoderModel<T> decoder;

  static Stage1Model init(const Config& cfg, const std::string& embeddings_path = "") {
    Stage1Model m;
    m.cfg = cfg;
    Rng rng(hash_mix(cfg.seed, "stage1-init"));
    if (cfg.model.embedder == "toy") {
      m.toy = std::make_unique<ToyEmbedder<T>>(cfg.model.d, cfg.model.embedder_heads,
                                               cfg.model.embedder_blocks, rng);
      m.toy->set_frozen(cfg.model.freeze_embedder);
    } else {
      if (embeddings_path.empty())
        throw ConfigError("embedder 'import' requires an embeddings file");
      m.embeddings = std::make_unique<Checkpoint>(Checkpoint::load(embeddings_path));
    }
    m.pool = AttnPool<T>(cfg.model.d, rng);
    m.decoder = DecoderModel<T>(cfg.model.d, cfg.model.decoder_heads, cfg.model.decoder_blocks,
                                cfg.model.decoder_ffn, rng);
    return m;
  }

  Tensor<T> embed(const PreparedProtein& p) const {
    if (toy) return toy->embed(p.aa_seq);
    return import_embeddings<T>(*embeddings, p.id, p.aa_seq.size());
  }

  Tensor<T> latent(const PreparedProtein& p) const {
    return pool.pool(embed(p), p.graph.segments);
  }

  NamedParams<T> trainable_params() const {
    NamedParams<T> out;
    if (toy && !cfg.model.freeze_embedder) {
      for (auto& np : toy->named_params()) out.push_back(np);
    }
    for (auto& np : pool.named_params()) out.push_back(np);
    for (auto& np : decoder.named_params()) out.push_back(np);
    return out;
  }

  NamedParams<T> all_params() const {
    NamedParams<T> out;
    if (toy)
      for (auto& np : toy->named_params()) out.push_back(np);
    for (auto& np : pool.named_params()) out.push_back(np);
    for (auto& np : decoder.named_params()) out.push_back(np);
    return out;
  }
};

// ---------------------------------------------------------------------------
// optimizer state <-> checkpoint
// ---------------------------------------------------------------------------

template <class T>
void save_trainer_state(Checkpoint& ck, const NamedParams<T>& trainable, AdamW<T>& opt,
                        std::size_t step, int stage) {
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    NamedArray m, v;
    m.dims = {opt.moment1(i).size()};
    v.dims = {opt.moment2(i).size()};
    for (T x : opt.moment1(i)) m.data.push_back(static_cast<float>(x));
    for (T x : opt.moment2(i)) v.data.push_back(static_cast<float>(x));
    ck.add(trainable[i].first + "#m", std::move(m));
    ck.add(trainable[i].first + "#v", std::move(v));
  }
  NamedArray meta;
  meta.dims = {2};
  meta.data = {static_cast<float>(step), static_cast<float>(stage)};
  ck.add("trainer.meta", std::move(meta));
}

template <class T>
std::size_t load_trainer_state(const Checkpoint& ck, const NamedParams<T>& trainable,
                               AdamW<T>& opt) {
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const auto& m = ck.get(trainable[i].first + "#m");
    const auto& v = ck.get(trainable[i].first + "#v");
    if (m.data.size() != opt.moment1(i).size())
      throw CheckpointError("optimizer state size mismatch for " + trainable[i].first);
    for (std::size_t j = 0; j < m.data.size(); ++j) {
      opt.moment1(i)[j] = static_cast<T>(m.data[j]);
      opt.moment2(i)[j] = static_cast<T>(v.data[j]);
    }
  }
  const auto& meta = ck.get("trainer.meta");
  const std::size_t step = static_cast<std::size_t>(meta.data.at(0));
  opt.step_count = static_cast<std::int64_t>(step);
  return step;
}

// Model identity must match; the training budget and logging cadence are
// runtime knobs, so the `training` subtree is free to differ (that is how an
// interrupted run resumes to a larger step count).
inline void require_config_match(const Config& current, const std::string& stored_json,
                                 const std::string& what) {
  auto cur = config_to_json(current);
  auto stored = nlohmann::json::parse(stored_json);
  cur.erase("training");
  stored.erase("training");
  if (cur == stored) return;
  std::vector<std::string> diffs;
  json_diff_paths(cur, stored, "", diffs);
  std::string msg = what + ": config mismatch at";
  for (const auto& d : diffs) msg += " " + d;
  throw ConfigError(msg);
}

// ---------------------------------------------------------------------------
// stage-1 training (attention pool + decoder; embedder frozen unless toy-unfrozen)
// ---------------------------------------------------------------------------

struct TrainResult {
  std::size_t steps = 0;
  double final_train_loss = 0.0;
  double best_val_loss = 0.0;
  double teacher_forced_accuracy = 0.0;  // stage 1 only
  fs::path final_checkpoint;
  fs::path best_checkpoint;
  fs::path log_csv;
};

namespace detail {

template <class T>
Tensor<T> weighted_batch_loss(std::vector<std::pair<Tensor<T>, std::size_t>>& parts) {
  std::size_t total = 0;
  for (const auto& [loss, n] : parts) total += n;
  Tensor<T> acc;
  for (auto& [loss, n] : parts) {
    Tensor<T> term = scale(loss, static_cast<T>(n) / static_cast<T>(total));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

}  // namespace detail

inline TrainResult run_train_decoder(const fs::path& data_dir, const fs::path& out_dir,
                                     const Config& cfg, const fs::path& resume_path = "",
                                     const std::string& embeddings_path = "") {
  using T = float;
  const auto dataset = load_prepared(data_dir);
  if (dataset.empty()) throw PipelineError("no kept proteins in " + data_dir.string());
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    (is_validation_id(dataset[i].id, cfg.data.val_fraction) ? val_idx : train_idx).push_back(i);
  if (train_idx.empty()) train_idx = val_idx;  // tiny sets: train on everything

  Stage1Model<T> model = Stage1Model<T>::init(cfg, embeddings_path);
  auto trainable = model.trainable_params();
  auto values = values_of(trainable);
  AdamW<T> opt(values, static_cast<T>(cfg.optimizer.lr),
               static_cast<T>(cfg.optimizer.weight_decay));

  std::size_t start_step = 0;
  if (!resume_path.empty()) {
    const Checkpoint ck = Checkpoint::load(resume_path.string());
    require_config_match(cfg, ck.config_json, "resume");
    auto all = model.all_params();
    load_params(ck, all);
    start_step = load_trainer_state(ck, trainable, opt);
  }

  // the frozen embedder makes per-protein embeddings cacheable
  const bool frozen_embedder = cfg.model.embedder != "toy" || cfg.model.freeze_embedder;
  std::vector<Tensor<T>> z_cache(dataset.size());
  if (frozen_embedder) {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < dataset.size(); ++i) z_cache[i] = model.embed(dataset[i]);
  }
  auto latent_of = [&](std::size_t i) {
    return frozen_embedder ? model.pool.pool(z_cache[i], dataset[i].graph.segments)
                           : model.latent(dataset[i]);
  };

  auto mean_split_loss = [&](const std::vector<std::size_t>& split) {
    NoGradGuard no_grad;
    double total_loss = 0;
    std::size_t total_tokens = 0;
    for (std::size_t i : split) {
      const auto sl =
          decoder_sequence_loss(model.decoder, dataset[i].aa_seq, latent_of(i), cfg.model.max_len);
      total_loss += sl.loss.item() * static_cast<double>(sl.n_tokens);
      total_tokens += sl.n_tokens;
    }
    return total_tokens ? total_loss / static_cast<double>(total_tokens) : 0.0;
  };

  fs::create_directories(out_dir);
  TrainResult result;
  result.log_csv = out_dir / "train_decoder_log.csv";
  std::ofstream csv(result.log_csv,
                    start_step == 0 ? std::ios::trunc : std::ios::app);
  if (start_step == 0) csv << "step,split,loss\n";

  auto save_checkpoint = [&](const fs::path& path, std::size_t step) {
    Checkpoint ck;
    ck.config_json = config_canonical(cfg);
    auto all = model.all_params();
    save_params(ck, all);
    save_trainer_state(ck, trainable, opt, step, 1);
    ck.save(path.string());
  };

  result.final_checkpoint = out_dir / "stage1_final.ckpt";
  result.best_checkpoint = out_dir / "stage1_best.ckpt";
  double best_val = std::numeric_limits<double>::max();
  double last_loss = 0;
  for (std::size_t step = start_step; step < cfg.training.decoder_steps; ++step) {
    Rng batch_rng(hash_mix(hash_mix(cfg.seed, "stage1-batch"), step));
    std::vector<std::pair<Tensor<T>, std::size_t>> parts;
    for (std::size_t b = 0; b < cfg.training.batch_size; ++b) {
      const std::size_t i = train_idx[batch_rng.uniform_int(0, train_idx.size() - 1)];
      auto sl =
          decoder_sequence_loss(model.decoder, dataset[i].aa_seq, latent_of(i), cfg.model.max_len);
      parts.emplace_back(sl.loss, sl.n_tokens);
    }
    Tensor<T> loss = detail::weighted_batch_loss(parts);
    opt.zero_grad();
    loss.backward();
    ensure_grads(values);
    opt.step();
    last_loss = loss.item();

    if (step % cfg.training.log_every == 0 || step + 1 == cfg.training.decoder_steps) {
      csv << step << ",train," << last_loss << "\n";
      const auto& eval_split = val_idx.empty() ? train_idx : val_idx;
      const double vloss = mean_split_loss(eval_split);
      csv << step << "," << (val_idx.empty() ? "train-eval" : "val") << "," << vloss << "\n";
      if (vloss < best_val) {
        best_val = vloss;
        save_checkpoint(result.best_checkpoint, step + 1);
      }
    }
  }
  csv.close();
  save_checkpoint(result.final_checkpoint, cfg.training.decoder_steps);

  {
    NoGradGuard no_grad;
    double acc = 0;
    for (std::size_t i : train_idx)
      acc += teacher_forced_accuracy(model.decoder, dataset[i].aa_seq, latent_of(i));
    result.teacher_forced_accuracy = acc / static_cast<double>(train_idx.size());
  }
  result.steps = cfg.training.decoder_steps;
  result.final_train_loss = last_loss;
  result.best_val_loss = best_val;
  return result;
}

// ---------------------------------------------------------------------------
// stage-2 training (EGNN denoiser over frozen-encoder latents)
// ---------------------------------------------------------------------------

inline TrainResult run_train_diffusion(const fs::path& data_dir, const fs::path& stage1_path,
                                       const fs::path& out_dir, const Config& cfg,
                                       const fs::path& resume_path = "",
                                       const std::string& embeddings_path = "") {
  using T = float;
  const auto dataset = load_prepared(data_dir);
  if (dataset.empty()) throw PipelineError("no kept proteins in " + data_dir.string());

  const Checkpoint stage1_ck = Checkpoint::load(stage1_path.string());
  require_config_match(cfg, stage1_ck.config_json, "stage1 checkpoint");
  Stage1Model<T> encoder_model = Stage1Model<T>::init(cfg, embeddings_path);
  {
    auto all = encoder_model.all_params();
    load_params(stage1_ck, all);
  }

  // cache every latent once; the encoder stays frozen throughout stage 2
  std::vector<Tensor<T>> latents(dataset.size());
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < dataset.size(); ++i)
      latents[i] = encoder_model.latent(dataset[i]);
  }
  fs::create_directories(out_dir);
  {
    Checkpoint cache;
    cache.config_json = config_canonical(cfg);
    for (std::size_t i = 0; i < dataset.size(); ++i)
      cache.add_tensor(dataset[i].id, latents[i]);
    cache.save((out_dir / "latents.ckpt").string());
  }

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    (is_validation_id(dataset[i].id, cfg.data.val_fraction) ? val_idx : train_idx).push_back(i);
  if (train_idx.empty()) train_idx = val_idx;

  std::vector<Tensor<T>> train_latents;
  for (std::size_t i : train_idx) train_latents.push_back(latents[i]);
  const LatentStats stats = compute_latent_stats(train_latents);
  std::vector<Tensor<T>> std_latents(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    std_latents[i] = standardize(latents[i], stats);

  Rng init_rng(hash_mix(cfg.seed, "stage2-init"));
  EgnnDenoiser<T> denoiser(cfg.model.d, cfg.model.egnn_hidden, cfg.model.egnn_message,
                           cfg.model.egnn_layers, cfg.model.time_dim, init_rng,
                           static_cast<T>(cfg.model.coord_scale));
  const NoiseSchedule schedule = make_schedule(cfg.schedule.kind, cfg.schedule.steps);
  auto named = denoiser.named_params();
  auto values = values_of(named);
  AdamW<T> opt(values, static_cast<T>(cfg.optimizer.lr),
               static_cast<T>(cfg.optimizer.weight_decay));

  std::size_t start_step = 0;
  if (!resume_path.empty()) {
    const Checkpoint ck = Checkpoint::load(resume_path.string());
    require_config_match(cfg, ck.config_json, "resume");
    load_params(ck, named);
    start_step = load_trainer_state(ck, named, opt);
  }

  auto net = [&](const Tensor<T>& ht, std::size_t t, const SSGraph& g) {
    return denoiser.denoise(ht, t, g);
  };

  auto split_loss = [&](const std::vector<std::size_t>& split) {
    NoGradGuard no_grad;
    double total = 0;
    for (std::size_t i : split) {
      Rng rng(hash_mix(hash_mix(cfg.seed, "stage2-eval"), i));
      total += training_loss(net, std_latents[i], dataset[i].graph, schedule, rng).item();
    }
    return total / static_cast<double>(split.size());
  };

  TrainResult result;
  result.log_csv = out_dir / "train_diffusion_log.csv";
  std::ofstream csv(result.log_csv, start_step == 0 ? std::ios::trunc : std::ios::app);
  if (start_step == 0) csv << "step,split,loss\n";

  auto save_checkpoint = [&](const fs::path& path, std::size_t step) {
    Checkpoint ck;
    ck.config_json = config_canonical(cfg);
    save_params(ck, named);
    NamedArray mean_arr, std_arr;
    mean_arr.dims = {stats.mean.size()};
    std_arr.dims = {stats.stddev.size()};
    for (double v : stats.mean) mean_arr.data.push_back(static_cast<float>(v));
    for (double v : stats.stddev) std_arr.data.push_back(static_cast<float>(v));
    ck.add("latent.mean", std::move(mean_arr));
    ck.add("latent.std", std::move(std_arr));
    save_trainer_state(ck, named, opt, step, 2);
    ck.save(path.string());
  };

  result.final_checkpoint = out_dir / "stage2_final.ckpt";
  result.best_checkpoint = out_dir / "stage2_best.ckpt";
  double best_val = std::numeric_limits<double>::max();
  double last_loss = 0;
  for (std::size_t step = start_step; step < cfg.training.diffusion_steps; ++step) {
    Rng step_rng(hash_mix(hash_mix(cfg.seed, "stage2-batch"), step));
    std::vector<std::pair<Tensor<T>, std::size_t>> parts;
    for (std::size_t b = 0; b < cfg.training.batch_size; ++b) {
      const std::size_t i = train_idx[step_rng.uniform_int(0, train_idx.size() - 1)];
      parts.emplace_back(training_loss(net, std_latents[i], dataset[i].graph, schedule, step_rng),
                         std::size_t{1});
    }
    Tensor<T> loss = detail::weighted_batch_loss(parts);
    opt.zero_grad();
    loss.backward();
    ensure_grads(values);
    opt.step();
    last_loss = loss.item();

    if (step % cfg.training.log_every == 0 || step + 1 == cfg.training.diffusion_steps) {
      csv << step << ",train," << last_loss << "\n";
      const auto& eval_split = val_idx.empty() ? train_idx : val_idx;
      const double vloss = split_loss(eval_split);
      csv << step << "," << (val_idx.empty() ? "train-eval" : "val") << "," << vloss << "\n";
      if (vloss < best_val) {
        best_val = vloss;
        save_checkpoint(result.best_checkpoint, step + 1);
      }
    }
  }
  csv.close();
  save_checkpoint(result.final_checkpoint, cfg.training.diffusion_steps);
  result.steps = cfg.training.diffusion_steps;
  result.final_train_loss = last_loss;
  result.best_val_loss = best_val;
  return result;
}

// ---------------------------------------------------------------------------
// generation: graphs + checkpoints -> JSON-lines sequences
// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::size_t n_samples = 0;  // 0 = config value
  double temperature = -1.0;  // <0 = config value
  long top_k = -1;            // <0 = config value
  std::size_t max_len = 0;    // 0 = config value
};

struct GenerationRecord {
  std::string template_id;
  std::size_t sample_index = 0;
  std::string sequence;
  bool truncated = false;
  std::uint64_t seed = 0;
};

inline std::vector<GenerationRecord> run_generate(const std::vector<fs::path>& graph_files,
                                                  const fs::path& stage1_path,
                                                  const fs::path& stage2_path,
                                                  const fs::path& out_file, const Config& cfg,
                                                  const GenerateOptions& opts = {}) {
  using T = float;
  const Checkpoint stage1_ck = Checkpoint::load(stage1_path.string());
  require_config_match(cfg, stage1_ck.config_json, "stage1 checkpoint");
  Stage1Model<T> stage1 = Stage1Model<T>::init(cfg, "");
  {
    // generation touches only the decoder; import-mode runs have no toy
    // embedder entries, so load the decoder and pool selectively
    auto decoder_params = stage1.decoder.named_params();
    load_params(stage1_ck, decoder_params);
    auto pool_params = stage1.pool.named_params();
    load_params(stage1_ck, pool_params);
    if (stage1.toy && stage1_ck.has("embedder.tokens")) {
      auto emb_params = stage1.toy->named_params();
      load_params(stage1_ck, emb_params);
    }
  }

  const Checkpoint stage2_ck = Checkpoint::load(stage2_path.string());
  require_config_match(cfg, stage2_ck.config_json, "stage2 checkpoint");
  Rng dummy_rng(0);
  EgnnDenoiser<T> denoiser(cfg.model.d, cfg.model.egnn_hidden, cfg.model.egnn_message,
                           cfg.model.egnn_layers, cfg.model.time_dim, dummy_rng,
                           static_cast<T>(cfg.model.coord_scale));
  auto denoiser_params = denoiser.named_params();
  load_params(stage2_ck, denoiser_params);
  LatentStats stats;
  for (float v : stage2_ck.get("latent.mean").data) stats.mean.push_back(v);
  for (float v : stage2_ck.get("latent.std").data) stats.stddev.push_back(v);

  const NoiseSchedule schedule = make_schedule(cfg.schedule.kind, cfg.schedule.steps);
  const std::size_t n_samples =
      opts.n_samples ? opts.n_samples : cfg.generation.n_samples;
  const double temperature =
      opts.temperature >= 0 ? opts.temperature : cfg.generation.temperature;
  const std::size_t top_k =
      opts.top_k >= 0 ? static_cast<std::size_t>(opts.top_k) : cfg.generation.top_k;
  const std::size_t max_len = opts.max_len ? opts.max_len : cfg.model.max_len;

  std::vector<std::vector<GenerationRecord>> per_template(graph_files.size());
  std::vector<std::string> failures(graph_files.size());
  parallel_for(graph_files.size(), worker_count(cfg.deterministic), [&](std::size_t gi) {
    try {
      const SSGraph graph =
          graph_from_json(nlohmann::json::parse(read_file(graph_files[gi])));
      auto net = [&](const Tensor<T>& ht, std::size_t t, const SSGraph& g) {
        return denoiser.denoise(ht, t, g);
      };
      for (std::size_t s = 0; s < n_samples; ++s) {
        const std::uint64_t sample_seed = hash_mix(hash_mix(cfg.seed, graph.id), s);
        Rng rng(sample_seed);
        Tensor<T> latent_std = p_sample<T>(graph, schedule, net, rng, cfg.model.d);
        Tensor<T> latent = destandardize(latent_std, stats);
        GenerationConfig gen_cfg;
        gen_cfg.max_len = max_len;
        gen_cfg.temperature = temperature;
        gen_cfg.top_k = top_k;
        gen_cfg.seed = rng.next_u64();
        const GeneratedSequence gen = stage1.decoder.generate(latent, gen_cfg);
        per_template[gi].push_back({graph.id, s, gen.sequence, gen.truncated, sample_seed});
      }
    } catch (const std::exception& e) {
      failures[gi] = e.what();
    }
  });

  std::vector<GenerationRecord> records;
  std::string jsonl;
  for (std::size_t gi = 0; gi < graph_files.size(); ++gi) {
    if (!failures[gi].empty()) {
      std::fprintf(stderr, "generate: skipping %s: %s\n", graph_files[gi].string().c_str(),
                   failures[gi].c_str());
      continue;
    }
    for (const auto& r : per_template[gi]) {
      nlohmann::json j;
      j["template_id"] = r.template_id;
      j["sample_index"] = r.sample_index;
      j["sequence"] = r.sequence;
      j["truncated"] = r.truncated;
      j["seed"] = r.seed;
      jsonl += j.dump() + "\n";
      records.push_back(r);
    }
  }
  write_file(out_file, jsonl);
  return records;
}

// ---------------------------------------------------------------------------
// evaluation: generated sequences vs conditions -> report
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string mode = "self-consistency";  // or "sidecar"
  fs::path ss_dir;                        // sidecar mode: <template>_s<index>.ss
};

// Self-consistency SS string: the condition labels stretched onto the
// generated length by nearest-neighbor resampling. Assumes every generated
// residue locally adopts the conditioned class; length and order mismatches
// are all it can penalize, so scores are an upper bound.
inline std::string resample_ss(const std::string& cond_ss, std::size_t gen_len) {
  std::string out(gen_len, 'C');
  for (std::size_t i = 0; i < gen_len; ++i)
    out[i] = cond_ss[i * cond_ss.size() / gen_len];
  return out;
}

namespace detail {

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.stddev += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(m.stddev / static_cast<double>(xs.size()));
  return m;
}

}  // namespace detail

inline nlohmann::json run_evaluate(const fs::path& generated_jsonl, const fs::path& graphs_dir,
                                   const Config& cfg, const EvaluateOptions& opts = {}) {
  if (opts.mode != "self-consistency" && opts.mode != "sidecar")
    throw ConfigError("evaluate mode must be 'self-consistency' or 'sidecar'");

  std::map<std::string, std::vector<GenerationRecord>> by_template;
  {
    std::istringstream in(read_file(generated_jsonl));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      GenerationRecord r;
      r.template_id = j.at("template_id").get<std::string>();
      r.sample_index = j.at("sample_index").get<std::size_t>();
      r.sequence = j.at("sequence").get<std::string>();
      r.truncated = j.value("truncated", false);
      by_template[r.template_id].push_back(std::move(r));
    }
  }

  nlohmann::json templates = nlohmann::json::array();
  std::vector<double> agg_seq_id, agg_id, agg_id_max, agg_mse;
  std::vector<double> agg_id_nl, agg_id_max_nl, agg_mse_nl;
  std::size_t dropped_total = 0;

  for (const auto& [template_id, recs] : by_template) {
    const fs::path graph_path = graphs_dir / (template_id + ".json");
    const SSGraph graph = graph_from_json(nlohmann::json::parse(read_file(graph_path)));
    const std::string cond_ss = graph.ss_string();

    std::vector<std::string> sequences;
    std::vector<double> ids, ids_nl, mses, mses_nl;
    std::size_t dropped = 0, flagged_nl = 0;
    for (const auto& r : recs) {
      std::string gen_ss;
      if (opts.mode == "self-consistency") {
        if (r.sequence.empty()) {
          ++dropped;
          continue;
        }
        gen_ss = resample_ss(cond_ss, r.sequence.size());
      } else {
        const fs::path sidecar =
            opts.ss_dir / (template_id + "_s" + std::to_string(r.sample_index) + ".ss");
        if (!fs::exists(sidecar)) {
          ++dropped;
          continue;
        }
        std::string line = read_file(sidecar);
        while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
        if (line.size() != r.sequence.size()) {
          ++dropped;
          continue;
        }
        gen_ss.reserve(line.size());
        for (char c : line) gen_ss.push_back(collapse_ss_class(c));
      }
      sequences.push_back(r.sequence);
      ids.push_back(ss_identity(cond_ss, gen_ss, false).percent);
      const auto id_nl = ss_identity(cond_ss, gen_ss, true);
      ids_nl.push_back(id_nl.percent);
      mses.push_back(composition_mse(ss_composition(cond_ss), ss_composition(gen_ss)));
      const auto mse_nl = composition_mse_no_loops(cond_ss, gen_ss);
      mses_nl.push_back(mse_nl.value);
      flagged_nl += id_nl.empty_after_filter || mse_nl.empty_after_filter;
    }
    dropped_total += dropped;

    nlohmann::json t;
    t["template_id"] = template_id;
    t["n_samples_used"] = sequences.size();
    t["n_dropped"] = dropped;
    t["n_flagged_no_loop"] = flagged_nl;
    if (sequences.size() >= 2) {
      const double seq_id = diversity_mean_pairwise_identity(sequences);
      t["seq_id"] = seq_id;
      agg_seq_id.push_back(seq_id);
    }
    if (!ids.empty()) {
      const auto m = detail::moments(ids);
      const auto m_nl = detail::moments(ids_nl);
      t["id_mean"] = m.mean;
      t["id_max"] = *std::max_element(ids.begin(), ids.end());
      t["id_mean_no_loop"] = m_nl.mean;
      t["id_max_no_loop"] = *std::max_element(ids_nl.begin(), ids_nl.end());
      t["mse_ss_composition"] = detail::moments(mses).mean;
      t["mse_ss_composition_no_loop"] = detail::moments(mses_nl).mean;
      agg_id.push_back(m.mean);
      agg_id_max.push_back(t["id_max"].get<double>());
      agg_mse.push_back(t["mse_ss_composition"].get<double>());
      agg_id_nl.push_back(m_nl.mean);
      agg_id_max_nl.push_back(t["id_max_no_loop"].get<double>());
      agg_mse_nl.push_back(t["mse_ss_composition_no_loop"].get<double>());
    }
    templates.push_back(t);
  }

  auto agg = [&](const std::vector<double>& xs) {
    const auto m = detail::moments(xs);
    return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}, {"n", xs.size()}};
  };
  nlohmann::json report;
  report["mode"] = opts.mode;
  report["config"] = config_to_json(cfg);
  report["config_hash"] = config_hash(cfg);
  report["samples_dropped"] = dropped_total;
  report["templates"] = templates;
  report["aggregate"] = {{"seq_id", agg(agg_seq_id)},
                         {"id", agg(agg_id)},
                         {"id_max", agg(agg_id_max)},
                         {"mse_ss_composition", agg(agg_mse)},
                         {"id_no_loop", agg(agg_id_nl)},
                         {"id_max_no_loop", agg(agg_id_max_nl)},
                         {"mse_ss_composition_no_loop", agg(agg_mse_nl)}};
  return report;
}

}  // namespace cpdss
