#pragma once

// Run configuration file: a single JSON object; every CLI flag overrides the
// matching key.

#include <fstream>
#include <string>

#include "json.hpp"
#include "turner/errors.hpp"
#include "turner/pipeline.hpp"

namespace turner {

struct RunPaths {
  std::string base_model;
  std::string fusion_model;
  std::string kb_dir;
  std::string cache_file;
};

struct AppConfig {
  RunConfig run;
  RunPaths paths;
};

inline SamplingMethod parse_method(const std::string& s) {
  if (s == "mc_dropout" || s == "mc") return SamplingMethod::kMcDropout;
  if (s == "topk") return SamplingMethod::kTopK;
  throw DataError("unknown sampling method: " + s);
}

inline RetrievalMode parse_retrieval(const std::string& s) {
  if (s == "kb") return RetrievalMode::kKb;
  if (s == "cache") return RetrievalMode::kCache;
  if (s == "both") return RetrievalMode::kBoth;
  throw DataError("unknown retrieval mode: " + s);
}

inline AppConfig config_from_json(const nlohmann::json& j) {
  AppConfig cfg;
  RunConfig& run = cfg.run;
  try {
    run.entity_types = j.value("entity_types", run.entity_types);
    if (j.contains("method")) run.method = parse_method(j["method"].get<std::string>());
    // Shipped defaults differ per method: 8 candidates for MC Dropout, 4 for top-K.
    if (run.method == SamplingMethod::kTopK) run.k = 4;
    run.k = j.value("k", run.k);
    run.dropout = j.value("dropout", run.dropout);
    run.alpha = j.value("alpha", run.alpha);
    if (j.contains("retrieval")) run.retrieval = parse_retrieval(j["retrieval"].get<std::string>());
    run.folds = j.value("folds", run.folds);
    run.checkpoints = j.value("checkpoints", run.checkpoints);
    run.overlap_threshold = j.value("overlap_threshold", run.overlap_threshold);
    run.seed = j.value("seed", run.seed);
    run.top_docs = j.value("top_docs", run.top_docs);
    run.max_seq_len_base = j.value("max_seq_len_base", run.max_seq_len_base);
    run.max_seq_len_fusion = j.value("max_seq_len_fusion", run.max_seq_len_fusion);
    run.jobs = j.value("jobs", run.jobs);
    if (j.contains("tagger")) {
      const auto& t = j["tagger"];
      run.tagger.d_emb = t.value("d_emb", run.tagger.d_emb);
      run.tagger.d_hid = t.value("d_hid", run.tagger.d_hid);
      run.tagger.window = t.value("window", run.tagger.window);
      run.tagger.dropout = t.value("dropout", run.tagger.dropout);
      run.tagger.lr = t.value("lr", run.tagger.lr);
      run.tagger.epochs = t.value("epochs", run.tagger.epochs);
      run.tagger.batch = t.value("batch", run.tagger.batch);
    }
    if (j.contains("fusion")) {
      const auto& f = j["fusion"];
      run.fusion.d_model = f.value("d_model", run.fusion.d_model);
      run.fusion.layers = f.value("layers", run.fusion.layers);
      run.fusion.d_ff = f.value("d_ff", run.fusion.d_ff);
      run.fusion.lr = f.value("lr", run.fusion.lr);
      run.fusion.epochs = f.value("epochs", run.fusion.epochs);
      run.fusion.batch = f.value("batch", run.fusion.batch);
    }
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      cfg.paths.base_model = p.value("base_model", cfg.paths.base_model);
      cfg.paths.fusion_model = p.value("fusion_model", cfg.paths.fusion_model);
      cfg.paths.kb_dir = p.value("kb", cfg.paths.kb_dir);
      cfg.paths.cache_file = p.value("cache", cfg.paths.cache_file);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  return cfg;
}

/// Derived fields every consumer expects to agree: seeds flow from the run
/// seed, alpha and max lengths into the sub-configs.
inline void finalize_config(AppConfig& cfg) {
  cfg.run.tagger.seed = cfg.run.seed;
  cfg.run.fusion.seed = mix_seed(cfg.run.seed, 0xFC5E00ULL);
  cfg.run.fusion.alpha = cfg.run.alpha;
  cfg.run.fusion.max_seq_len = cfg.run.max_seq_len_fusion;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("config file is not valid JSON: " + path);
  return config_from_json(j);
}

}  // namespace turner
