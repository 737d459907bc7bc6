#pragma once

// Hyperparameter sweep over {dropout, k, alpha}: the base tagger and the
// jackknife fold models are shared across grid points (they do not depend on
// the swept parameters); stage-two data and the fusion model are rebuilt per
// point, then the full pipeline is evaluated on the test corpus.

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "turner/config.hpp"
#include "turner/corpus.hpp"
#include "turner/evalkit.hpp"
#include "turner/fusion.hpp"
#include "turner/pipeline.hpp"
#include "turner/tagger.hpp"

namespace turner {

/// Grid JSON: {"dropout":[..],"k":[..],"alpha":[..]}; absent axes fall back
/// to the config value. The grid is the cross product of the lists.
inline std::vector<SweepPoint> parse_grid(const nlohmann::json& j, const RunConfig& defaults) {
  const auto doubles = [&j](const char* key, double fallback) {
    std::vector<double> v{fallback};
    if (j.contains(key)) v = j.at(key).get<std::vector<double>>();
    if (v.empty()) throw DataError(std::string("grid: empty list for ") + key);
    return v;
  };
  std::vector<int> ks{defaults.k};
  if (j.contains("k")) ks = j.at("k").get<std::vector<int>>();
  if (ks.empty()) throw DataError("grid: empty list for k");
  const auto dropouts = doubles("dropout", defaults.dropout);
  const auto alphas = doubles("alpha", defaults.alpha);

  std::vector<SweepPoint> grid;
  for (const double p : dropouts)
    for (const int k : ks)
      for (const double a : alphas) grid.push_back({p, k, a});
  return grid;
}

inline std::vector<SweepRow> run_sweep(const AppConfig& cfg, const std::string& grid_path,
                                       const std::string& train_path, const std::string& dev_path,
                                       const std::string& test_path) {
  cfg.run.validate();
  const LabelScheme scheme(cfg.run.entity_types);

  std::ifstream grid_in(grid_path, std::ios::binary);
  if (!grid_in) throw DataError("cannot open grid file: " + grid_path);
  nlohmann::json grid_json = nlohmann::json::parse(grid_in, nullptr, false);
  if (grid_json.is_discarded()) throw DataError("grid file is not valid JSON: " + grid_path);
  const auto grid = parse_grid(grid_json, cfg.run);

  const auto train = read_corpus(train_path, scheme, cfg.run.max_seq_len_base);
  std::vector<Example> dev;
  if (!dev_path.empty()) dev = read_corpus(dev_path, scheme, cfg.run.max_seq_len_base);
  const auto test = read_corpus(test_path, scheme, cfg.run.max_seq_len_base);

  KnowledgeBase kb;
  SearchCache cache;
  KnowledgeSources sources;
  if (!cfg.paths.kb_dir.empty()) {
    kb = load_kb(cfg.paths.kb_dir);
    sources.kb = &kb;
  }
  if (!cfg.paths.cache_file.empty()) {
    cache = read_search_cache(cfg.paths.cache_file);
    sources.cache = &cache;
  }

  const TaggerTrainResult base = train_tagger(train, dev, cfg.run.tagger, scheme);
  const JackknifeFolds folds = train_folds(train, cfg.run);

  std::vector<Sentence> test_sentences;
  std::vector<LabelSequence> test_gold;
  for (const auto& ex : test) {
    test_sentences.push_back(ex.x);
    test_gold.push_back(ex.gold);
  }

  return sweep(grid, [&](const SweepPoint& point) {
    RunConfig run = cfg.run;
    run.dropout = point.dropout;
    run.k = point.k;
    run.alpha = point.alpha;
    run.fusion.alpha = point.alpha;

    const auto records = sample_stage2(train, folds, sources, run);
    const auto samples = fused_samples_from_records(records, scheme, run.max_seq_len_fusion);
    std::vector<FusedSample> dev_samples;
    if (!dev.empty()) {
      const auto dev_records = gen_records_with_model(dev, base.model, sources, run);
      dev_samples = fused_samples_from_records(dev_records, scheme, run.max_seq_len_fusion);
    }
    const FusionModel fusion = samples.empty()
                                   ? init_fusion(scheme, {}, run.fusion)
                                   : train_fusion(samples, dev_samples, run.fusion, scheme);
    const auto traces = predict_corpus(test_sentences, base.model, fusion, sources, run);
    return report_from_traces(traces, test_gold, scheme);
  });
}

/// Aligned plain-text table mirroring the sweep layout: one row per grid
/// point with SAR, VSR and F1.
inline std::string render_sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(9) << "dropout" << std::setw(5) << "k" << std::setw(8) << "alpha"
      << std::right << std::setw(9) << "SAR" << std::setw(9) << "VSR" << std::setw(9) << "F1"
      << '\n';
  for (const auto& row : rows) {
    out << std::left << std::fixed << std::setprecision(3) << std::setw(9) << row.point.dropout
        << std::setw(5) << row.point.k << std::setw(8) << row.point.alpha << std::right
        << std::setprecision(4) << std::setw(9) << row.report.sar.value_or(0.0) << std::setw(9)
        << row.report.vsr.value_or(0.0) << std::setw(9) << row.report.entity.f1 << '\n';
  }
  return out.str();
}

}  // namespace turner
