#pragma once

// End-to-end orchestration: stage-one sampling, per-component retrieval,
// stage-two re-prediction, and generation of stage-two training data via
// N-fold jackknifing with checkpoint augmentation.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "turner/corpus.hpp"
#include "turner/decoder.hpp"
#include "turner/errors.hpp"
#include "turner/evalkit.hpp"
#include "turner/fusion.hpp"
#include "turner/retrieval.hpp"
#include "turner/rng.hpp"
#include "turner/tagger.hpp"
#include "turner/uncertainty.hpp"

namespace turner {

enum class RetrievalMode { kKb, kCache, kBoth };

struct RunConfig {
  std::vector<std::string> entity_types;
  SamplingMethod method = SamplingMethod::kMcDropout;
  int k = 8;               // candidates: 8 for MC Dropout, 4 for top-K
  double dropout = 0.1;    // sampling-time dropout rate
  double alpha = 0.1;
  RetrievalMode retrieval = RetrievalMode::kBoth;
  int folds = 5;           // N
  int checkpoints = 3;     // E, epoch-end checkpoints used for augmentation
  double overlap_threshold = 0.5;  // theta, Jaccard
  std::uint64_t seed = 1;
  int top_docs = kDefaultTopDocs;
  int max_seq_len_base = 128;
  int max_seq_len_fusion = 512;
  int jobs = 1;
  TaggerConfig tagger;
  FusionConfig fusion;

  void validate() const {
    if (entity_types.empty()) throw MismatchError("config: entity_types must be nonempty");
    if (folds < 2) throw DataError("config: folds must be >= 2");
    if (k < 1) throw DataError("config: k must be >= 1");
    if (checkpoints < 1) throw DataError("config: checkpoints must be >= 1");
    if (overlap_threshold <= 0.0 || overlap_threshold > 1.0)
      throw DataError("config: overlap_threshold must be in (0, 1]");
    if (alpha < 0.0 || alpha > 1.0) throw DataError("config: alpha must be in [0, 1]");
    if (dropout < 0.0 || dropout >= 1.0) throw DataError("config: dropout must be in [0, 1)");
  }
};

/// Jaccard overlap of two inclusive index ranges.
inline double overlap_ratio(int a_start, int a_end, int b_start, int b_end) {
  if (a_start > a_end || b_start > b_end) throw DataError("overlap_ratio: invalid span");
  const int inter = std::min(a_end, b_end) - std::max(a_start, b_start) + 1;
  if (inter <= 0) return 0.0;
  const int uni = (a_end - a_start + 1) + (b_end - b_start + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct KnowledgeSources {
  const KnowledgeBase* kb = nullptr;
  const SearchCache* cache = nullptr;
};

/// Knowledge for one component query. A miss yields empty text, never an
/// error. Mode "both" consults the cache first and falls back to BM25.
inline KnowledgeText retrieve_for(const std::u32string& query, RetrievalMode mode,
                                  const KnowledgeSources& sources, int top_docs) {
  const std::string q = encode_utf8(query);
  if (mode == RetrievalMode::kCache || mode == RetrievalMode::kBoth) {
    if (sources.cache != nullptr) {
      const auto items = sources.cache->lookup(q);
      if (!items.empty()) return assemble_knowledge(items);
    }
    if (mode == RetrievalMode::kCache) return {};
  }
  if (sources.kb != nullptr && sources.kb->size() > 0)
    return assemble_knowledge(sources.kb->query(q, top_docs));
  return {};
}

/// Everything stage one and two produced for one sentence; the final labels
/// plus the intermediates the metrics need.
struct PredictTrace {
  ProvisionalResult provisional;
  CandidateSet candidates;
  std::vector<UncertainComponent> components;
  LabelSequence final;
  bool fused = false;
};

namespace detail {

inline std::pair<ProvisionalResult, CandidateSet> run_sampling(const TaggerModel& base,
                                                               const Sentence& x,
                                                               const RunConfig& cfg,
                                                               std::uint64_t sample_seed) {
  if (cfg.method == SamplingMethod::kMcDropout) {
    TaggerModel noisy = base;  // sampling-time dropout rate comes from the run config
    noisy.dropout = cfg.dropout;
    return mc_sample(noisy, x, cfg.k, sample_seed);
  }
  return topk_sample(base, x, cfg.k);
}

}  // namespace detail

/// Full two-stage prediction for one sentence. No uncertain component means
/// stage two is skipped and the provisional result is final.
inline PredictTrace predict_traced(const Sentence& x, const TaggerModel& base,
                                   const FusionModel& fusion, const KnowledgeSources& sources,
                                   const RunConfig& cfg, std::uint64_t sample_seed) {
  PredictTrace trace;
  auto [prov, cands] = detail::run_sampling(base, x, cfg, sample_seed);
  trace.components = merge_components(uncertain_entities(prov, cands, base.scheme), x);
  trace.provisional = std::move(prov);
  trace.candidates = std::move(cands);
  if (trace.components.empty()) {
    trace.final = trace.provisional.l_p;
    return trace;
  }
  std::vector<std::pair<std::vector<UncertainComponent>, KnowledgeText>> groups;
  groups.reserve(trace.components.size());
  for (const auto& c : trace.components)
    groups.emplace_back(std::vector<UncertainComponent>{c},
                        retrieve_for(c.text, cfg.retrieval, sources, cfg.top_docs));
  trace.final = fuse_predict(fusion, x, trace.provisional.l_p, groups);
  trace.fused = true;
  return trace;
}

inline LabelSequence predict(const Sentence& x, const TaggerModel& base, const FusionModel& fusion,
                             const KnowledgeSources& sources, const RunConfig& cfg) {
  return predict_traced(x, base, fusion, sources, cfg, mix_seed(cfg.seed, 0x9AB1E0ULL)).final;
}

namespace detail {

template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  if (jobs <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int workers = std::min<int>(jobs, static_cast<int>(count));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    threads.emplace_back([&fn, w, workers, count] {
      for (std::size_t i = static_cast<std::size_t>(w); i < count;
           i += static_cast<std::size_t>(workers))
        fn(i);
    });
  for (auto& t : threads) t.join();
}

}  // namespace detail

/// Stage-one sampling for one corpus sentence; the seed stream matches
/// predict_corpus, so `sample` output lines up with `predict` output.
inline std::pair<ProvisionalResult, CandidateSet> sample_sentence(const TaggerModel& base,
                                                                  const Sentence& x,
                                                                  const RunConfig& cfg,
                                                                  std::size_t corpus_index) {
  return detail::run_sampling(base, x, cfg, mix_seed(cfg.seed, 0x94ED1C7ULL, corpus_index));
}

/// Per-sentence traces over a corpus; seeds derive from (config seed,
/// sentence index), so results are independent of worker scheduling.
inline std::vector<PredictTrace> predict_corpus(const std::vector<Sentence>& sentences,
                                                const TaggerModel& base, const FusionModel& fusion,
                                                const KnowledgeSources& sources,
                                                const RunConfig& cfg) {
  std::vector<PredictTrace> traces(sentences.size());
  detail::parallel_for(sentences.size(), cfg.jobs, [&](std::size_t i) {
    traces[i] = predict_traced(sentences[i], base, fusion, sources, cfg,
                               mix_seed(cfg.seed, 0x94ED1C7ULL, i));
  });
  return traces;
}

/// One stage-two training record: a sentence whose provisional labels come
/// from a fold model never trained on it, with the uncertain components kept
/// after checkpoint augmentation and their retrieved knowledge.
struct Stage2Record {
  Sentence x;
  LabelSequence gold;
  LabelSequence provisional;
  std::vector<UncertainComponent> components;
  std::vector<KnowledgeText> knowledge;  // parallel to components
};

/// Fold assignment (deterministic shuffle, contiguous ranges) plus the tagger
/// trained on each fold's complement with its augmentation checkpoints.
struct JackknifeFolds {
  std::vector<std::size_t> order;                        // shuffled corpus indices
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [lo, hi) per fold into order
  std::vector<TaggerTrainResult> models;                 // one per fold

  /// True iff corpus index `idx` is held out of fold `fold`'s training data.
  bool held_out(int fold, std::size_t idx) const {
    const auto [lo, hi] = ranges[static_cast<std::size_t>(fold)];
    for (std::size_t i = lo; i < hi; ++i)
      if (order[i] == idx) return true;
    return false;
  }
};

inline JackknifeFolds train_folds(const std::vector<Example>& corpus, const RunConfig& cfg) {
  cfg.validate();
  if (corpus.size() < static_cast<std::size_t>(cfg.folds))
    throw DataError("gen_stage2: fewer sentences than folds");
  const LabelScheme scheme(cfg.entity_types);

  JackknifeFolds folds;
  folds.order.resize(corpus.size());
  for (std::size_t i = 0; i < folds.order.size(); ++i) folds.order[i] = i;
  Rng fold_rng(mix_seed(cfg.seed, 0xF01D5ULL));
  fold_rng.shuffle(folds.order);

  const std::size_t total = folds.order.size();
  for (int fold = 0; fold < cfg.folds; ++fold) {
    const std::size_t lo = total * static_cast<std::size_t>(fold) / static_cast<std::size_t>(cfg.folds);
    const std::size_t hi =
        total * static_cast<std::size_t>(fold + 1) / static_cast<std::size_t>(cfg.folds);
    if (lo == hi) throw DataError("gen_stage2: fold " + std::to_string(fold) + " is empty");
    folds.ranges.emplace_back(lo, hi);

    std::vector<Example> train_part;
    train_part.reserve(total - (hi - lo));
    for (std::size_t i = 0; i < total; ++i)
      if (i < lo || i >= hi) train_part.push_back(corpus[folds.order[i]]);

    TaggerConfig fold_cfg = cfg.tagger;
    fold_cfg.keep_checkpoints = cfg.checkpoints;
    fold_cfg.seed = mix_seed(cfg.seed, 0xF01D7EAULL, static_cast<std::uint64_t>(fold));
    folds.models.push_back(train_tagger(train_part, {}, fold_cfg, scheme));
  }
  return folds;
}

/// Sample held-out sentences with every checkpoint of their fold's model,
/// appending new components unless they overlap a kept one by >= theta
/// (Jaccard). Records are emitted only for sentences with kept components;
/// provisional labels come from the fold's final model.
inline std::vector<Stage2Record> sample_stage2(const std::vector<Example>& corpus,
                                               const JackknifeFolds& folds,
                                               const KnowledgeSources& sources,
                                               const RunConfig& cfg) {
  const LabelScheme scheme(cfg.entity_types);
  std::vector<std::pair<std::size_t, Stage2Record>> indexed;
  for (std::size_t fold = 0; fold < folds.ranges.size(); ++fold) {
    const auto [lo, hi] = folds.ranges[fold];
    const TaggerTrainResult& trained = folds.models[fold];
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t idx = folds.order[i];
      const Example& ex = corpus[idx];
      std::vector<UncertainComponent> kept;
      for (std::size_t ck = 0; ck < trained.checkpoints.size(); ++ck) {
        auto [prov, cands] = detail::run_sampling(trained.checkpoints[ck], ex.x, cfg,
                                                  mix_seed(cfg.seed, 0x57A9E2ULL, idx, ck));
        const auto comps = merge_components(uncertain_entities(prov, cands, scheme), ex.x);
        for (const auto& c : comps) {
          bool overlapped = false;
          for (const auto& k : kept)
            if (overlap_ratio(c.start, c.end, k.start, k.end) >= cfg.overlap_threshold) {
              overlapped = true;
              break;
            }
          if (!overlapped) kept.push_back(c);
        }
      }
      if (kept.empty()) continue;
      std::sort(kept.begin(), kept.end(),
                [](const UncertainComponent& a, const UncertainComponent& b) {
                  return a.start != b.start ? a.start < b.start : a.end < b.end;
                });
      Stage2Record rec;
      rec.x = ex.x;
      rec.gold = ex.gold;
      rec.provisional =
          viterbi(score(trained.model, ex.x, ScorerMode::deterministic()), scheme).seq;
      for (const auto& c : kept) {
        rec.components.push_back(c);
        rec.knowledge.push_back(retrieve_for(c.text, cfg.retrieval, sources, cfg.top_docs));
      }
      indexed.emplace_back(idx, std::move(rec));
    }
  }

  std::sort(indexed.begin(), indexed.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Stage2Record> records;
  records.reserve(indexed.size());
  for (auto& [idx, rec] : indexed) records.push_back(std::move(rec));
  return records;
}

/// N-fold jackknifing with checkpoint augmentation, end to end.
inline std::vector<Stage2Record> gen_stage2(const std::vector<Example>& corpus,
                                            const KnowledgeSources& sources, const RunConfig& cfg) {
  return sample_stage2(corpus, train_folds(corpus, cfg), sources, cfg);
}

/// Records for monitoring/evaluation data: sample with an already-trained
/// model (no jackknifing), e.g. over the dev corpus.
inline std::vector<Stage2Record> gen_records_with_model(const std::vector<Example>& corpus,
                                                        const TaggerModel& base,
                                                        const KnowledgeSources& sources,
                                                        const RunConfig& cfg) {
  const LabelScheme scheme(cfg.entity_types);
  std::vector<Stage2Record> records;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Example& ex = corpus[i];
    auto [prov, cands] =
        detail::run_sampling(base, ex.x, cfg, mix_seed(cfg.seed, 0xDE7EC7ULL, i));
    const auto comps = merge_components(uncertain_entities(prov, cands, scheme), ex.x);
    if (comps.empty()) continue;
    Stage2Record rec;
    rec.x = ex.x;
    rec.gold = ex.gold;
    rec.provisional = prov.l_p;
    for (const auto& c : comps) {
      rec.components.push_back(c);
      rec.knowledge.push_back(retrieve_for(c.text, cfg.retrieval, sources, cfg.top_docs));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

/// Each component of a record becomes one training sample masking only its
/// own positions, mirroring prediction-time per-group processing.
inline std::vector<FusedSample> fused_samples_from_records(const std::vector<Stage2Record>& records,
                                                           const LabelScheme& scheme,
                                                           int max_seq_len) {
  std::vector<FusedSample> samples;
  for (const auto& rec : records) {
    for (std::size_t c = 0; c < rec.components.size(); ++c) {
      FusedSample s = build_fused_sample(rec.x, rec.provisional, {rec.components[c]},
                                         rec.knowledge[c], scheme, max_seq_len);
      s.gold = rec.gold;
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

// ---- stage-two record files (JSONL) ----------------------------------------

inline void write_stage2_records(const std::string& path, const std::vector<Stage2Record>& records,
                                 const LabelScheme& scheme) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write records file: " + path);
  for (const auto& rec : records) {
    nlohmann::ordered_json j;
    j["sentence"] = encode_utf8(rec.x.chars);
    auto names = [&scheme](const LabelSequence& seq) {
      std::vector<std::string> out_names;
      out_names.reserve(seq.size());
      for (const int id : seq) out_names.push_back(scheme.label_name(id));
      return out_names;
    };
    j["gold"] = names(rec.gold);
    j["provisional"] = names(rec.provisional);
    j["components"] = nlohmann::ordered_json::array();
    for (const auto& c : rec.components)
      j["components"].push_back(
          {{"start", c.start}, {"end", c.end}, {"text", encode_utf8(c.text)}});
    j["knowledge"] = nlohmann::ordered_json::array();
    for (const auto& k : rec.knowledge) j["knowledge"].push_back(encode_utf8(k.text));
    out << j.dump() << '\n';
  }
}

inline std::vector<Stage2Record> read_stage2_records(const std::string& path,
                                                     const LabelScheme& scheme) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open records file: " + path);
  std::vector<Stage2Record> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed record line");
    try {
      Stage2Record rec;
      rec.x.chars = decode_utf8(j.at("sentence").get<std::string>());
      const auto ids = [&scheme, &path, line_no](const nlohmann::json& arr) {
        LabelSequence seq;
        for (const auto& name : arr) {
          const int id = scheme.find_label(name.get<std::string>());
          if (id < 0)
            throw MismatchError(path + ":" + std::to_string(line_no) + ": label \"" +
                                name.get<std::string>() + "\" not in scheme");
          seq.push_back(id);
        }
        return seq;
      };
      rec.gold = ids(j.at("gold"));
      rec.provisional = ids(j.at("provisional"));
      for (const auto& c : j.at("components"))
        rec.components.push_back({c.at("start").get<int>(), c.at("end").get<int>(),
                                  decode_utf8(c.at("text").get<std::string>())});
      for (const auto& k : j.at("knowledge"))
        rec.knowledge.push_back({decode_utf8(k.get<std::string>())});
      if (rec.components.size() != rec.knowledge.size())
        throw DataError(path + ":" + std::to_string(line_no) + ": components/knowledge mismatch");
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

/// Aggregate a full metrics report from prediction traces against gold.
inline MetricsReport report_from_traces(const std::vector<PredictTrace>& traces,
                                        const std::vector<LabelSequence>& gold,
                                        const LabelScheme& scheme) {
  if (traces.size() != gold.size()) throw MismatchError("report_from_traces: size mismatch");
  MetricsReport rep;
  std::vector<LabelSequence> finals, provisionals;
  std::vector<std::vector<LabelSequence>> cands;
  std::vector<SentenceSampling> sampling;
  std::vector<SpanList> components;
  std::int64_t hits = 0, positions = 0;
  for (const auto& t : traces) {
    finals.push_back(t.final);
    provisionals.push_back(t.provisional.l_p);
    cands.push_back(t.candidates.candidates);
    SentenceSampling ss;
    ss.provisional = t.provisional.l_p;
    ss.raw_generated = t.candidates.raw_generated;
    for (const auto& c : t.candidates.candidates)
      if (c != t.provisional.l_p) ss.kept.push_back(c);
    sampling.push_back(std::move(ss));
    SpanList sl;
    for (const auto& c : t.components) sl.emplace_back(c.start, c.end);
    components.push_back(std::move(sl));
  }
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t p = 0; p < gold[i].size(); ++p) hits += finals[i][p] == gold[i][p];
    positions += static_cast<std::int64_t>(gold[i].size());
  }
  rep.entity = entity_f1(finals, gold, scheme);
  rep.token_accuracy =
      positions > 0 ? std::optional<double>(static_cast<double>(hits) / static_cast<double>(positions))
                    : std::nullopt;
  rep.oracle_f1 = oracle_f1(provisionals, cands, gold, scheme);
  const auto acc = acc_split(finals, gold, components);
  rep.acc_certain = acc.certain;
  rep.acc_uncertain = acc.uncertain;
  const auto [sar, vsr] = sar_vsr(sampling, gold, scheme);
  rep.sar = sar;
  rep.vsr = vsr;
  const auto stats = uncertainty_stats(components);
  rep.size_u = stats.size_u;
  rep.num_uc = stats.num_uc;
  return rep;
}

}  // namespace turner
