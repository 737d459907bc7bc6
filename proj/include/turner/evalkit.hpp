#pragma once

// Evaluation and diagnostics: entity-level F1, oracle F1, accuracy split over
// certain/uncertain positions, SAR/VSR sampling quality, uncertainty corpus
// statistics, the sampling cost model, and a parameter-sweep harness.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "turner/tagspace.hpp"

namespace turner {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  Prf entity;
  std::optional<double> token_accuracy;
  std::optional<double> oracle_f1;
  std::optional<double> acc_certain;
  std::optional<double> acc_uncertain;
  std::optional<double> sar;
  std::optional<double> vsr;
  std::int64_t size_u = 0;
  std::int64_t num_uc = 0;
  std::map<std::string, Prf> per_dataset;
};

namespace detail {

struct MatchCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

inline void count_matches(const std::set<EntitySpan>& pred, const std::set<EntitySpan>& gold,
                          MatchCounts& c) {
  for (const auto& s : pred)
    gold.count(s) ? ++c.tp : ++c.fp;
  for (const auto& s : gold)
    if (!pred.count(s)) ++c.fn;
}

// P, R, F1 = 0 when the denominators vanish.
inline Prf to_prf(const MatchCounts& c) {
  Prf r;
  if (c.tp + c.fp > 0) r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (r.precision + r.recall > 0.0)
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

}  // namespace detail

/// Micro-averaged entity F1 over exact (start, end, type) matches.
inline Prf entity_f1(const std::vector<LabelSequence>& pred, const std::vector<LabelSequence>& gold,
                     const LabelScheme& scheme) {
  if (pred.size() != gold.size()) throw MismatchError("entity_f1: corpus size mismatch");
  detail::MatchCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size())
      throw MismatchError("entity_f1: length mismatch at sentence " + std::to_string(i));
    detail::count_matches(extract_spans(pred[i], scheme), extract_spans(gold[i], scheme), c);
  }
  return detail::to_prf(c);
}

/// Single-sentence F1, used when scoring candidates against gold.
inline double sentence_f1(const LabelSequence& pred, const LabelSequence& gold,
                          const LabelScheme& scheme) {
  detail::MatchCounts c;
  detail::count_matches(extract_spans(pred, scheme), extract_spans(gold, scheme), c);
  return detail::to_prf(c).f1;
}

/// Corpus F1 when an oracle picks, per sentence, the sequence among
/// {provisional} + candidates maximizing TP - FP against gold (ties keep the
/// provisional, then the earlier candidate).
inline double oracle_f1(const std::vector<LabelSequence>& provisional,
                        const std::vector<std::vector<LabelSequence>>& candidates,
                        const std::vector<LabelSequence>& gold, const LabelScheme& scheme) {
  if (provisional.size() != gold.size() || candidates.size() != gold.size())
    throw MismatchError("oracle_f1: corpus size mismatch");
  detail::MatchCounts total;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto gold_spans = extract_spans(gold[i], scheme);
    const auto score_of = [&](const LabelSequence& seq) {
      detail::MatchCounts c;
      detail::count_matches(extract_spans(seq, scheme), gold_spans, c);
      return c.tp - c.fp;
    };
    const LabelSequence* best = &provisional[i];
    std::int64_t best_score = score_of(provisional[i]);
    for (const auto& cand : candidates[i]) {
      const std::int64_t s = score_of(cand);
      if (s > best_score) {
        best_score = s;
        best = &cand;
      }
    }
    detail::count_matches(extract_spans(*best, scheme), gold_spans, total);
  }
  return detail::to_prf(total).f1;
}

/// Inclusive (start, end) index ranges; the uncertainty module's components
/// reduce to these for metric purposes.
using SpanList = std::vector<std::pair<int, int>>;

struct AccSplit {
  std::optional<double> certain;
  std::optional<double> uncertain;
};

/// Position-level label accuracy partitioned by membership in any uncertain
/// component. A side with no positions is reported absent.
inline AccSplit acc_split(const std::vector<LabelSequence>& pred,
                          const std::vector<LabelSequence>& gold,
                          const std::vector<SpanList>& components) {
  if (pred.size() != gold.size() || components.size() != gold.size())
    throw MismatchError("acc_split: corpus size mismatch");
  std::int64_t certain_hit = 0, certain_total = 0, uncertain_hit = 0, uncertain_total = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (pred[i].size() != gold[i].size())
      throw MismatchError("acc_split: length mismatch at sentence " + std::to_string(i));
    for (int p = 0; p < static_cast<int>(gold[i].size()); ++p) {
      bool inside = false;
      for (const auto& [s, e] : components[i])
        if (p >= s && p <= e) {
          inside = true;
          break;
        }
      const bool hit = pred[i][static_cast<std::size_t>(p)] == gold[i][static_cast<std::size_t>(p)];
      if (inside) {
        ++uncertain_total;
        uncertain_hit += hit;
      } else {
        ++certain_total;
        certain_hit += hit;
      }
    }
  }
  AccSplit out;
  if (certain_total > 0)
    out.certain = static_cast<double>(certain_hit) / static_cast<double>(certain_total);
  if (uncertain_total > 0)
    out.uncertain = static_cast<double>(uncertain_hit) / static_cast<double>(uncertain_total);
  return out;
}

/// Per-sentence sampling outcome for SAR/VSR. raw_generated counts every
/// candidate the sampler produced; kept holds those surviving dedup/filter.
struct SentenceSampling {
  LabelSequence provisional;
  std::int64_t raw_generated = 0;
  std::vector<LabelSequence> kept;
};

/// SAR = kept / raw generated; VSR = kept candidates whose sentence F1 beats
/// the provisional's / raw generated.
inline std::pair<double, double> sar_vsr(const std::vector<SentenceSampling>& sampling,
                                         const std::vector<LabelSequence>& gold,
                                         const LabelScheme& scheme) {
  if (sampling.size() != gold.size()) throw MismatchError("sar_vsr: corpus size mismatch");
  std::int64_t raw = 0, kept = 0, valuable = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    raw += sampling[i].raw_generated;
    kept += static_cast<std::int64_t>(sampling[i].kept.size());
    const double base = sentence_f1(sampling[i].provisional, gold[i], scheme);
    for (const auto& cand : sampling[i].kept)
      if (sentence_f1(cand, gold[i], scheme) > base) ++valuable;
  }
  if (raw == 0) return {0.0, 0.0};
  return {static_cast<double>(kept) / static_cast<double>(raw),
          static_cast<double>(valuable) / static_cast<double>(raw)};
}

struct CostEstimate {
  int k = 0;
  double beta = 0.0;
  double gamma = 0.0;
  double unit_cost = 0.0;
  double cost_mc = 0.0;
  double cost_topk = 0.0;
};

/// Additional GPU cost of the two sampling methods:
/// cost_mc = (k + beta*(1+gamma)^2)*C, cost_topk = beta*(1+gamma)^2*C.
inline CostEstimate cost_model(int k, double beta, double gamma, double unit_cost) {
  if (k < 0 || beta < 0 || gamma < 0 || unit_cost < 0)
    throw DataError("cost_model: parameters must be nonnegative");
  CostEstimate c;
  c.k = k;
  c.beta = beta;
  c.gamma = gamma;
  c.unit_cost = unit_cost;
  const double retrieval = beta * (1.0 + gamma) * (1.0 + gamma);
  c.cost_mc = (static_cast<double>(k) + retrieval) * unit_cost;
  c.cost_topk = retrieval * unit_cost;
  return c;
}

struct UncertaintyStats {
  std::int64_t size_u = 0;   // sentences with at least one component
  std::int64_t num_uc = 0;   // total components
};

inline UncertaintyStats uncertainty_stats(const std::vector<SpanList>& components) {
  UncertaintyStats s;
  for (const auto& c : components) {
    if (!c.empty()) ++s.size_u;
    s.num_uc += static_cast<std::int64_t>(c.size());
  }
  return s;
}

/// One grid point of the sweep over sampling/fusion hyperparameters.
struct SweepPoint {
  double dropout = 0.0;
  int k = 1;
  double alpha = 1.0;
};

struct SweepRow {
  SweepPoint point;
  MetricsReport report;
};

/// Runs the supplied evaluation closure on every grid point. The closure owns
/// model training/caching; this harness only sequences and collects.
inline std::vector<SweepRow> sweep(const std::vector<SweepPoint>& grid,
                                   const std::function<MetricsReport(const SweepPoint&)>& evaluate) {
  if (grid.empty()) throw DataError("sweep: empty grid");
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const auto& p : grid) rows.push_back({p, evaluate(p)});
  return rows;
}

}  // namespace turner
