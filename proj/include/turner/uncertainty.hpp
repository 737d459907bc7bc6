#pragma once

// Entity-level uncertainty sampling: generate candidate decodings via MC
// Dropout or top-K Viterbi, diff their entity sets against the provisional
// result, and merge the disagreeing entities into retrieval components.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "turner/corpus.hpp"
#include "turner/decoder.hpp"
#include "turner/tagger.hpp"
#include "turner/tagspace.hpp"
#include "turner/utf8.hpp"

namespace turner {

struct ProvisionalResult {
  Sentence x;
  LabelSequence l_p;
  std::set<EntitySpan> spans_p;
};

enum class SamplingMethod { kMcDropout, kTopK };

inline const char* sampling_method_name(SamplingMethod m) {
  return m == SamplingMethod::kMcDropout ? "mc_dropout" : "topk";
}

struct CandidateSet {
  SamplingMethod method = SamplingMethod::kMcDropout;
  std::vector<LabelSequence> candidates;  // after the method's own filtering
  int k_requested = 0;
  std::int64_t raw_generated = 0;  // candidates produced before any filter
};

struct UncertainComponent {
  int start = 0;  // inclusive
  int end = 0;    // inclusive
  std::u32string text;  // the retrieval query, raw surface form
};

/// Provisional decode plus k stochastic decodes with seeds base_seed..base_seed+k-1.
inline std::pair<ProvisionalResult, CandidateSet> mc_sample(const TaggerModel& model,
                                                            const Sentence& x, int k,
                                                            std::uint64_t base_seed) {
  if (k < 1) throw DataError("mc_sample: k must be >= 1");
  ProvisionalResult prov;
  prov.x = x;
  prov.l_p = viterbi(score(model, x, ScorerMode::deterministic()), model.scheme).seq;
  prov.spans_p = extract_spans(prov.l_p, model.scheme);

  CandidateSet cand;
  cand.method = SamplingMethod::kMcDropout;
  cand.k_requested = k;
  cand.candidates.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto lat = score(model, x, ScorerMode::stochastic(base_seed + static_cast<std::uint64_t>(i)));
    cand.candidates.push_back(viterbi(lat, model.scheme).seq);
  }
  cand.raw_generated = k;
  return {std::move(prov), std::move(cand)};
}

inline int hamming(const LabelSequence& a, const LabelSequence& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

/// One deterministic top-k decode; rank 0 is the provisional result, ranks
/// 1..k-1 are candidates, minus those differing from the provisional at a
/// single position (confident near-duplicates, not worth a retrieval).
inline std::pair<ProvisionalResult, CandidateSet> topk_sample(const TaggerModel& model,
                                                              const Sentence& x, int k) {
  if (k < 2) throw DataError("topk_sample: k must be >= 2");
  const auto lat = score(model, x, ScorerMode::deterministic());
  const auto ranked = topk_viterbi(lat, model.scheme, k);

  ProvisionalResult prov;
  prov.x = x;
  prov.l_p = ranked.front().seq;
  prov.spans_p = extract_spans(prov.l_p, model.scheme);

  CandidateSet cand;
  cand.method = SamplingMethod::kTopK;
  cand.k_requested = k;
  cand.raw_generated = static_cast<std::int64_t>(ranked.size()) - 1;
  for (std::size_t r = 1; r < ranked.size(); ++r)
    if (hamming(ranked[r].seq, prov.l_p) != 1) cand.candidates.push_back(ranked[r].seq);
  return {std::move(prov), std::move(cand)};
}

/// Symmetric difference between a candidate's entity set and the provisional
/// entity set: both readings of a disagreement are uncertain.
inline std::set<EntitySpan> uncertain_entities(const ProvisionalResult& prov,
                                               const LabelSequence& cand,
                                               const LabelScheme& scheme) {
  if (cand.size() != prov.l_p.size()) throw MismatchError("uncertain_entities: length mismatch");
  const auto cand_spans = extract_spans(cand, scheme);
  std::set<EntitySpan> diff;
  for (const auto& s : cand_spans)
    if (!prov.spans_p.count(s)) diff.insert(s);
  for (const auto& s : prov.spans_p)
    if (!cand_spans.count(s)) diff.insert(s);
  return diff;
}

/// Union of uncertain entities over every candidate in the set.
inline std::set<EntitySpan> uncertain_entities(const ProvisionalResult& prov,
                                               const CandidateSet& cand,
                                               const LabelScheme& scheme) {
  std::set<EntitySpan> all;
  for (const auto& c : cand.candidates) {
    auto diff = uncertain_entities(prov, c, scheme);
    all.insert(diff.begin(), diff.end());
  }
  return all;
}

/// Merge overlapping and adjacent (gap 0) uncertain entities into components
/// sorted by start. Entity types are dropped; only the covered text matters
/// as a retrieval query.
inline std::vector<UncertainComponent> merge_components(const std::set<EntitySpan>& uncertain,
                                                        const Sentence& x) {
  std::vector<UncertainComponent> out;
  for (const auto& s : uncertain) {  // set iterates in ascending (start, end) order
    if (s.start < 0 || s.end >= x.length())
      throw DataError("merge_components: span outside sentence");
    if (!out.empty() && s.start <= out.back().end + 1) {
      out.back().end = std::max(out.back().end, s.end);
    } else {
      out.push_back({s.start, s.end, {}});
    }
  }
  for (auto& c : out) c.text = x.substr(c.start, c.end);
  return out;
}

}  // namespace turner
