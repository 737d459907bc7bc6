#pragma once

// Legality-constrained Viterbi and k-best Viterbi over a tag lattice.
//
// Illegal transitions and illegal start/end labels are hard-masked during the
// DP; no transition weights are trained. Ties are broken deterministically:
// among equal-score sequences the one with the smaller label id at the latest
// differing position wins. The k-best decoder is a list Viterbi keeping
// per-(position, label) top-k partial paths, which yields distinct sequences
// by construction.

#include <algorithm>
#include <vector>

#include "turner/lattice.hpp"
#include "turner/tagspace.hpp"

namespace turner {

struct ScoredSequence {
  LabelSequence seq;
  double score = 0.0;
};

namespace detail {

// One partial path ending at (pos, label): score plus backpointer into the
// previous position's list. Candidate order (score desc, prev label asc,
// prev rank asc) realizes the latest-differing-position tie-break.
struct PathEntry {
  double score;
  int prev_label;
  int prev_rank;
};

inline bool entry_less(const PathEntry& a, const PathEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.prev_label != b.prev_label) return a.prev_label < b.prev_label;
  return a.prev_rank < b.prev_rank;
}

}  // namespace detail

/// The k highest-scoring distinct legal sequences, best first. Fewer are
/// returned when fewer legal sequences exist.
inline std::vector<ScoredSequence> topk_viterbi(const TagLattice& lattice,
                                                const LabelScheme& scheme, int k) {
  const int n = lattice.length();
  const int L = scheme.num_labels();
  if (n < 1) throw DataError("topk_viterbi: empty lattice");
  if (lattice.num_labels() != L) throw MismatchError("topk_viterbi: lattice/scheme label count mismatch");
  if (k < 1) throw DataError("topk_viterbi: k must be >= 1");

  // lists[pos][label] = up to k best partial paths, sorted by entry_less.
  std::vector<std::vector<std::vector<detail::PathEntry>>> lists(
      static_cast<std::size_t>(n),
      std::vector<std::vector<detail::PathEntry>>(static_cast<std::size_t>(L)));

  for (int l = 0; l < L; ++l)
    if (scheme.start_allowed(l))
      lists[0][static_cast<std::size_t>(l)].push_back({lattice.at(0, l), -1, -1});

  std::vector<detail::PathEntry> cand;
  for (int pos = 1; pos < n; ++pos) {
    for (int l = 0; l < L; ++l) {
      cand.clear();
      for (int pl = 0; pl < L; ++pl) {
        if (!scheme.transition_allowed(pl, l)) continue;
        const auto& prev = lists[static_cast<std::size_t>(pos - 1)][static_cast<std::size_t>(pl)];
        for (int r = 0; r < static_cast<int>(prev.size()); ++r)
          cand.push_back({prev[static_cast<std::size_t>(r)].score + lattice.at(pos, l), pl, r});
      }
      std::sort(cand.begin(), cand.end(), detail::entry_less);
      if (static_cast<int>(cand.size()) > k) cand.resize(static_cast<std::size_t>(k));
      lists[static_cast<std::size_t>(pos)][static_cast<std::size_t>(l)] = cand;
    }
  }

  // Merge final-position lists over end-legal labels. The tie order here
  // compares the last position first, so (score desc, label asc, rank asc).
  struct FinalEntry {
    double score;
    int label;
    int rank;
  };
  std::vector<FinalEntry> finals;
  for (int l = 0; l < L; ++l) {
    if (!scheme.end_allowed(l)) continue;
    const auto& lst = lists[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(l)];
    for (int r = 0; r < static_cast<int>(lst.size()); ++r)
      finals.push_back({lst[static_cast<std::size_t>(r)].score, l, r});
  }
  std::sort(finals.begin(), finals.end(), [](const FinalEntry& a, const FinalEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.label != b.label) return a.label < b.label;
    return a.rank < b.rank;
  });
  if (static_cast<int>(finals.size()) > k) finals.resize(static_cast<std::size_t>(k));

  std::vector<ScoredSequence> out;
  out.reserve(finals.size());
  for (const auto& f : finals) {
    ScoredSequence s;
    s.score = f.score;
    s.seq.assign(static_cast<std::size_t>(n), 0);
    int label = f.label;
    int rank = f.rank;
    for (int pos = n - 1; pos >= 0; --pos) {
      s.seq[static_cast<std::size_t>(pos)] = label;
      const auto& e =
          lists[static_cast<std::size_t>(pos)][static_cast<std::size_t>(label)][static_cast<std::size_t>(rank)];
      label = e.prev_label;
      rank = e.prev_rank;
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Maximum-score legal sequence. Plain DP, kept separate from the k-best list
/// decoder so the two act as independent routes in tests.
inline ScoredSequence viterbi(const TagLattice& lattice, const LabelScheme& scheme) {
  const int n = lattice.length();
  const int L = scheme.num_labels();
  if (n < 1) throw DataError("viterbi: empty lattice");
  if (lattice.num_labels() != L) throw MismatchError("viterbi: lattice/scheme label count mismatch");

  constexpr double kNegInf = -1e300;
  std::vector<double> best(static_cast<std::size_t>(n) * static_cast<std::size_t>(L), kNegInf);
  std::vector<int> back(static_cast<std::size_t>(n) * static_cast<std::size_t>(L), -1);
  const auto idx = [L](int pos, int l) {
    return static_cast<std::size_t>(pos) * static_cast<std::size_t>(L) + static_cast<std::size_t>(l);
  };

  for (int l = 0; l < L; ++l)
    if (scheme.start_allowed(l)) best[idx(0, l)] = lattice.at(0, l);

  for (int pos = 1; pos < n; ++pos) {
    for (int l = 0; l < L; ++l) {
      double b = kNegInf;
      int arg = -1;
      for (int pl = 0; pl < L; ++pl) {
        if (best[idx(pos - 1, pl)] <= kNegInf) continue;
        if (!scheme.transition_allowed(pl, l)) continue;
        const double sc = best[idx(pos - 1, pl)] + lattice.at(pos, l);
        if (sc > b) {  // ties keep the smaller predecessor id (pl ascends)
          b = sc;
          arg = pl;
        }
      }
      best[idx(pos, l)] = b;
      back[idx(pos, l)] = arg;
    }
  }

  double b = kNegInf;
  int arg = -1;
  for (int l = 0; l < L; ++l) {
    if (!scheme.end_allowed(l)) continue;
    if (best[idx(n - 1, l)] > b) {
      b = best[idx(n - 1, l)];
      arg = l;
    }
  }

  ScoredSequence s;
  s.score = b;
  s.seq.assign(static_cast<std::size_t>(n), 0);
  for (int pos = n - 1; pos >= 0; --pos) {
    s.seq[static_cast<std::size_t>(pos)] = arg;
    arg = back[idx(pos, arg)];
  }
  return s;
}

}  // namespace turner
