#pragma once

// Test-only oracles, independent of the implementation paths they check.

#include <algorithm>
#include <vector>

#include "turner/decoder.hpp"
#include "turner/lattice.hpp"
#include "turner/rng.hpp"
#include "turner/tagspace.hpp"

namespace turner::testing {

/// Tie order used by the decoders: higher score first; among equal scores the
/// sequence with the smaller label id at the latest differing position wins.
inline bool ranked_before(const ScoredSequence& a, const ScoredSequence& b) {
  if (a.score != b.score) return a.score > b.score;
  for (std::size_t i = a.seq.size(); i-- > 0;)
    if (a.seq[i] != b.seq[i]) return a.seq[i] < b.seq[i];
  return false;
}

/// Exhaustive enumeration of legal sequences, scores accumulated left to
/// right exactly like the DP, sorted by ranked_before.
inline std::vector<ScoredSequence> enumerate_legal(const TagLattice& lattice,
                                                   const LabelScheme& scheme) {
  const int n = lattice.length();
  const int L = scheme.num_labels();
  std::vector<ScoredSequence> out;
  LabelSequence prefix;

  const auto recurse = [&](auto&& self, int pos, double score) -> void {
    if (pos == n) {
      if (scheme.end_allowed(prefix.back())) out.push_back({prefix, score});
      return;
    }
    for (int l = 0; l < L; ++l) {
      if (pos == 0 && !scheme.start_allowed(l)) continue;
      if (pos > 0 && !scheme.transition_allowed(prefix.back(), l)) continue;
      prefix.push_back(l);
      self(self, pos + 1, score + lattice.at(pos, l));
      prefix.pop_back();
    }
  };
  recurse(recurse, 0, 0.0);
  std::sort(out.begin(), out.end(), ranked_before);
  return out;
}

/// Random lattice with log-softmax-normalized rows.
inline TagLattice random_lattice(Rng& rng, int n, int num_labels) {
  TagLattice lat(n, num_labels);
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int l = 0; l < num_labels; ++l) {
      lat.at(i, l) = rng.uniform(-5.0, 0.0);
      mx = std::max(mx, lat.at(i, l));
    }
    double sum = 0.0;
    for (int l = 0; l < num_labels; ++l) sum += std::exp(lat.at(i, l) - mx);
    const double lse = mx + std::log(sum);
    for (int l = 0; l < num_labels; ++l) lat.at(i, l) -= lse;
  }
  return lat;
}

/// Random disjoint spans inside [0, n), for round-trip properties.
inline std::set<EntitySpan> random_disjoint_spans(Rng& rng, int n, int num_types) {
  std::set<EntitySpan> spans;
  int pos = 0;
  while (pos < n) {
    if (rng.bernoulli(0.4)) {
      const int len = 1 + static_cast<int>(rng.below(3));
      const int end = std::min(n - 1, pos + len - 1);
      spans.insert({pos, end, static_cast<int>(rng.below(static_cast<std::uint64_t>(num_types)))});
      pos = end + 2;  // at least one gap so spans stay disjoint
    } else {
      ++pos;
    }
  }
  return spans;
}

}  // namespace turner::testing
