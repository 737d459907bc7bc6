#pragma once

// BIESO label scheme and the span <-> label-sequence algebra.
//
// Label ids are dense: O is always 0, then B-t, I-t, E-t, S-t for each entity
// type t in declaration order. Spans are inclusive [start, end] character
// index ranges.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "turner/errors.hpp"

namespace turner {

enum class Role : std::uint8_t { O = 0, B, I, E, S };

struct EntitySpan {
  int start = 0;  // inclusive
  int end = 0;    // inclusive
  int type = 0;   // index into scheme.entity_types()

  friend auto operator<=>(const EntitySpan&, const EntitySpan&) = default;
};

class LabelScheme {
public:
  explicit LabelScheme(std::vector<std::string> entity_types)
      : entity_types_(std::move(entity_types)) {
    labels_.reserve(1 + 4 * entity_types_.size());
    labels_.push_back("O");
    for (const auto& t : entity_types_) {
      labels_.push_back("B-" + t);
      labels_.push_back("I-" + t);
      labels_.push_back("E-" + t);
      labels_.push_back("S-" + t);
    }
  }

  int num_labels() const { return static_cast<int>(labels_.size()); }
  int num_types() const { return static_cast<int>(entity_types_.size()); }
  const std::vector<std::string>& entity_types() const { return entity_types_; }
  const std::vector<std::string>& labels() const { return labels_; }

  static constexpr int kOutsideId = 0;

  Role role_of(int id) const {
    check_id(id);
    if (id == kOutsideId) return Role::O;
    switch ((id - 1) % 4) {
      case 0: return Role::B;
      case 1: return Role::I;
      case 2: return Role::E;
      default: return Role::S;
    }
  }

  /// Entity-type index of a non-O label.
  int type_of(int id) const {
    check_id(id);
    return (id - 1) / 4;
  }

  int label_id(Role role, int type) const {
    if (role == Role::O) return kOutsideId;
    return 1 + 4 * type + (static_cast<int>(role) - 1);
  }

  const std::string& label_name(int id) const {
    check_id(id);
    return labels_[static_cast<std::size_t>(id)];
  }

  /// -1 if the name is not a label of this scheme.
  int find_label(const std::string& name) const {
    const auto it = std::find(labels_.begin(), labels_.end(), name);
    return it == labels_.end() ? -1 : static_cast<int>(it - labels_.begin());
  }

  /// BIESO transition rule: after O/E/S only {O, B-*, S-*}; after B-t/I-t
  /// only {I-t, E-t} of the same type.
  bool transition_allowed(int a, int b) const {
    check_id(a);
    check_id(b);
    const Role ra = role_of(a);
    const Role rb = role_of(b);
    if (ra == Role::O || ra == Role::E || ra == Role::S)
      return rb == Role::O || rb == Role::B || rb == Role::S;
    // ra is B or I: the entity stays open and keeps its type.
    if (rb != Role::I && rb != Role::E) return false;
    return type_of(a) == type_of(b);
  }

  bool start_allowed(int id) const {
    const Role r = role_of(id);
    return r == Role::O || r == Role::B || r == Role::S;
  }

  bool end_allowed(int id) const {
    const Role r = role_of(id);
    return r == Role::O || r == Role::E || r == Role::S;
  }

  bool is_legal(const std::vector<int>& seq) const {
    if (seq.empty()) return false;
    if (!start_allowed(seq.front()) || !end_allowed(seq.back())) return false;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i)
      if (!transition_allowed(seq[i], seq[i + 1])) return false;
    return true;
  }

  bool operator==(const LabelScheme& other) const { return entity_types_ == other.entity_types_; }

private:
  void check_id(int id) const {
    if (id < 0 || id >= num_labels())
      throw MismatchError("label id " + std::to_string(id) + " outside scheme with " +
                          std::to_string(num_labels()) + " labels");
  }

  std::vector<std::string> entity_types_;
  std::vector<std::string> labels_;
};

using LabelSequence = std::vector<int>;

/// Maximal B..E runs and S singletons of a legal sequence. O contributes nothing.
inline std::set<EntitySpan> extract_spans(const LabelSequence& seq, const LabelScheme& scheme) {
  if (!scheme.is_legal(seq)) throw DataError("extract_spans: illegal label sequence");
  std::set<EntitySpan> spans;
  int open_start = -1;
  for (int i = 0; i < static_cast<int>(seq.size()); ++i) {
    switch (scheme.role_of(seq[static_cast<std::size_t>(i)])) {
      case Role::O:
        break;
      case Role::S:
        spans.insert({i, i, scheme.type_of(seq[static_cast<std::size_t>(i)])});
        break;
      case Role::B:
        open_start = i;
        break;
      case Role::I:
        break;
      case Role::E:
        spans.insert({open_start, i, scheme.type_of(seq[static_cast<std::size_t>(i)])});
        open_start = -1;
        break;
    }
  }
  return spans;
}

/// Inverse of extract_spans. Spans must be disjoint and inside [0, n).
inline LabelSequence spans_to_labels(const std::set<EntitySpan>& spans, int n,
                                     const LabelScheme& scheme) {
  LabelSequence seq(static_cast<std::size_t>(n), LabelScheme::kOutsideId);
  int prev_end = -1;
  for (const auto& s : spans) {  // std::set iterates in (start, end, type) order
    if (s.start < 0 || s.end >= n || s.start > s.end)
      throw DataError("spans_to_labels: span outside [0, n)");
    if (s.start <= prev_end) throw DataError("spans_to_labels: overlapping spans");
    prev_end = s.end;
    if (s.start == s.end) {
      seq[static_cast<std::size_t>(s.start)] = scheme.label_id(Role::S, s.type);
    } else {
      seq[static_cast<std::size_t>(s.start)] = scheme.label_id(Role::B, s.type);
      for (int i = s.start + 1; i < s.end; ++i)
        seq[static_cast<std::size_t>(i)] = scheme.label_id(Role::I, s.type);
      seq[static_cast<std::size_t>(s.end)] = scheme.label_id(Role::E, s.type);
    }
  }
  return seq;
}

}  // namespace turner
