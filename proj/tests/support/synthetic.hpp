#pragma once

// Synthetic disambiguation benchmark. Entity names are drawn from a dedicated
// character alphabet so the base tagger learns boundaries reliably, while the
// ORG/LOC type of a name is stored only in the knowledge base: names unseen in
// training are ambiguous to the tagger and resolvable only through retrieval.
// Two type-free "header" documents sort lexicographically first so that
// zero-overlap BM25 queries pull neutral filler instead of misleading types.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "turner/corpus.hpp"
#include "turner/retrieval.hpp"
#include "turner/rng.hpp"
#include "turner/tagspace.hpp"
#include "turner/utf8.hpp"

namespace turner::testing {

struct SynthSpec {
  std::uint64_t seed = 20240501;
  int entity_subjects = 198;  // plus 2 neutral header docs = 200 KB subjects
  int train_pool = 158;       // subjects eligible for train/dev mentions
  int train_sentences = 2000;
  int dev_sentences = 200;
  int test_sentences = 400;
  double entity_rate = 0.2;
  double test_unseen_rate = 0.5;  // share of test mentions from unseen subjects
};

struct SynthSubject {
  std::u32string name;
  int type = 0;  // index into scheme.entity_types()
};

struct SynthData {
  LabelScheme scheme{std::vector<std::string>{"ORG", "LOC"}};
  std::vector<SynthSubject> subjects;  // entity subjects only
  std::vector<Triplet> triplets;       // includes the neutral header docs
  std::vector<Example> train, dev, test;
};

namespace detail {

inline char32_t name_char(Rng& rng) { return static_cast<char32_t>(0x4E00 + rng.below(40)); }
inline char32_t ctx_char(Rng& rng) { return static_cast<char32_t>(0x5200 + rng.below(30)); }

inline std::u32string ctx_run(Rng& rng, int lo, int hi) {
  const int len = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  std::u32string s;
  for (int i = 0; i < len; ++i) s.push_back(ctx_char(rng));
  return s;
}

inline Example make_sentence(Rng& rng, const SynthSubject* subject, const LabelScheme& scheme) {
  Example ex;
  if (subject == nullptr) {
    ex.x.chars = ctx_run(rng, 8, 16);
    ex.gold.assign(ex.x.chars.size(), LabelScheme::kOutsideId);
    return ex;
  }
  const std::u32string prefix = ctx_run(rng, 3, 7);
  const std::u32string suffix = ctx_run(rng, 3, 7);
  ex.x.chars = prefix + subject->name + suffix;
  ex.gold.assign(ex.x.chars.size(), LabelScheme::kOutsideId);
  const int start = static_cast<int>(prefix.size());
  const int end = start + static_cast<int>(subject->name.size()) - 1;
  if (start == end) {
    ex.gold[static_cast<std::size_t>(start)] = scheme.label_id(Role::S, subject->type);
  } else {
    ex.gold[static_cast<std::size_t>(start)] = scheme.label_id(Role::B, subject->type);
    for (int i = start + 1; i < end; ++i)
      ex.gold[static_cast<std::size_t>(i)] = scheme.label_id(Role::I, subject->type);
    ex.gold[static_cast<std::size_t>(end)] = scheme.label_id(Role::E, subject->type);
  }
  return ex;
}

}  // namespace detail

inline SynthData make_synthetic(const SynthSpec& spec = {}) {
  SynthData data;
  Rng rng(spec.seed);

  std::set<std::u32string> used;
  for (int i = 0; i < spec.entity_subjects; ++i) {
    std::u32string name;
    do {
      name.clear();
      const int len = 2 + static_cast<int>(rng.below(3));
      for (int j = 0; j < len; ++j) name.push_back(detail::name_char(rng));
    } while (!used.insert(name).second);
    data.subjects.push_back({name, i % 2});
  }

  // Header docs: type-free bodies, subjects sorting before every entity name.
  data.triplets.push_back({"〇总览", "收录", "常见条目"});
  data.triplets.push_back({"〇说明", "用途", "一般参考"});
  for (int i = 0; i < spec.entity_subjects; ++i) {
    const std::string name = encode_utf8(data.subjects[static_cast<std::size_t>(i)].name);
    const bool org = data.subjects[static_cast<std::size_t>(i)].type == 0;
    data.triplets.push_back({name, "类型", org ? "机构" : "地名"});
    data.triplets.push_back({name, "编号", "第" + std::to_string(1000 + i) + "号"});
  }

  const auto pick_train_subject = [&]() -> const SynthSubject* {
    return &data.subjects[rng.below(static_cast<std::uint64_t>(spec.train_pool))];
  };
  const auto pick_test_subject = [&]() -> const SynthSubject* {
    if (rng.bernoulli(spec.test_unseen_rate)) {
      const auto unseen = static_cast<std::uint64_t>(spec.entity_subjects - spec.train_pool);
      return &data.subjects[static_cast<std::size_t>(spec.train_pool) + rng.below(unseen)];
    }
    return pick_train_subject();
  };

  for (int i = 0; i < spec.train_sentences; ++i) {
    const bool entity = rng.bernoulli(spec.entity_rate);
    data.train.push_back(detail::make_sentence(rng, entity ? pick_train_subject() : nullptr,
                                               data.scheme));
  }
  for (int i = 0; i < spec.dev_sentences; ++i) {
    const bool entity = rng.bernoulli(spec.entity_rate);
    data.dev.push_back(detail::make_sentence(rng, entity ? pick_train_subject() : nullptr,
                                             data.scheme));
  }
  for (int i = 0; i < spec.test_sentences; ++i) {
    const bool entity = rng.bernoulli(spec.entity_rate);
    data.test.push_back(detail::make_sentence(rng, entity ? pick_test_subject() : nullptr,
                                              data.scheme));
  }
  return data;
}

}  // namespace turner::testing
