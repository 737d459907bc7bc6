#pragma once

// Offline knowledge: SPO triplets merged into one descriptive document per
// subject, ranked by Okapi BM25 over character bigrams (no segmentation is
// assumed for Chinese text). Search-engine results are replayed from a fixture
// cache. Either source is assembled into a length-capped knowledge text.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "turner/errors.hpp"
#include "turner/utf8.hpp"

namespace turner {

struct Triplet {
  std::string subject;
  std::string predicate;
  std::string object;
};

struct KnowledgeDoc {
  std::string subject;
  std::string body;
};

enum class SearchCategory { kEncyclopedia, kOther };

struct SearchItem {
  std::string title;
  std::string content;
  SearchCategory category = SearchCategory::kOther;
};

constexpr int kKnowledgeCharLimit = 400;  // total knowledge text cap
constexpr int kItemContentLimit = 50;     // per search item content cap
constexpr int kDefaultTopDocs = 3;

struct KnowledgeText {
  std::u32string text;

  int length() const { return static_cast<int>(text.size()); }
  bool empty() const { return text.empty(); }
};

namespace detail {

using Bigram = std::uint64_t;

inline Bigram bigram(char32_t a, char32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

inline std::vector<Bigram> bigrams_of(const std::u32string& cps) {
  std::vector<Bigram> out;
  if (cps.size() < 2) return out;
  out.reserve(cps.size() - 1);
  for (std::size_t i = 0; i + 1 < cps.size(); ++i) out.push_back(bigram(cps[i], cps[i + 1]));
  return out;
}

}  // namespace detail

/// BM25-indexed corpus of per-subject documents. Immutable after build.
class KnowledgeBase {
public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  KnowledgeBase() = default;

  explicit KnowledgeBase(std::vector<KnowledgeDoc> docs) : docs_(std::move(docs)) {
    std::sort(docs_.begin(), docs_.end(),
              [](const KnowledgeDoc& a, const KnowledgeDoc& b) { return a.subject < b.subject; });
    doc_len_.reserve(docs_.size());
    double total_len = 0.0;
    for (std::size_t d = 0; d < docs_.size(); ++d) {
      const auto terms = detail::bigrams_of(decode_utf8(docs_[d].body));
      doc_len_.push_back(static_cast<double>(terms.size()));
      total_len += static_cast<double>(terms.size());
      std::unordered_map<detail::Bigram, int> tf;
      for (const auto t : terms) ++tf[t];
      for (const auto& [t, n] : tf) postings_[t].push_back({static_cast<int>(d), n});
    }
    avg_doc_len_ = docs_.empty() ? 0.0 : total_len / static_cast<double>(docs_.size());
  }

  std::size_t size() const { return docs_.size(); }
  const std::vector<KnowledgeDoc>& docs() const { return docs_; }

  struct Hit {
    KnowledgeDoc doc;
    double score = 0.0;
  };

  /// Okapi BM25 ranking; idf = ln((N-df+0.5)/(df+0.5)+1). Ties break on
  /// subject lexicographic order (documents are stored subject-sorted).
  std::vector<Hit> query(const std::string& text, int top_n = kDefaultTopDocs) const {
    std::vector<double> scores(docs_.size(), 0.0);
    auto qterms = detail::bigrams_of(decode_utf8(text));
    std::sort(qterms.begin(), qterms.end());
    qterms.erase(std::unique(qterms.begin(), qterms.end()), qterms.end());
    const double n_docs = static_cast<double>(docs_.size());
    for (const auto t : qterms) {
      const auto it = postings_.find(t);
      if (it == postings_.end()) continue;
      const double df = static_cast<double>(it->second.size());
      const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
      for (const auto& [d, tf] : it->second) {
        const double norm =
            avg_doc_len_ > 0.0 ? 1.0 - kB + kB * doc_len_[static_cast<std::size_t>(d)] / avg_doc_len_
                               : 1.0;
        scores[static_cast<std::size_t>(d)] +=
            idf * (static_cast<double>(tf) * (kK1 + 1.0)) / (static_cast<double>(tf) + kK1 * norm);
      }
    }
    std::vector<int> order(docs_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    const std::size_t n = std::min<std::size_t>(order.size(), top_n < 0 ? 0u : static_cast<std::size_t>(top_n));
    std::vector<Hit> hits;
    hits.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      hits.push_back({docs_[static_cast<std::size_t>(order[i])], scores[static_cast<std::size_t>(order[i])]});
    return hits;
  }

private:
  std::vector<KnowledgeDoc> docs_;  // sorted by subject
  std::vector<double> doc_len_;
  double avg_doc_len_ = 0.0;
  std::unordered_map<detail::Bigram, std::vector<std::pair<int, int>>> postings_;  // term -> (doc, tf)
};

/// Group triplets by subject and synthesize one document per subject:
/// subject + "。" + predicate-sorted "predicate:object。" clauses. Sorting
/// makes the body a pure function of the triplet multiset.
inline KnowledgeBase build_kb(const std::vector<Triplet>& triplets) {
  std::map<std::string, std::vector<const Triplet*>> by_subject;
  for (const auto& t : triplets) {
    if (t.subject.empty() || t.predicate.empty() || t.object.empty())
      throw DataError("build_kb: triplet fields must be nonempty");
    by_subject[t.subject].push_back(&t);
  }
  std::vector<KnowledgeDoc> docs;
  docs.reserve(by_subject.size());
  for (auto& [subject, group] : by_subject) {
    std::sort(group.begin(), group.end(), [](const Triplet* a, const Triplet* b) {
      return std::tie(a->predicate, a->object) < std::tie(b->predicate, b->object);
    });
    std::string body = subject + "。";
    for (const auto* t : group) body += t->predicate + ":" + t->object + "。";
    docs.push_back({subject, std::move(body)});
  }
  return KnowledgeBase(std::move(docs));
}

/// Triplet JSONL: one {"subject","predicate","object"} object per line.
inline std::vector<Triplet> read_triplets(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open triplet file: " + path);
  std::vector<Triplet> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("subject") || !j.contains("predicate") ||
        !j.contains("object"))
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed triplet line");
    out.push_back({j["subject"].get<std::string>(), j["predicate"].get<std::string>(),
                   j["object"].get<std::string>()});
  }
  return out;
}

/// On-disk KB layout: DIR/docs.jsonl ({"subject","body"} per line, subject
/// order) plus DIR/meta.json with the format version and BM25 parameters.
inline void save_kb(const KnowledgeBase& kb, const std::string& dir) {
  std::ofstream meta(dir + "/meta.json", std::ios::binary);
  std::ofstream docs(dir + "/docs.jsonl", std::ios::binary);
  if (!meta || !docs) throw DataError("cannot write knowledge base to " + dir);
  nlohmann::ordered_json m;
  m["version"] = 1;
  m["doc_count"] = kb.size();
  m["k1"] = KnowledgeBase::kK1;
  m["b"] = KnowledgeBase::kB;
  meta << m.dump(2) << '\n';
  for (const auto& d : kb.docs()) {
    nlohmann::ordered_json j;
    j["subject"] = d.subject;
    j["body"] = d.body;
    docs << j.dump() << '\n';
  }
}

inline KnowledgeBase load_kb(const std::string& dir) {
  std::ifstream meta_in(dir + "/meta.json", std::ios::binary);
  if (!meta_in) throw DataError("cannot open knowledge base meta: " + dir + "/meta.json");
  nlohmann::json meta = nlohmann::json::parse(meta_in, nullptr, false);
  if (meta.is_discarded() || meta.value("version", 0) != 1)
    throw DataError("unsupported knowledge base format in " + dir);
  std::ifstream in(dir + "/docs.jsonl", std::ios::binary);
  if (!in) throw DataError("cannot open knowledge base docs: " + dir + "/docs.jsonl");
  std::vector<KnowledgeDoc> docs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("subject") || !j.contains("body"))
      throw DataError(dir + "/docs.jsonl:" + std::to_string(line_no) + ": malformed doc line");
    docs.push_back({j["subject"].get<std::string>(), j["body"].get<std::string>()});
  }
  return KnowledgeBase(std::move(docs));
}

/// Replayable search-engine fixture: exact-match query lookup. The seam where
/// a live search client could plug in later.
class SearchCache {
public:
  SearchCache() = default;
  SearchCache(SearchCache&& other) noexcept
      : entries_(std::move(other.entries_)), misses_(other.misses_.load()) {}
  SearchCache& operator=(SearchCache&& other) noexcept {
    entries_ = std::move(other.entries_);
    misses_.store(other.misses_.load());
    return *this;
  }

  void insert(std::string query, std::vector<SearchItem> items) {
    entries_[std::move(query)] = std::move(items);
  }

  /// Missing keys return the empty list and bump the miss counter.
  std::vector<SearchItem> lookup(const std::string& query) const {
    const auto it = entries_.find(query);
    if (it == entries_.end()) {
      misses_.fetch_add(1, std::memory_order_relaxed);
      return {};
    }
    return it->second;
  }

  std::uint64_t misses() const { return misses_.load(std::memory_order_relaxed); }
  std::size_t size() const { return entries_.size(); }

private:
  std::unordered_map<std::string, std::vector<SearchItem>> entries_;
  mutable std::atomic<std::uint64_t> misses_{0};
};

/// Cache JSONL: {"query","items":[{"title","content","category"}]} per line.
inline SearchCache read_search_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open cache file: " + path);
  SearchCache cache;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("query") || !j.contains("items"))
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed cache line");
    std::vector<SearchItem> items;
    for (const auto& item : j["items"]) {
      SearchItem s;
      s.title = item.at("title").get<std::string>();
      s.content = item.at("content").get<std::string>();
      const std::string cat = item.at("category").get<std::string>();
      s.category = cat == "encyclopedia" ? SearchCategory::kEncyclopedia : SearchCategory::kOther;
      items.push_back(std::move(s));
    }
    cache.insert(j["query"].get<std::string>(), std::move(items));
  }
  return cache;
}

/// Search-result assembly: encyclopedia items first (stable partition, the
/// relative order of everything else is preserved), each item rendered as
/// "title:content" with content cut to 50 characters, items joined by "|",
/// total capped at 400 characters.
inline KnowledgeText assemble_knowledge(const std::vector<SearchItem>& items) {
  std::vector<const SearchItem*> ordered;
  ordered.reserve(items.size());
  for (const auto& it : items)
    if (it.category == SearchCategory::kEncyclopedia) ordered.push_back(&it);
  for (const auto& it : items)
    if (it.category != SearchCategory::kEncyclopedia) ordered.push_back(&it);

  std::u32string text;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (i > 0) text.push_back(U'|');
    text += decode_utf8(ordered[i]->title);
    text.push_back(U':');
    const std::u32string content = decode_utf8(ordered[i]->content);
    text += truncate_cp(content, kItemContentLimit);
  }
  return {truncate_cp(text, kKnowledgeCharLimit)};
}

/// KB assembly: document bodies joined by "|", capped at 400 characters.
inline KnowledgeText assemble_knowledge(const std::vector<KnowledgeBase::Hit>& hits) {
  std::u32string text;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (i > 0) text.push_back(U'|');
    text += decode_utf8(hits[i].doc.body);
  }
  return {truncate_cp(text, kKnowledgeCharLimit)};
}

}  // namespace turner
