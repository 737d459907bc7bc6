#include <catch2/catch_amalgamated.hpp>

#include "support/oracles.hpp"
#include "turner/uncertainty.hpp"

using namespace turner;

namespace {

Sentence sent(std::u32string chars) { return {std::move(chars)}; }

std::map<char32_t, int> vocab_of(const std::u32string& chars) {
  std::map<char32_t, int> v;
  int next = TaggerModel::kFirstCharId;
  for (char32_t c : chars) v.emplace(c, 0);
  for (auto& [c, id] : v) id = next++;
  return v;
}

// Model whose lattice rows are all identical: logits equal the output bias.
// Lets tests pin the exact candidate ranking.
TaggerModel bias_only_model(const LabelScheme& scheme, std::vector<double> bias, double dropout) {
  TaggerConfig cfg;
  cfg.d_emb = 4;
  cfg.d_hid = 4;
  cfg.window = 1;
  cfg.dropout = dropout;
  cfg.seed = 1;
  TaggerModel m = init_tagger(scheme, vocab_of(U"abc"), cfg);
  std::fill(m.emb.begin(), m.emb.end(), 0.0);
  std::fill(m.w1.begin(), m.w1.end(), 0.0);
  std::fill(m.b1.begin(), m.b1.end(), 0.0);
  std::fill(m.w2.begin(), m.w2.end(), 0.0);
  m.b2 = std::move(bias);
  return m;
}

ProvisionalResult prov_of(const Sentence& x, const LabelSequence& l_p, const LabelScheme& s) {
  return {x, l_p, extract_spans(l_p, s)};
}

}  // namespace

TEST_CASE("mc_sample: dropout 0 makes every candidate the provisional result") {
  const LabelScheme s({"X"});
  const auto model = bias_only_model(s, {0.0, -1.0, -9.0, -9.0, -2.0}, 0.0);
  const auto [prov, cands] = mc_sample(model, sent(U"abca"), 4, 99);
  CHECK(cands.raw_generated == 4);
  REQUIRE(cands.candidates.size() == 4);
  for (const auto& c : cands.candidates) CHECK(c == prov.l_p);
  CHECK(uncertain_entities(prov, cands, s).empty());
}

TEST_CASE("mc_sample is deterministic under a fixed base seed") {
  const LabelScheme s({"X"});
  const auto model = bias_only_model(s, {0.0, -0.2, -9.0, -0.3, -0.1}, 0.4);
  const auto [prov_a, cands_a] = mc_sample(model, sent(U"abcab"), 6, 1234);
  const auto [prov_b, cands_b] = mc_sample(model, sent(U"abcab"), 6, 1234);
  CHECK(prov_a.l_p == prov_b.l_p);
  CHECK(cands_a.candidates == cands_b.candidates);
  for (const auto& c : cands_a.candidates) CHECK(s.is_legal(c));
  CHECK_THROWS_AS(mc_sample(model, sent(U"ab"), 0, 1), DataError);
}

TEST_CASE("topk_sample drops candidates at Hamming distance one") {
  const LabelScheme s({"X"});
  // Identical rows, O best then S-X: ranks 1..3 are single S flips (dropped),
  // rank 4 is the first double flip (kept).
  const auto model = bias_only_model(s, {0.0, -9.0, -9.0, -9.0, -1.0}, 0.0);
  const auto [prov, cands] = topk_sample(model, sent(U"abc"), 5);
  CHECK(prov.l_p == LabelSequence{0, 0, 0});
  CHECK(cands.raw_generated == 4);
  REQUIRE(cands.candidates.size() == 1);
  const int sx = s.label_id(Role::S, 0);
  CHECK(cands.candidates[0] == LabelSequence{sx, sx, 0});
  CHECK(hamming(cands.candidates[0], prov.l_p) == 2);
  CHECK_THROWS_AS(topk_sample(model, sent(U"abc"), 1), DataError);
}

TEST_CASE("uncertain_entities is the symmetric difference of span sets") {
  const LabelScheme s({"X", "Y"});
  const Sentence x = sent(U"abcab");
  const int bx = s.label_id(Role::B, 0), ex = s.label_id(Role::E, 0),
            ix = s.label_id(Role::I, 0);
  const int by = s.label_id(Role::B, 1), ey = s.label_id(Role::E, 1);

  const auto prov = prov_of(x, {bx, ex, 0, 0, 0}, s);
  SECTION("identical sequences yield nothing") {
    CHECK(uncertain_entities(prov, {bx, ex, 0, 0, 0}, s).empty());
  }
  SECTION("boundary disagreement keeps both readings") {
    CHECK(uncertain_entities(prov, {bx, ix, ex, 0, 0}, s) ==
          std::set<EntitySpan>{{0, 1, 0}, {0, 2, 0}});
  }
  SECTION("type disagreement keeps both readings") {
    CHECK(uncertain_entities(prov, {by, ey, 0, 0, 0}, s) ==
          std::set<EntitySpan>{{0, 1, 0}, {0, 1, 1}});
  }
  SECTION("length mismatch is an error") {
    CHECK_THROWS_AS(uncertain_entities(prov, {0, 0}, s), MismatchError);
  }
}

TEST_CASE("merge_components unions overlapping and adjacent spans") {
  const Sentence x = sent(U"abcdefgh");
  SECTION("adjacent spans merge") {
    const auto comps = merge_components({{0, 1, 0}, {2, 3, 0}}, x);
    REQUIRE(comps.size() == 1);
    CHECK(comps[0].start == 0);
    CHECK(comps[0].end == 3);
    CHECK(comps[0].text == U"abcd");
  }
  SECTION("a gap of one keeps spans apart") {
    const auto comps = merge_components({{0, 1, 0}, {3, 4, 0}}, x);
    REQUIRE(comps.size() == 2);
    CHECK(comps[0].end == 1);
    CHECK(comps[1].start == 3);
  }
  SECTION("chained overlap collapses to one component") {
    const auto comps = merge_components({{0, 2, 0}, {1, 4, 1}, {6, 6, 0}}, x);
    REQUIRE(comps.size() == 2);
    CHECK(comps[0].start == 0);
    CHECK(comps[0].end == 4);
    CHECK(comps[1].start == 6);
    CHECK(comps[1].end == 6);
    CHECK(comps[1].text == U"g");
  }
}

TEST_CASE("merge_components properties over random span sets") {
  Rng rng(4040);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(14));
    Sentence x;
    for (int i = 0; i < n; ++i) x.chars.push_back(static_cast<char32_t>(U'a' + (i % 26)));
    std::set<EntitySpan> spans;
    const int count = static_cast<int>(rng.below(6));
    for (int i = 0; i < count; ++i) {
      const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      const int end = std::min(n - 1, start + static_cast<int>(rng.below(4)));
      spans.insert({start, end, static_cast<int>(rng.below(2))});
    }
    const auto comps = merge_components(spans, x);

    // Disjoint, non-adjacent, sorted.
    for (std::size_t i = 0; i + 1 < comps.size(); ++i)
      CHECK(comps[i].end + 1 < comps[i + 1].start);
    // Every span is covered by exactly one component.
    for (const auto& sp : spans) {
      int covering = 0;
      for (const auto& c : comps) covering += (sp.start >= c.start && sp.end <= c.end);
      CHECK(covering == 1);
    }
    // Idempotence: merging the components again changes nothing.
    std::set<EntitySpan> as_spans;
    for (const auto& c : comps) as_spans.insert({c.start, c.end, 0});
    const auto again = merge_components(as_spans, x);
    REQUIRE(again.size() == comps.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
      CHECK(again[i].start == comps[i].start);
      CHECK(again[i].end == comps[i].end);
      CHECK(again[i].text == comps[i].text);
    }
  }
}
