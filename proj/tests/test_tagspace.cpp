#include <catch2/catch_amalgamated.hpp>

#include "support/oracles.hpp"
#include "turner/tagspace.hpp"

using namespace turner;

namespace {

int label(const LabelScheme& s, const std::string& name) {
  const int id = s.find_label(name);
  REQUIRE(id >= 0);
  return id;
}

}  // namespace

TEST_CASE("scheme layout: O is id 0, labels dense") {
  const LabelScheme s({"PER", "LOC"});
  CHECK(s.num_labels() == 9);
  CHECK(s.find_label("O") == LabelScheme::kOutsideId);
  CHECK(s.labels().front() == "O");
  for (int id = 0; id < s.num_labels(); ++id)
    CHECK(s.find_label(s.label_name(id)) == id);
}

TEST_CASE("transition rule") {
  const LabelScheme s({"PER", "LOC"});
  CHECK(s.transition_allowed(label(s, "O"), label(s, "B-PER")));
  CHECK_FALSE(s.transition_allowed(label(s, "B-PER"), label(s, "I-LOC")));
  CHECK_FALSE(s.transition_allowed(label(s, "E-PER"), label(s, "I-PER")));
  CHECK(s.transition_allowed(label(s, "B-PER"), label(s, "E-PER")));
  CHECK(s.transition_allowed(label(s, "S-LOC"), label(s, "S-PER")));
  CHECK_FALSE(s.transition_allowed(label(s, "O"), label(s, "I-PER")));
  CHECK_FALSE(s.transition_allowed(label(s, "O"), label(s, "E-PER")));
  CHECK_THROWS_AS(s.transition_allowed(0, 99), MismatchError);
}

TEST_CASE("extract_spans reads BIESO runs") {
  const LabelScheme s({"X", "Y"});
  const LabelSequence seq{label(s, "B-X"), label(s, "E-X"), label(s, "O"), label(s, "S-Y")};
  CHECK(extract_spans(seq, s) == std::set<EntitySpan>{{0, 1, 0}, {3, 3, 1}});

  CHECK(extract_spans({0, 0, 0}, s).empty());

  const LabelSequence singles{label(s, "S-X"), label(s, "S-X")};
  CHECK(extract_spans(singles, s) == std::set<EntitySpan>{{0, 0, 0}, {1, 1, 0}});

  const LabelSequence illegal{label(s, "I-X"), label(s, "E-X")};
  CHECK_THROWS_AS(extract_spans(illegal, s), DataError);
}

TEST_CASE("spans_to_labels inverts extraction") {
  const LabelScheme s({"X", "Y"});
  CHECK(spans_to_labels({{0, 1, 0}}, 3, s) ==
        LabelSequence{label(s, "B-X"), label(s, "E-X"), label(s, "O")});
  CHECK(spans_to_labels({}, 2, s) == LabelSequence{0, 0});
  CHECK(spans_to_labels({{1, 1, 1}}, 2, s) == LabelSequence{label(s, "O"), label(s, "S-Y")});
  CHECK_THROWS_AS(spans_to_labels({{0, 2, 0}, {2, 3, 1}}, 5, s), DataError);
  CHECK_THROWS_AS(spans_to_labels({{0, 5, 0}}, 3, s), DataError);
}

TEST_CASE("round trip and legality closure over random span sets") {
  const LabelScheme s({"X", "Y"});
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(12));
    const auto spans = turner::testing::random_disjoint_spans(rng, n, s.num_types());
    const LabelSequence seq = spans_to_labels(spans, n, s);
    CHECK(s.is_legal(seq));
    CHECK(extract_spans(seq, s) == spans);
  }
}
