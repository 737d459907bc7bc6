#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support/oracles.hpp"
#include "turner/decoder.hpp"

using namespace turner;
using turner::testing::enumerate_legal;
using turner::testing::random_lattice;

namespace {

// 2 positions x {O, B-X, E-X}, the worked example: the best legal path is
// [O,O] because [B-X,E-X] scores -3.1 and a lone B-X cannot end a sequence.
TagLattice worked_lattice() {
  TagLattice lat(2, 5);  // scheme {X}: O B-X I-X E-X S-X
  lat.at(0, 0) = -0.5;
  lat.at(0, 1) = -0.1;
  lat.at(0, 2) = -9.0;
  lat.at(0, 3) = -9.0;
  lat.at(0, 4) = -9.0;
  lat.at(1, 0) = -0.1;
  lat.at(1, 1) = -9.0;
  lat.at(1, 2) = -9.0;
  lat.at(1, 3) = -3.0;
  lat.at(1, 4) = -9.0;
  return lat;
}

}  // namespace

TEST_CASE("viterbi picks the best legal sequence") {
  const LabelScheme s({"X"});
  const auto lat = worked_lattice();
  const auto oracle = enumerate_legal(lat, s);
  const auto best = viterbi(lat, s);
  REQUIRE_FALSE(oracle.empty());
  CHECK(best.seq == oracle.front().seq);
  CHECK(best.seq == LabelSequence{0, 0});
  CHECK(best.score == Catch::Approx(-0.6).margin(1e-12));
}

TEST_CASE("viterbi: all-O dominant lattice and single-position case") {
  const LabelScheme s({"X"});
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto lat = random_lattice(rng, 1 + static_cast<int>(rng.below(5)), s.num_labels());
    for (int i = 0; i < lat.length(); ++i) lat.at(i, 0) = 1.0;  // O dominates
    CHECK(viterbi(lat, s).seq == LabelSequence(static_cast<std::size_t>(lat.length()), 0));
  }

  TagLattice one(1, 5);
  one.at(0, 0) = -2.0;
  one.at(0, 1) = -9.0;
  one.at(0, 2) = -9.0;
  one.at(0, 3) = -9.0;
  one.at(0, 4) = -0.2;
  const auto best = viterbi(one, s);
  CHECK(best.seq == LabelSequence{4});
  CHECK(best.score == Catch::Approx(-0.2));
}

TEST_CASE("empty lattice is an error") {
  const LabelScheme s({"X"});
  CHECK_THROWS_AS(viterbi(TagLattice(0, 5), s), DataError);
  CHECK_THROWS_AS(topk_viterbi(TagLattice(0, 5), s, 3), DataError);
}

TEST_CASE("topk_viterbi matches the worked example") {
  const LabelScheme s({"X"});
  const auto ranked = topk_viterbi(worked_lattice(), s, 2);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].seq == LabelSequence{0, 0});
  CHECK(ranked[0].score == Catch::Approx(-0.6).margin(1e-12));
  CHECK(ranked[1].seq == LabelSequence{1, 3});  // B-X E-X
  CHECK(ranked[1].score == Catch::Approx(-3.1).margin(1e-12));
}

TEST_CASE("topk_viterbi equals exhaustive enumeration on random lattices") {
  Rng rng(123);
  for (int trial = 0; trial < 120; ++trial) {
    const int num_types = 1 + static_cast<int>(rng.below(2));
    const LabelScheme s(num_types == 1 ? std::vector<std::string>{"X"}
                                       : std::vector<std::string>{"X", "Y"});
    const int n = 1 + static_cast<int>(rng.below(6));
    const auto lat = random_lattice(rng, n, s.num_labels());
    const auto oracle = enumerate_legal(lat, s);
    const int k = 1 + static_cast<int>(rng.below(10));
    const auto ranked = topk_viterbi(lat, s, k);

    const std::size_t expect = std::min<std::size_t>(oracle.size(), static_cast<std::size_t>(k));
    REQUIRE(ranked.size() == expect);
    for (std::size_t i = 0; i < expect; ++i) {
      CHECK(ranked[i].seq == oracle[i].seq);
      CHECK(std::abs(ranked[i].score - oracle[i].score) < 1e-9);
    }
    CHECK(ranked.front().seq == viterbi(lat, s).seq);
  }
}

TEST_CASE("topk lists: monotone scores, distinct legal sequences, prefix property") {
  Rng rng(321);
  const LabelScheme s({"X", "Y"});
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(6));
    const auto lat = random_lattice(rng, n, s.num_labels());
    const auto more = topk_viterbi(lat, s, 8);
    const auto fewer = topk_viterbi(lat, s, 7);
    REQUIRE(fewer.size() <= more.size());
    for (std::size_t i = 0; i < fewer.size(); ++i) CHECK(fewer[i].seq == more[i].seq);
    for (std::size_t i = 0; i < more.size(); ++i) {
      CHECK(s.is_legal(more[i].seq));
      if (i > 0) CHECK(more[i - 1].score >= more[i].score);
      for (std::size_t j = i + 1; j < more.size(); ++j) CHECK(more[i].seq != more[j].seq);
    }
  }
}

TEST_CASE("k larger than the number of legal sequences returns them all") {
  const LabelScheme s({"X", "Y"});
  Rng rng(55);
  const auto lat = random_lattice(rng, 2, s.num_labels());
  const auto oracle = enumerate_legal(lat, s);
  const auto ranked = topk_viterbi(lat, s, 10000);
  REQUIRE(ranked.size() == oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(ranked[i].seq == oracle[i].seq);
}

TEST_CASE("scores equal the sum of selected log probabilities") {
  Rng rng(99);
  const LabelScheme s({"X"});
  const auto lat = random_lattice(rng, 5, s.num_labels());
  for (const auto& cand : topk_viterbi(lat, s, 6)) {
    double sum = 0.0;
    for (int i = 0; i < lat.length(); ++i) sum += lat.at(i, cand.seq[static_cast<std::size_t>(i)]);
    CHECK(cand.score == Catch::Approx(sum).margin(1e-12));
  }
}
