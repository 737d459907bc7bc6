#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "turner/corpus.hpp"
#include "turner/utf8.hpp"

namespace fs = std::filesystem;
using namespace turner;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const auto path = (fs::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("utf8 round trip and validation") {
  const std::string text = "亚太经合组织apec123";
  CHECK(encode_utf8(decode_utf8(text)) == text);
  CHECK(utf8_length(text) == 13);
  CHECK(truncate_cp(decode_utf8(text), 4) == U"亚太经合");

  CHECK_THROWS_AS(decode_utf8("\xE4\xBA"), DataError);      // truncated sequence
  CHECK_THROWS_AS(decode_utf8("\x80xyz"), DataError);       // stray continuation
  CHECK_THROWS_AS(decode_utf8("\xC0\xAF"), DataError);      // overlong encoding
}

TEST_CASE("corpus read/write round trip with multi-byte characters") {
  const LabelScheme scheme({"ORG"});
  const std::string path = write_temp("turner_corpus_rt.tsv",
                                      "中\tB-ORG\n国\tE-ORG\n好\tO\n\n人\tS-ORG\n\n");
  const auto corpus = read_corpus(path, scheme, 128);
  REQUIRE(corpus.size() == 2);
  CHECK(corpus[0].x.chars == U"中国好");
  CHECK(corpus[0].gold == LabelSequence{scheme.find_label("B-ORG"), scheme.find_label("E-ORG"), 0});
  CHECK(corpus[1].x.chars == U"人");

  const std::string out = (fs::temp_directory_path() / "turner_corpus_out.tsv").string();
  write_corpus(out, {corpus[0].x, corpus[1].x}, {corpus[0].gold, corpus[1].gold}, scheme);
  const auto again = read_corpus(out, scheme, 128);
  REQUIRE(again.size() == 2);
  CHECK(again[0].gold == corpus[0].gold);
  fs::remove(path);
  fs::remove(out);
}

TEST_CASE("corpus parse errors carry line numbers") {
  const LabelScheme scheme({"ORG"});
  const std::string two_chars = write_temp("turner_corpus_bad1.tsv", "中\tO\n国人\tO\n\n");
  try {
    read_corpus(two_chars, scheme, 128);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  fs::remove(two_chars);

  const std::string missing = write_temp("turner_corpus_bad2.tsv", "中\n\n");
  CHECK_THROWS_AS(read_corpus(missing, scheme, 128, /*labels_required=*/true), DataError);
  const auto lenient = read_corpus(missing, scheme, 128, /*labels_required=*/false);
  REQUIRE(lenient.size() == 1);
  CHECK(lenient[0].gold == LabelSequence{LabelScheme::kOutsideId});
  fs::remove(missing);

  const std::string alien = write_temp("turner_corpus_bad3.tsv", "中\tB-LOC\n\n");
  CHECK_THROWS_AS(read_corpus(alien, scheme, 128), MismatchError);
  fs::remove(alien);
}

TEST_CASE("max sentence length is enforced at load") {
  const LabelScheme scheme({"ORG"});
  std::string content;
  for (int i = 0; i < 6; ++i) content += "中\tO\n";
  content += "\n";
  const std::string path = write_temp("turner_corpus_long.tsv", content);
  CHECK_THROWS_AS(read_corpus(path, scheme, 5), DataError);
  CHECK(read_corpus(path, scheme, 6).size() == 1);
  CHECK(read_corpus(path, scheme, 0).size() == 1);  // 0 disables the cap
  fs::remove(path);
}
