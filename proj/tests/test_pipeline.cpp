#include <catch2/catch_amalgamated.hpp>

#include "support/synthetic.hpp"
#include "turner/pipeline.hpp"

using namespace turner;

namespace {

// Small ambiguous world: entity chars vs context chars, types learnable only
// partially, so a weakly trained tagger produces real uncertainty.
turner::testing::SynthData small_world() {
  turner::testing::SynthSpec spec;
  spec.seed = 97;
  spec.entity_subjects = 30;
  spec.train_pool = 22;
  spec.train_sentences = 60;
  spec.dev_sentences = 10;
  spec.test_sentences = 20;
  spec.entity_rate = 0.5;
  return turner::testing::make_synthetic(spec);
}

RunConfig small_cfg(const turner::testing::SynthData& world) {
  RunConfig cfg;
  cfg.entity_types = world.scheme.entity_types();
  cfg.method = SamplingMethod::kMcDropout;
  cfg.k = 4;
  cfg.dropout = 0.3;
  cfg.folds = 3;
  cfg.checkpoints = 2;
  cfg.seed = 5;
  cfg.tagger.d_emb = 8;
  cfg.tagger.d_hid = 16;
  cfg.tagger.epochs = 40;
  cfg.tagger.batch = 8;
  cfg.tagger.lr = 0.3;
  cfg.fusion.d_model = 8;
  cfg.fusion.layers = 1;
  cfg.fusion.d_ff = 8;
  cfg.fusion.epochs = 1;
  cfg.fusion.seed = 6;
  return cfg;
}

}  // namespace

TEST_CASE("overlap_ratio is the Jaccard of inclusive ranges") {
  CHECK(overlap_ratio(0, 3, 0, 3) == 1.0);
  CHECK(overlap_ratio(0, 1, 4, 5) == 0.0);
  CHECK(overlap_ratio(0, 3, 2, 5) == Catch::Approx(2.0 / 6.0).margin(1e-12));
  CHECK_THROWS_AS(overlap_ratio(3, 1, 0, 0), DataError);
}

TEST_CASE("retrieve_for: cache first in both mode, KB fallback on miss") {
  const auto kb = build_kb({{"甲乙", "类型", "机构"}});
  SearchCache cache;
  cache.insert("甲乙", {{"标题", "缓存内容", SearchCategory::kEncyclopedia}});
  KnowledgeSources sources{&kb, &cache};

  const auto hit = retrieve_for(U"甲乙", RetrievalMode::kBoth, sources, 3);
  CHECK(encode_utf8(hit.text).find("缓存内容") != std::string::npos);

  const auto fallback = retrieve_for(U"乙甲", RetrievalMode::kBoth, sources, 3);
  CHECK(encode_utf8(fallback.text).find("机构") != std::string::npos);

  const auto cache_only = retrieve_for(U"乙甲", RetrievalMode::kCache, sources, 3);
  CHECK(cache_only.empty());

  const auto kb_only = retrieve_for(U"甲乙", RetrievalMode::kKb, sources, 3);
  CHECK(encode_utf8(kb_only.text).find("机构") != std::string::npos);
}

TEST_CASE("predict returns the provisional result when nothing is uncertain") {
  const auto world = small_world();
  auto cfg = small_cfg(world);
  cfg.dropout = 0.0;  // dropout 0: every candidate equals the provisional pass

  const auto base = train_tagger(world.train, world.dev, cfg.tagger, world.scheme);
  const FusionModel fusion = init_fusion(world.scheme, {}, cfg.fusion);
  const KnowledgeSources sources;

  for (int i = 0; i < 10; ++i) {
    const auto& x = world.test[static_cast<std::size_t>(i)].x;
    const auto trace = predict_traced(x, base.model, fusion, sources, cfg, 123);
    CHECK_FALSE(trace.fused);
    CHECK(trace.components.empty());
    CHECK(trace.final ==
          viterbi(score(base.model, x, ScorerMode::deterministic()), world.scheme).seq);
  }
}

TEST_CASE("gen_stage2: no leak, overlap discard, determinism") {
  const auto world = small_world();
  const auto cfg = small_cfg(world);
  const auto kb = build_kb(world.triplets);
  const KnowledgeSources sources{&kb, nullptr};

  const auto folds = train_folds(world.train, cfg);
  REQUIRE(folds.models.size() == 3);
  for (const auto& m : folds.models) REQUIRE(m.checkpoints.size() == 2);

  // Every sentence is held out of exactly one fold.
  for (std::size_t idx = 0; idx < world.train.size(); ++idx) {
    int held = 0;
    for (int f = 0; f < cfg.folds; ++f) held += folds.held_out(f, idx);
    CHECK(held == 1);
  }

  const auto records = sample_stage2(world.train, folds, sources, cfg);
  REQUIRE_FALSE(records.empty());
  for (const auto& rec : records) {
    REQUIRE_FALSE(rec.components.empty());
    CHECK(rec.components.size() == rec.knowledge.size());
    CHECK(world.scheme.is_legal(rec.provisional));
    CHECK(rec.provisional.size() == static_cast<std::size_t>(rec.x.length()));
    // Kept components never overlap an earlier one at or above theta.
    for (std::size_t a = 0; a < rec.components.size(); ++a)
      for (std::size_t b = a + 1; b < rec.components.size(); ++b)
        CHECK(overlap_ratio(rec.components[a].start, rec.components[a].end,
                            rec.components[b].start, rec.components[b].end) <
              cfg.overlap_threshold);
  }

  const auto again = gen_stage2(world.train, sources, cfg);
  REQUIRE(again.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(again[i].x.chars == records[i].x.chars);
    CHECK(again[i].provisional == records[i].provisional);
    CHECK(again[i].components.size() == records[i].components.size());
  }
}

TEST_CASE("gen_stage2 rejects corpora smaller than the fold count") {
  const auto world = small_world();
  auto cfg = small_cfg(world);
  cfg.folds = 5;
  std::vector<Example> tiny(world.train.begin(), world.train.begin() + 3);
  CHECK_THROWS_AS(gen_stage2(tiny, {}, cfg), DataError);
}

TEST_CASE("stage-two records survive a JSONL round trip") {
  const auto world = small_world();
  const auto cfg = small_cfg(world);
  const auto kb = build_kb(world.triplets);
  const auto records = gen_stage2(world.train, {&kb, nullptr}, cfg);
  REQUIRE_FALSE(records.empty());

  const auto path =
      (std::filesystem::temp_directory_path() / "turner_records_roundtrip.jsonl").string();
  write_stage2_records(path, records, world.scheme);
  const auto loaded = read_stage2_records(path, world.scheme);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].x.chars == records[i].x.chars);
    CHECK(loaded[i].gold == records[i].gold);
    CHECK(loaded[i].provisional == records[i].provisional);
    REQUIRE(loaded[i].components.size() == records[i].components.size());
    for (std::size_t c = 0; c < records[i].components.size(); ++c) {
      CHECK(loaded[i].components[c].start == records[i].components[c].start);
      CHECK(loaded[i].components[c].end == records[i].components[c].end);
      CHECK(loaded[i].components[c].text == records[i].components[c].text);
      CHECK(loaded[i].knowledge[c].text == records[i].knowledge[c].text);
    }
  }
  std::filesystem::remove(path);

  const auto samples = fused_samples_from_records(records, world.scheme, 128);
  std::size_t expected = 0;
  for (const auto& r : records) expected += r.components.size();
  CHECK(samples.size() == expected);
  for (const auto& s : samples) {
    CHECK(s.gold.size() == static_cast<std::size_t>(s.n));
    CHECK(s.components.size() == 1);  // one group per component
  }
}

TEST_CASE("a decisive KB entry corrects provisional errors at predict time") {
  const auto world = small_world();
  auto cfg = small_cfg(world);
  cfg.fusion.d_model = 16;
  cfg.fusion.d_ff = 32;
  cfg.fusion.lr = 0.1;
  cfg.fusion.epochs = 12;
  cfg.fusion.batch = 8;
  cfg.retrieval = RetrievalMode::kKb;
  const auto kb = build_kb(world.triplets);
  const KnowledgeSources sources{&kb, nullptr};

  const auto base = train_tagger(world.train, world.dev, cfg.tagger, world.scheme);
  const auto records = gen_stage2(world.train, sources, cfg);
  REQUIRE_FALSE(records.empty());
  const auto samples = fused_samples_from_records(records, world.scheme, cfg.fusion.max_seq_len);
  const auto fusion = train_fusion(samples, {}, cfg.fusion, world.scheme);

  // Across the test split, some sentence must have a wrong provisional label
  // that the knowledge-backed re-prediction fixes.
  int corrected = 0;
  for (std::size_t i = 0; i < world.test.size(); ++i) {
    const auto trace =
        predict_traced(world.test[i].x, base.model, fusion, sources, cfg,
                       mix_seed(cfg.seed, 0x94ED1C7ULL, i));
    if (!trace.fused) continue;
    const auto& gold = world.test[i].gold;
    if (trace.provisional.l_p != gold && trace.final == gold) ++corrected;
  }
  CHECK(corrected >= 1);
}

TEST_CASE("predict_corpus is independent of the worker count") {
  const auto world = small_world();
  auto cfg = small_cfg(world);
  const auto base = train_tagger(world.train, world.dev, cfg.tagger, world.scheme);
  const auto kb = build_kb(world.triplets);
  const KnowledgeSources sources{&kb, nullptr};

  const auto records = gen_stage2(world.train, sources, cfg);
  const auto samples = fused_samples_from_records(records, world.scheme, cfg.fusion.max_seq_len);
  const FusionModel fusion = samples.empty()
                                 ? init_fusion(world.scheme, {}, cfg.fusion)
                                 : train_fusion(samples, {}, cfg.fusion, world.scheme);

  std::vector<Sentence> sentences;
  for (const auto& ex : world.test) sentences.push_back(ex.x);

  cfg.jobs = 1;
  const auto serial = predict_corpus(sentences, base.model, fusion, sources, cfg);
  cfg.jobs = 2;
  const auto parallel = predict_corpus(sentences, base.model, fusion, sources, cfg);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].final == parallel[i].final);
    CHECK(serial[i].components.size() == parallel[i].components.size());
  }
}

TEST_CASE("report_from_traces aggregates the metric set") {
  const auto world = small_world();
  auto cfg = small_cfg(world);
  cfg.dropout = 0.0;
  const auto base = train_tagger(world.train, world.dev, cfg.tagger, world.scheme);
  const FusionModel fusion = init_fusion(world.scheme, {}, cfg.fusion);

  std::vector<Sentence> sentences;
  std::vector<LabelSequence> gold;
  for (const auto& ex : world.test) {
    sentences.push_back(ex.x);
    gold.push_back(ex.gold);
  }
  const auto traces = predict_corpus(sentences, base.model, fusion, {}, cfg);
  const auto rep = report_from_traces(traces, gold, world.scheme);
  REQUIRE(rep.oracle_f1.has_value());
  CHECK(rep.entity.f1 <= *rep.oracle_f1 + 1e-12);
  REQUIRE(rep.sar.has_value());
  CHECK(*rep.sar == 0.0);  // dropout 0: no candidate differs
  CHECK(*rep.vsr == 0.0);
  CHECK(rep.size_u == 0);
  CHECK(rep.num_uc == 0);
}
