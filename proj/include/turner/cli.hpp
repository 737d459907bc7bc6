#pragma once

// Operator surface. Subcommands: train-base, gen-stage2, train-fusion,
// kb-build, kb-query, sample, predict, evaluate, sweep. Every flag overrides
// the matching config key. Exit codes: 0 success, 1 usage, 2 data/format
// error, 3 model/config mismatch.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "turner/config.hpp"
#include "turner/corpus.hpp"
#include "turner/errors.hpp"
#include "turner/evalkit.hpp"
#include "turner/fusion.hpp"
#include "turner/pipeline.hpp"
#include "turner/retrieval.hpp"
#include "turner/sweep.hpp"
#include "turner/tagger.hpp"

namespace turner::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitMismatch = 3;

namespace detail {

// Storage for flags shared across subcommands; only flags the user actually
// passed override the config.
struct SharedOpts {
  CLI::App* sub = nullptr;
  std::string config_path;
  std::string entity_types;  // comma separated
  std::string method;
  std::string retrieval;
  int k = 0;
  int folds = 0;
  int checkpoints = 0;
  int top_docs = 0;
  int jobs = 0;
  double dropout = 0.0;
  double alpha = 0.0;
  double overlap = 0.0;
  std::uint64_t seed = 0;
  std::string kb_dir, cache_file, base_model, fusion_model;

  void attach(CLI::App* s, bool seed_required) {
    sub = s;
    s->add_option("--config", config_path, "JSON config file; flags override its keys");
    s->add_option("--entity-types", entity_types, "comma-separated entity type names");
    s->add_option("--method", method, "sampling method: mc_dropout|topk");
    s->add_option("--retrieval", retrieval, "knowledge source: kb|cache|both");
    s->add_option("--k", k, "candidate count");
    s->add_option("--dropout", dropout, "sampling-time dropout rate");
    s->add_option("--alpha", alpha, "loss weight for confident positions");
    s->add_option("--folds", folds, "jackknife fold count N");
    s->add_option("--checkpoints", checkpoints, "augmentation checkpoint count E");
    s->add_option("--overlap-threshold", overlap, "component overlap discard threshold");
    s->add_option("--top-docs", top_docs, "BM25 documents per query");
    s->add_option("--jobs", jobs, "worker thread cap");
    auto* seed_opt = s->add_option("--seed", seed, "random seed");
    if (seed_required) seed_opt->required();
    s->add_option("--kb", kb_dir, "knowledge base directory");
    s->add_option("--cache", cache_file, "search cache JSONL file");
    s->add_option("--base-model", base_model, "base tagger model file");
    s->add_option("--fusion-model", fusion_model, "fusion model file");
  }

  AppConfig resolve() const {
    AppConfig cfg = config_path.empty() ? AppConfig{} : load_config(config_path);
    const auto set = [this](const std::string& name) { return sub->count(name) > 0; };
    if (set("--entity-types")) {
      cfg.run.entity_types.clear();
      std::stringstream ss(entity_types);
      std::string part;
      while (std::getline(ss, part, ','))
        if (!part.empty()) cfg.run.entity_types.push_back(part);
    }
    if (set("--method")) cfg.run.method = parse_method(method);
    if (set("--retrieval")) cfg.run.retrieval = parse_retrieval(retrieval);
    if (set("--k")) cfg.run.k = k;
    if (set("--dropout")) cfg.run.dropout = dropout;
    if (set("--alpha")) cfg.run.alpha = alpha;
    if (set("--folds")) cfg.run.folds = folds;
    if (set("--checkpoints")) cfg.run.checkpoints = checkpoints;
    if (set("--overlap-threshold")) cfg.run.overlap_threshold = overlap;
    if (set("--top-docs")) cfg.run.top_docs = top_docs;
    if (set("--jobs")) cfg.run.jobs = jobs;
    if (set("--seed")) cfg.run.seed = seed;
    if (set("--kb")) cfg.paths.kb_dir = kb_dir;
    if (set("--cache")) cfg.paths.cache_file = cache_file;
    if (set("--base-model")) cfg.paths.base_model = base_model;
    if (set("--fusion-model")) cfg.paths.fusion_model = fusion_model;
    finalize_config(cfg);
    return cfg;
  }
};

struct LoadedSources {
  KnowledgeBase kb;
  SearchCache cache;
  KnowledgeSources sources;
};

inline LoadedSources load_sources(const AppConfig& cfg) {
  LoadedSources s;
  const bool want_kb =
      cfg.run.retrieval == RetrievalMode::kKb || cfg.run.retrieval == RetrievalMode::kBoth;
  const bool want_cache =
      cfg.run.retrieval == RetrievalMode::kCache || cfg.run.retrieval == RetrievalMode::kBoth;
  if (want_kb && !cfg.paths.kb_dir.empty()) {
    s.kb = load_kb(cfg.paths.kb_dir);
    s.sources.kb = &s.kb;
  }
  if (want_cache && !cfg.paths.cache_file.empty()) {
    s.cache = read_search_cache(cfg.paths.cache_file);
    s.sources.cache = &s.cache;
  }
  return s;
}

inline LabelScheme scheme_from_config(const AppConfig& cfg) {
  if (cfg.run.entity_types.empty())
    throw MismatchError("entity_types must be supplied via config or --entity-types");
  return LabelScheme(cfg.run.entity_types);
}

inline void write_json_file(const std::string& path, const nlohmann::ordered_json& j, int indent) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(indent) << '\n';
}

inline TaggerModel load_tagger_file(const std::string& path) {
  if (path.empty()) throw MismatchError("base model path not set (--base-model or config paths)");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("model file is not valid JSON: " + path);
  return tagger_from_json(j);
}

inline FusionModel load_fusion_file(const std::string& path) {
  if (path.empty()) throw MismatchError("fusion model path not set (--fusion-model or config paths)");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("model file is not valid JSON: " + path);
  return fusion_from_json(j);
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& rep) {
  nlohmann::ordered_json j;
  j["precision"] = rep.entity.precision;
  j["recall"] = rep.entity.recall;
  j["f1"] = rep.entity.f1;
  const auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
    else j[key] = nullptr;
  };
  put("token_accuracy", rep.token_accuracy);
  put("oracle_f1", rep.oracle_f1);
  put("acc_certain", rep.acc_certain);
  put("acc_uncertain", rep.acc_uncertain);
  put("sar", rep.sar);
  put("vsr", rep.vsr);
  j["size_u"] = rep.size_u;
  j["num_uc"] = rep.num_uc;
  if (!rep.per_dataset.empty()) {
    nlohmann::ordered_json per;
    for (const auto& [name, prf] : rep.per_dataset)
      per[name] = {{"precision", prf.precision}, {"recall", prf.recall}, {"f1", prf.f1}};
    j["per_dataset"] = std::move(per);
  }
  return j;
}

inline void write_components_jsonl(const std::string& path,
                                   const std::vector<PredictTrace>& traces,
                                   SamplingMethod method) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write components file: " + path);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    nlohmann::ordered_json j;
    j["sentence_id"] = i;
    j["method"] = sampling_method_name(method);
    j["components"] = nlohmann::ordered_json::array();
    for (const auto& c : traces[i].components)
      j["components"].push_back(
          {{"start", c.start}, {"end", c.end}, {"text", encode_utf8(c.text)}});
    out << j.dump() << '\n';
  }
}

inline std::vector<SpanList> read_components_jsonl(const std::string& path, std::size_t corpus_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open components file: " + path);
  std::vector<SpanList> components(corpus_size);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("sentence_id") || !j.contains("components"))
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed components line");
    const auto id = j["sentence_id"].get<std::size_t>();
    if (id >= corpus_size)
      throw MismatchError(path + ":" + std::to_string(line_no) + ": sentence_id out of range");
    for (const auto& c : j["components"])
      components[id].emplace_back(c.at("start").get<int>(), c.at("end").get<int>());
  }
  return components;
}

}  // namespace detail

/// Dispatch a full command line (without argv[0]); returns the exit status.
inline int run(const std::vector<std::string>& args) {
  CLI::App app{"TURNER: two-stage uncertainty-based retrieval for sequence-labeling NER"};
  app.require_subcommand(1);

  // ---- train-base -----------------------------------------------------------
  auto shared_train = std::make_shared<detail::SharedOpts>();
  auto* train_base = app.add_subcommand("train-base", "train the base tagger");
  shared_train->attach(train_base, /*seed_required=*/true);
  auto train_in = std::make_shared<std::string>();
  auto train_dev = std::make_shared<std::string>();
  auto train_out = std::make_shared<std::string>();
  auto t_epochs = std::make_shared<int>(0);
  auto t_batch = std::make_shared<int>(0);
  auto t_lr = std::make_shared<double>(0.0);
  auto t_dropout = std::make_shared<double>(0.0);
  train_base->add_option("--train", *train_in, "training corpus (TSV)")->required();
  train_base->add_option("--dev", *train_dev, "dev corpus for checkpoint selection");
  train_base->add_option("--out", *train_out, "output model file")->required();
  train_base->add_option("--epochs", *t_epochs, "training epochs");
  train_base->add_option("--batch", *t_batch, "batch size");
  train_base->add_option("--lr", *t_lr, "learning rate");
  train_base->add_option("--train-dropout", *t_dropout, "dropout rate during training");
  train_base->callback([=]() {
    AppConfig cfg = shared_train->resolve();
    if (train_base->count("--epochs")) cfg.run.tagger.epochs = *t_epochs;
    if (train_base->count("--batch")) cfg.run.tagger.batch = *t_batch;
    if (train_base->count("--lr")) cfg.run.tagger.lr = *t_lr;
    if (train_base->count("--train-dropout")) cfg.run.tagger.dropout = *t_dropout;
    finalize_config(cfg);
    const LabelScheme scheme = detail::scheme_from_config(cfg);
    const auto corpus = read_corpus(*train_in, scheme, cfg.run.max_seq_len_base);
    std::vector<Example> dev;
    if (!train_dev->empty()) dev = read_corpus(*train_dev, scheme, cfg.run.max_seq_len_base);
    const auto result = train_tagger(corpus, dev, cfg.run.tagger, scheme);
    detail::write_json_file(*train_out, tagger_to_json(result.model), -1);
  });

  // ---- gen-stage2 -----------------------------------------------------------
  auto shared_gen = std::make_shared<detail::SharedOpts>();
  auto* gen = app.add_subcommand("gen-stage2", "generate stage-two training records by jackknifing");
  shared_gen->attach(gen, /*seed_required=*/true);
  auto gen_in = std::make_shared<std::string>();
  auto gen_out = std::make_shared<std::string>();
  gen->add_option("--train", *gen_in, "training corpus (TSV)")->required();
  gen->add_option("--out", *gen_out, "output records JSONL")->required();
  gen->callback([=]() {
    const AppConfig cfg = shared_gen->resolve();
    const LabelScheme scheme = detail::scheme_from_config(cfg);
    const auto corpus = read_corpus(*gen_in, scheme, cfg.run.max_seq_len_base);
    const auto loaded = detail::load_sources(cfg);
    const auto records = gen_stage2(corpus, loaded.sources, cfg.run);
    write_stage2_records(*gen_out, records, scheme);
  });

  // ---- train-fusion ---------------------------------------------------------
  auto shared_fuse = std::make_shared<detail::SharedOpts>();
  auto* fuse = app.add_subcommand("train-fusion", "train the knowledge fusion model");
  shared_fuse->attach(fuse, /*seed_required=*/true);
  auto fuse_records = std::make_shared<std::string>();
  auto fuse_dev = std::make_shared<std::string>();
  auto fuse_out = std::make_shared<std::string>();
  auto f_epochs = std::make_shared<int>(0);
  auto f_batch = std::make_shared<int>(0);
  auto f_lr = std::make_shared<double>(0.0);
  fuse->add_option("--records", *fuse_records, "stage-two records JSONL")->required();
  fuse->add_option("--dev-records", *fuse_dev, "dev records for checkpoint selection");
  fuse->add_option("--out", *fuse_out, "output model file")->required();
  fuse->add_option("--epochs", *f_epochs, "training epochs");
  fuse->add_option("--batch", *f_batch, "batch size");
  fuse->add_option("--lr", *f_lr, "learning rate");
  fuse->callback([=]() {
    AppConfig cfg = shared_fuse->resolve();
    if (fuse->count("--epochs")) cfg.run.fusion.epochs = *f_epochs;
    if (fuse->count("--batch")) cfg.run.fusion.batch = *f_batch;
    if (fuse->count("--lr")) cfg.run.fusion.lr = *f_lr;
    finalize_config(cfg);
    const LabelScheme scheme = detail::scheme_from_config(cfg);
    const auto records = read_stage2_records(*fuse_records, scheme);
    const auto samples = fused_samples_from_records(records, scheme, cfg.run.max_seq_len_fusion);
    std::vector<FusedSample> dev;
    if (!fuse_dev->empty()) {
      const auto dev_records = read_stage2_records(*fuse_dev, scheme);
      dev = fused_samples_from_records(dev_records, scheme, cfg.run.max_seq_len_fusion);
    }
    const FusionModel model = train_fusion(samples, dev, cfg.run.fusion, scheme);
    detail::write_json_file(*fuse_out, fusion_to_json(model), -1);
  });

  // ---- kb-build -------------------------------------------------------------
  auto* kb_build = app.add_subcommand("kb-build", "build a BM25 knowledge base from SPO triplets");
  auto kb_triplets = std::make_shared<std::string>();
  auto kb_out = std::make_shared<std::string>();
  kb_build->add_option("--triplets", *kb_triplets, "triplet JSONL file")->required();
  kb_build->add_option("--out", *kb_out, "output directory")->required();
  kb_build->callback([=]() {
    const auto triplets = read_triplets(*kb_triplets);
    const KnowledgeBase kb = build_kb(triplets);
    std::filesystem::create_directories(*kb_out);
    save_kb(kb, *kb_out);
  });

  // ---- kb-query -------------------------------------------------------------
  auto* kb_query = app.add_subcommand("kb-query", "query a knowledge base");
  auto kq_dir = std::make_shared<std::string>();
  auto kq_query = std::make_shared<std::string>();
  auto kq_top = std::make_shared<int>(kDefaultTopDocs);
  kb_query->add_option("--kb", *kq_dir, "knowledge base directory")->required();
  kb_query->add_option("--query", *kq_query, "query text")->required();
  kb_query->add_option("--top", *kq_top, "number of documents");
  kb_query->callback([=]() {
    const KnowledgeBase kb = load_kb(*kq_dir);
    for (const auto& hit : kb.query(*kq_query, *kq_top)) {
      nlohmann::ordered_json j;
      j["subject"] = hit.doc.subject;
      j["score"] = hit.score;
      j["body"] = hit.doc.body;
      std::cout << j.dump() << '\n';
    }
  });

  // ---- sample ---------------------------------------------------------------
  auto shared_sample = std::make_shared<detail::SharedOpts>();
  auto* sample = app.add_subcommand("sample", "emit per-sentence uncertain components");
  shared_sample->attach(sample, /*seed_required=*/false);
  auto sample_in = std::make_shared<std::string>();
  auto sample_out = std::make_shared<std::string>();
  sample->add_option("--input", *sample_in, "input corpus (TSV)")->required();
  sample->add_option("--out", *sample_out, "output components JSONL")->required();
  sample->callback([=]() {
    const AppConfig cfg = shared_sample->resolve();
    const TaggerModel base = detail::load_tagger_file(cfg.paths.base_model);
    const auto corpus =
        read_corpus(*sample_in, base.scheme, cfg.run.max_seq_len_base, /*labels_required=*/false);
    std::vector<PredictTrace> traces(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto [prov, cands] = sample_sentence(base, corpus[i].x, cfg.run, i);
      traces[i].components = merge_components(uncertain_entities(prov, cands, base.scheme), corpus[i].x);
      traces[i].provisional = std::move(prov);
      traces[i].candidates = std::move(cands);
    }
    detail::write_components_jsonl(*sample_out, traces, cfg.run.method);
  });

  // ---- predict ----------------------------------------------------------------
  auto shared_pred = std::make_shared<detail::SharedOpts>();
  auto* predict_cmd = app.add_subcommand("predict", "two-stage prediction over a corpus");
  shared_pred->attach(predict_cmd, /*seed_required=*/false);
  auto pred_in = std::make_shared<std::string>();
  auto pred_out = std::make_shared<std::string>();
  auto pred_components = std::make_shared<std::string>();
  auto base_only = std::make_shared<bool>(false);
  predict_cmd->add_option("--input", *pred_in, "input corpus (TSV; labels optional)")->required();
  predict_cmd->add_option("--out", *pred_out, "output predictions (TSV)")->required();
  predict_cmd->add_option("--components", *pred_components, "also write components JSONL here");
  predict_cmd->add_flag("--base-only", *base_only, "skip stage two, emit provisional labels");
  predict_cmd->callback([=]() {
    const AppConfig cfg = shared_pred->resolve();
    const TaggerModel base = detail::load_tagger_file(cfg.paths.base_model);
    if (!cfg.run.entity_types.empty() && !(LabelScheme(cfg.run.entity_types) == base.scheme))
      throw MismatchError("config entity_types disagree with the base model scheme");
    const auto corpus =
        read_corpus(*pred_in, base.scheme, cfg.run.max_seq_len_base, /*labels_required=*/false);
    std::vector<Sentence> sentences;
    sentences.reserve(corpus.size());
    for (const auto& ex : corpus) sentences.push_back(ex.x);

    std::vector<PredictTrace> traces;
    if (*base_only) {
      traces.resize(corpus.size());
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        auto [prov, cands] = sample_sentence(base, corpus[i].x, cfg.run, i);
        traces[i].components =
            merge_components(uncertain_entities(prov, cands, base.scheme), corpus[i].x);
        traces[i].provisional = std::move(prov);
        traces[i].candidates = std::move(cands);
        traces[i].final = traces[i].provisional.l_p;
      }
    } else {
      const FusionModel fusion = detail::load_fusion_file(cfg.paths.fusion_model);
      if (!(fusion.scheme == base.scheme))
        throw MismatchError("base and fusion model schemes disagree");
      const auto loaded = detail::load_sources(cfg);
      traces = predict_corpus(sentences, base, fusion, loaded.sources, cfg.run);
    }

    std::vector<LabelSequence> finals;
    finals.reserve(traces.size());
    for (const auto& t : traces) finals.push_back(t.final);
    write_corpus(*pred_out, sentences, finals, base.scheme);
    if (!pred_components->empty())
      detail::write_components_jsonl(*pred_components, traces, cfg.run.method);
  });

  // ---- evaluate ---------------------------------------------------------------
  auto shared_eval = std::make_shared<detail::SharedOpts>();
  auto* eval = app.add_subcommand("evaluate", "score predictions against gold labels");
  shared_eval->attach(eval, /*seed_required=*/false);
  auto eval_pred = std::make_shared<std::string>();
  auto eval_gold = std::make_shared<std::string>();
  auto eval_components = std::make_shared<std::string>();
  auto eval_out = std::make_shared<std::string>();
  eval->add_option("--pred", *eval_pred, "prediction corpus (TSV)")->required();
  eval->add_option("--gold", *eval_gold, "gold corpus (TSV)")->required();
  eval->add_option("--components", *eval_components, "components JSONL for the accuracy split");
  eval->add_option("--out", *eval_out, "report JSON file (default: stdout)");
  eval->callback([=]() {
    const AppConfig cfg = shared_eval->resolve();
    const LabelScheme scheme = detail::scheme_from_config(cfg);
    const auto gold = read_corpus(*eval_gold, scheme, 0);
    const auto pred = read_corpus(*eval_pred, scheme, 0);
    if (gold.size() != pred.size())
      throw DataError("evaluate: prediction and gold corpora differ in sentence count");
    std::vector<LabelSequence> pred_seqs, gold_seqs;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i].gold.size() != gold[i].gold.size())
        throw DataError("evaluate: sentence " + std::to_string(i) + " length mismatch");
      pred_seqs.push_back(pred[i].gold);
      gold_seqs.push_back(gold[i].gold);
    }
    MetricsReport rep;
    rep.entity = entity_f1(pred_seqs, gold_seqs, scheme);
    std::int64_t hits = 0, total = 0;
    for (std::size_t i = 0; i < gold_seqs.size(); ++i)
      for (std::size_t p = 0; p < gold_seqs[i].size(); ++p) {
        hits += pred_seqs[i][p] == gold_seqs[i][p];
        ++total;
      }
    if (total > 0) rep.token_accuracy = static_cast<double>(hits) / static_cast<double>(total);
    if (!eval_components->empty()) {
      const auto comps = detail::read_components_jsonl(*eval_components, gold.size());
      const auto acc = acc_split(pred_seqs, gold_seqs, comps);
      rep.acc_certain = acc.certain;
      rep.acc_uncertain = acc.uncertain;
      const auto stats = uncertainty_stats(comps);
      rep.size_u = stats.size_u;
      rep.num_uc = stats.num_uc;
    }
    const auto j = detail::report_to_json(rep);
    if (eval_out->empty())
      std::cout << j.dump(2) << '\n';
    else
      detail::write_json_file(*eval_out, j, 2);
  });

  // ---- sweep ------------------------------------------------------------------
  auto shared_sweep = std::make_shared<detail::SharedOpts>();
  auto* sweep_cmd = app.add_subcommand("sweep", "grid sweep over sampling/fusion hyperparameters");
  shared_sweep->attach(sweep_cmd, /*seed_required=*/false);
  auto sweep_grid = std::make_shared<std::string>();
  auto sweep_train = std::make_shared<std::string>();
  auto sweep_dev = std::make_shared<std::string>();
  auto sweep_test = std::make_shared<std::string>();
  auto sweep_out = std::make_shared<std::string>();
  sweep_cmd->add_option("--grid", *sweep_grid, "grid JSON: lists under dropout/k/alpha")->required();
  sweep_cmd->add_option("--train", *sweep_train, "training corpus (TSV)")->required();
  sweep_cmd->add_option("--dev", *sweep_dev, "dev corpus (TSV)");
  sweep_cmd->add_option("--test", *sweep_test, "evaluation corpus (TSV)")->required();
  sweep_cmd->add_option("--out", *sweep_out, "sweep table JSON file");
  sweep_cmd->callback([=]() {
    const AppConfig cfg = shared_sweep->resolve();
    const auto rows = run_sweep(cfg, *sweep_grid, *sweep_train, *sweep_dev, *sweep_test);
    std::cout << render_sweep_table(rows);
    if (!sweep_out->empty()) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& row : rows) {
        nlohmann::ordered_json j;
        j["dropout"] = row.point.dropout;
        j["k"] = row.point.k;
        j["alpha"] = row.point.alpha;
        j["report"] = detail::report_to_json(row.report);
        arr.push_back(std::move(j));
      }
      detail::write_json_file(*sweep_out, arr, 2);
    }
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());  // CLI11 convention
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const MismatchError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMismatch;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace turner::cli
