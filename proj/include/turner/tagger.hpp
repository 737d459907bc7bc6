#pragma once

// Stage-one base tagger: a windowed character-embedding encoder with one ReLU
// hidden layer and a per-position softmax. Scoring is deterministic or, for
// MC Dropout sampling, stochastic with inverted dropout driven by an explicit
// seed. Training is plain mini-batch gradient descent with hand-written
// backprop, validated by gradient_check against central finite differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "turner/corpus.hpp"
#include "turner/decoder.hpp"
#include "turner/errors.hpp"
#include "turner/evalkit.hpp"
#include "turner/lattice.hpp"
#include "turner/rng.hpp"
#include "turner/tagspace.hpp"
#include "turner/utf8.hpp"

namespace turner {

struct ScorerMode {
  bool is_stochastic = false;
  std::uint64_t seed = 0;

  static ScorerMode deterministic() { return {}; }
  static ScorerMode stochastic(std::uint64_t seed) { return {true, seed}; }
};

struct TaggerConfig {
  int d_emb = 16;
  int d_hid = 64;
  int window = 2;       // radius; the encoder sees 2*window+1 characters
  double dropout = 0.1;
  double lr = 0.05;
  int epochs = 20;
  int batch = 32;
  int keep_checkpoints = 0;  // epoch-end snapshots retained for augmentation
  std::uint64_t seed = 1;
};

class TaggerModel {
public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;
  static constexpr int kFirstCharId = 2;

  LabelScheme scheme{std::vector<std::string>{}};
  std::map<char32_t, int> char_ids;
  int d_emb = 0;
  int d_hid = 0;
  int window = 0;
  double dropout = 0.0;

  std::vector<double> emb;  // vocab x d_emb
  std::vector<double> w1;   // (2*window+1)*d_emb x d_hid
  std::vector<double> b1;   // d_hid
  std::vector<double> w2;   // d_hid x |labels|
  std::vector<double> b2;   // |labels|

  int vocab_size() const { return kFirstCharId + static_cast<int>(char_ids.size()); }
  int input_dim() const { return (2 * window + 1) * d_emb; }

  int char_id(char32_t c) const {
    const auto it = char_ids.find(c);
    return it == char_ids.end() ? kUnkId : it->second;
  }

  template <typename Fn>
  void for_each_array(Fn&& fn) {
    fn("emb", emb);
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
  }
  template <typename Fn>
  void for_each_array(Fn&& fn) const {
    fn("emb", emb);
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
  }
};

/// Characters of the corpus, deduplicated and sorted by code point, assigned
/// dense ids after PAD and UNK.
inline std::map<char32_t, int> build_char_vocab(const std::vector<Example>& corpus) {
  std::map<char32_t, int> vocab;
  for (const auto& ex : corpus)
    for (char32_t c : ex.x.chars) vocab.emplace(c, 0);
  int next = TaggerModel::kFirstCharId;
  for (auto& [c, id] : vocab) id = next++;
  return vocab;
}

inline TaggerModel init_tagger(const LabelScheme& scheme, std::map<char32_t, int> vocab,
                               const TaggerConfig& cfg) {
  TaggerModel m;
  m.scheme = scheme;
  m.char_ids = std::move(vocab);
  m.d_emb = cfg.d_emb;
  m.d_hid = cfg.d_hid;
  m.window = cfg.window;
  m.dropout = cfg.dropout;

  Rng rng(mix_seed(cfg.seed, 0x7461676765ULL));  // init substream
  const int L = scheme.num_labels();
  const auto fill = [&rng](std::vector<double>& v, std::size_t size, double stddev) {
    v.resize(size);
    for (auto& x : v) x = rng.normal(0.0, stddev);
  };
  fill(m.emb, static_cast<std::size_t>(m.vocab_size()) * static_cast<std::size_t>(m.d_emb), 0.1);
  fill(m.w1, static_cast<std::size_t>(m.input_dim()) * static_cast<std::size_t>(m.d_hid),
       1.0 / std::sqrt(static_cast<double>(m.input_dim())));
  m.b1.assign(static_cast<std::size_t>(m.d_hid), 0.0);
  fill(m.w2, static_cast<std::size_t>(m.d_hid) * static_cast<std::size_t>(L),
       1.0 / std::sqrt(static_cast<double>(m.d_hid)));
  m.b2.assign(static_cast<std::size_t>(L), 0.0);
  return m;
}

namespace detail {

// Per-sentence forward cache. Dropout masks hold the inverted-dropout
// multiplier (0 or 1/(1-p)); empty masks mean the deterministic path.
struct TaggerForward {
  int n = 0;
  std::vector<int> ctx_ids;       // n x (2w+1)
  std::vector<double> x_dropped;  // n x input_dim, after input dropout
  std::vector<double> pre1;       // n x d_hid
  std::vector<double> h_dropped;  // n x d_hid, after relu and hidden dropout
  std::vector<double> logprob;    // n x L
  std::vector<double> mask_in;    // n x input_dim or empty
  std::vector<double> mask_h;     // n x d_hid or empty
};

inline void tagger_forward(const TaggerModel& m, const Sentence& x, ScorerMode mode,
                           TaggerForward& f) {
  const int n = x.length();
  if (n < 1) throw DataError("tagger: empty sentence");
  const int ctx = 2 * m.window + 1;
  const int in_dim = m.input_dim();
  const int H = m.d_hid;
  const int L = m.scheme.num_labels();

  f.n = n;
  f.ctx_ids.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(ctx), TaggerModel::kPadId);
  f.x_dropped.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(in_dim), 0.0);
  f.pre1.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(H), 0.0);
  f.h_dropped.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(H), 0.0);
  f.logprob.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(L), 0.0);

  const bool dropping = mode.is_stochastic && m.dropout > 0.0;
  Rng rng(mode.seed);
  const double keep_scale = dropping ? 1.0 / (1.0 - m.dropout) : 1.0;
  if (dropping) {
    f.mask_in.assign(f.x_dropped.size(), 0.0);
    f.mask_h.assign(f.h_dropped.size(), 0.0);
  } else {
    f.mask_in.clear();
    f.mask_h.clear();
  }

  for (int i = 0; i < n; ++i) {
    int* ids = &f.ctx_ids[static_cast<std::size_t>(i) * static_cast<std::size_t>(ctx)];
    for (int t = 0; t < ctx; ++t) {
      const int p = i - m.window + t;
      ids[t] = (p < 0 || p >= n) ? TaggerModel::kPadId
                                 : m.char_id(x.chars[static_cast<std::size_t>(p)]);
    }

    double* xv = &f.x_dropped[static_cast<std::size_t>(i) * static_cast<std::size_t>(in_dim)];
    for (int t = 0; t < ctx; ++t) {
      const double* row = &m.emb[static_cast<std::size_t>(ids[t]) * static_cast<std::size_t>(m.d_emb)];
      for (int e = 0; e < m.d_emb; ++e) xv[t * m.d_emb + e] = row[e];
    }
    if (dropping) {
      double* mi = &f.mask_in[static_cast<std::size_t>(i) * static_cast<std::size_t>(in_dim)];
      for (int j = 0; j < in_dim; ++j) {
        mi[j] = rng.uniform() < m.dropout ? 0.0 : keep_scale;
        xv[j] *= mi[j];
      }
    }

    double* pre = &f.pre1[static_cast<std::size_t>(i) * static_cast<std::size_t>(H)];
    for (int j = 0; j < H; ++j) pre[j] = m.b1[static_cast<std::size_t>(j)];
    for (int d = 0; d < in_dim; ++d) {
      const double xd = xv[d];
      if (xd == 0.0) continue;
      const double* wrow = &m.w1[static_cast<std::size_t>(d) * static_cast<std::size_t>(H)];
      for (int j = 0; j < H; ++j) pre[j] += xd * wrow[j];
    }

    double* h = &f.h_dropped[static_cast<std::size_t>(i) * static_cast<std::size_t>(H)];
    for (int j = 0; j < H; ++j) h[j] = pre[j] > 0.0 ? pre[j] : 0.0;
    if (dropping) {
      double* mh = &f.mask_h[static_cast<std::size_t>(i) * static_cast<std::size_t>(H)];
      for (int j = 0; j < H; ++j) {
        mh[j] = rng.uniform() < m.dropout ? 0.0 : keep_scale;
        h[j] *= mh[j];
      }
    }

    double* lp = &f.logprob[static_cast<std::size_t>(i) * static_cast<std::size_t>(L)];
    for (int l = 0; l < L; ++l) lp[l] = m.b2[static_cast<std::size_t>(l)];
    for (int j = 0; j < H; ++j) {
      const double hj = h[j];
      if (hj == 0.0) continue;
      const double* wrow = &m.w2[static_cast<std::size_t>(j) * static_cast<std::size_t>(L)];
      for (int l = 0; l < L; ++l) lp[l] += hj * wrow[l];
    }
    double mx = lp[0];
    for (int l = 1; l < L; ++l) mx = std::max(mx, lp[l]);
    double sum = 0.0;
    for (int l = 0; l < L; ++l) sum += std::exp(lp[l] - mx);
    const double lse = mx + std::log(sum);
    for (int l = 0; l < L; ++l) lp[l] -= lse;
  }
}

struct TaggerGrads {
  std::vector<double> emb, w1, b1, w2, b2;

  void init_like(const TaggerModel& m) {
    emb.assign(m.emb.size(), 0.0);
    w1.assign(m.w1.size(), 0.0);
    b1.assign(m.b1.size(), 0.0);
    w2.assign(m.w2.size(), 0.0);
    b2.assign(m.b2.size(), 0.0);
  }
};

// Cross-entropy backward for one sentence; per-position loss weight `scale`
// (for a plain batch mean this is 1/total_positions).
inline void tagger_backward(const TaggerModel& m, const TaggerForward& f, const LabelSequence& gold,
                            double scale, TaggerGrads& g) {
  const int n = f.n;
  const int ctx = 2 * m.window + 1;
  const int in_dim = m.input_dim();
  const int H = m.d_hid;
  const int L = m.scheme.num_labels();
  const bool dropping = !f.mask_in.empty();

  std::vector<double> dlogit(static_cast<std::size_t>(L));
  std::vector<double> dh(static_cast<std::size_t>(H));
  std::vector<double> dx(static_cast<std::size_t>(in_dim));

  for (int i = 0; i < n; ++i) {
    const double* lp = &f.logprob[static_cast<std::size_t>(i) * static_cast<std::size_t>(L)];
    for (int l = 0; l < L; ++l) dlogit[static_cast<std::size_t>(l)] = scale * std::exp(lp[l]);
    dlogit[static_cast<std::size_t>(gold[static_cast<std::size_t>(i)])] -= scale;

    const double* h = &f.h_dropped[static_cast<std::size_t>(i) * static_cast<std::size_t>(H)];
    for (int l = 0; l < L; ++l) g.b2[static_cast<std::size_t>(l)] += dlogit[static_cast<std::size_t>(l)];
    std::fill(dh.begin(), dh.end(), 0.0);
    for (int j = 0; j < H; ++j) {
      const double hj = h[j];
      double* gw = &g.w2[static_cast<std::size_t>(j) * static_cast<std::size_t>(L)];
      const double* w = &m.w2[static_cast<std::size_t>(j) * static_cast<std::size_t>(L)];
      double acc = 0.0;
      for (int l = 0; l < L; ++l) {
        gw[l] += hj * dlogit[static_cast<std::size_t>(l)];
        acc += w[l] * dlogit[static_cast<std::size_t>(l)];
      }
      dh[static_cast<std::size_t>(j)] = acc;
    }

    const double* pre = &f.pre1[static_cast<std::size_t>(i) * static_cast<std::size_t>(H)];
    if (dropping) {
      const double* mh = &f.mask_h[static_cast<std::size_t>(i) * static_cast<std::size_t>(H)];
      for (int j = 0; j < H; ++j) dh[static_cast<std::size_t>(j)] *= mh[j];
    }
    for (int j = 0; j < H; ++j)
      if (pre[j] <= 0.0) dh[static_cast<std::size_t>(j)] = 0.0;

    const double* xv = &f.x_dropped[static_cast<std::size_t>(i) * static_cast<std::size_t>(in_dim)];
    std::fill(dx.begin(), dx.end(), 0.0);
    for (int j = 0; j < H; ++j) {
      const double dj = dh[static_cast<std::size_t>(j)];
      if (dj == 0.0) continue;
      g.b1[static_cast<std::size_t>(j)] += dj;
    }
    for (int d = 0; d < in_dim; ++d) {
      const double xd = xv[d];
      double* gw = &g.w1[static_cast<std::size_t>(d) * static_cast<std::size_t>(H)];
      const double* w = &m.w1[static_cast<std::size_t>(d) * static_cast<std::size_t>(H)];
      double acc = 0.0;
      for (int j = 0; j < H; ++j) {
        const double dj = dh[static_cast<std::size_t>(j)];
        gw[j] += xd * dj;
        acc += w[j] * dj;
      }
      dx[static_cast<std::size_t>(d)] = acc;
    }
    if (dropping) {
      const double* mi = &f.mask_in[static_cast<std::size_t>(i) * static_cast<std::size_t>(in_dim)];
      for (int d = 0; d < in_dim; ++d) dx[static_cast<std::size_t>(d)] *= mi[d];
    }

    const int* ids = &f.ctx_ids[static_cast<std::size_t>(i) * static_cast<std::size_t>(ctx)];
    for (int t = 0; t < ctx; ++t) {
      double* grow = &g.emb[static_cast<std::size_t>(ids[t]) * static_cast<std::size_t>(m.d_emb)];
      for (int e = 0; e < m.d_emb; ++e) grow[e] += dx[static_cast<std::size_t>(t * m.d_emb + e)];
    }
  }
}

inline double mean_ce_loss(const TaggerForward& f, const LabelSequence& gold, int num_labels) {
  double total = 0.0;
  for (int i = 0; i < f.n; ++i)
    total -= f.logprob[static_cast<std::size_t>(i) * static_cast<std::size_t>(num_labels) +
                       static_cast<std::size_t>(gold[static_cast<std::size_t>(i)])];
  return total / static_cast<double>(f.n);
}

}  // namespace detail

/// Log-softmax lattice for one sentence. Deterministic mode is a pure
/// function of (model, x); stochastic mode derives every dropout draw from
/// the mode's seed alone.
inline TagLattice score(const TaggerModel& m, const Sentence& x, ScorerMode mode) {
  detail::TaggerForward f;
  detail::tagger_forward(m, x, mode, f);
  const int L = m.scheme.num_labels();
  TagLattice lat(f.n, L);
  for (int i = 0; i < f.n; ++i)
    for (int l = 0; l < L; ++l)
      lat.at(i, l) = f.logprob[static_cast<std::size_t>(i) * static_cast<std::size_t>(L) +
                               static_cast<std::size_t>(l)];
  return lat;
}

struct TaggerTrainResult {
  TaggerModel model;                    // best dev F1 checkpoint, or the final model
  std::vector<TaggerModel> checkpoints; // last keep_checkpoints epoch-end snapshots, oldest first
};

/// Mini-batch gradient descent on mean per-position cross-entropy. Dropout is
/// active during training with masks derived from (seed, epoch, step). When a
/// dev set is supplied the checkpoint with the best dev entity F1 is returned.
inline TaggerTrainResult train_tagger(const std::vector<Example>& corpus,
                                      const std::vector<Example>& dev, const TaggerConfig& cfg,
                                      const LabelScheme& scheme) {
  if (corpus.empty()) throw DataError("train_tagger: empty corpus");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].gold.size() != static_cast<std::size_t>(corpus[i].x.length()))
      throw DataError("train_tagger: sentence " + std::to_string(i) + ": label length mismatch");
    if (!scheme.is_legal(corpus[i].gold))
      throw DataError("train_tagger: sentence " + std::to_string(i) + ": illegal gold labels");
  }

  TaggerTrainResult result;
  result.model = init_tagger(scheme, build_char_vocab(corpus), cfg);
  TaggerModel& model = result.model;

  const auto dev_f1 = [&](const TaggerModel& m) {
    std::vector<LabelSequence> pred, gold;
    pred.reserve(dev.size());
    gold.reserve(dev.size());
    for (const auto& ex : dev) {
      pred.push_back(viterbi(score(m, ex.x, ScorerMode::deterministic()), scheme).seq);
      gold.push_back(ex.gold);
    }
    return entity_f1(pred, gold, scheme).f1;
  };

  std::deque<TaggerModel> snapshots;
  TaggerModel best = model;
  double best_f1 = -1.0;

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  detail::TaggerForward fwd;
  detail::TaggerGrads grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5A4FF1EULL, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    std::size_t step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch), ++step) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch));
      std::size_t batch_positions = 0;
      for (std::size_t i = begin; i < end; ++i)
        batch_positions += corpus[order[i]].gold.size();
      grads.init_like(model);

      for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = corpus[order[i]];
        const auto mode =
            cfg.dropout > 0.0
                ? ScorerMode::stochastic(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), step, order[i]))
                : ScorerMode::deterministic();
        detail::tagger_forward(model, ex.x, mode, fwd);
        detail::tagger_backward(model, fwd, ex.gold, 1.0 / static_cast<double>(batch_positions),
                                grads);
      }

      const double lr = cfg.lr;
      const auto update = [lr](std::vector<double>& p, const std::vector<double>& g) {
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
      };
      update(model.emb, grads.emb);
      update(model.w1, grads.w1);
      update(model.b1, grads.b1);
      update(model.w2, grads.w2);
      update(model.b2, grads.b2);
    }

    if (cfg.keep_checkpoints > 0) {
      snapshots.push_back(model);
      while (static_cast<int>(snapshots.size()) > cfg.keep_checkpoints) snapshots.pop_front();
    }
    if (!dev.empty()) {
      const double f1 = dev_f1(model);
      if (f1 > best_f1) {
        best_f1 = f1;
        best = model;
      }
    }
  }

  if (!dev.empty() && cfg.epochs > 0) result.model = best;
  result.checkpoints.assign(snapshots.begin(), snapshots.end());
  return result;
}

/// Max relative error between analytic gradients and central finite
/// differences (h = 1e-4) over every parameter. Deterministic mode only.
inline double gradient_check(TaggerModel model, const Sentence& x, const LabelSequence& gold,
                             ScorerMode mode = ScorerMode::deterministic()) {
  if (mode.is_stochastic)
    throw DataError("gradient_check requires deterministic mode");
  const int L = model.scheme.num_labels();

  detail::TaggerForward fwd;
  detail::tagger_forward(model, x, mode, fwd);
  detail::TaggerGrads grads;
  grads.init_like(model);
  detail::tagger_backward(model, fwd, gold, 1.0 / static_cast<double>(x.length()), grads);

  const auto loss_at = [&]() {
    detail::tagger_forward(model, x, ScorerMode::deterministic(), fwd);
    return detail::mean_ce_loss(fwd, gold, L);
  };

  constexpr double h = 1e-4;
  double worst = 0.0;
  const auto check_array = [&](std::vector<double>& params, const std::vector<double>& analytic) {
    for (std::size_t j = 0; j < params.size(); ++j) {
      const double saved = params[j];
      params[j] = saved + h;
      const double up = loss_at();
      params[j] = saved - h;
      const double down = loss_at();
      params[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double ga = analytic[j];
      if (!std::isfinite(ga) || !std::isfinite(numeric))
        throw DataError("gradient_check: non-finite gradient");
      const double rel = std::abs(ga - numeric) / std::max(1e-8, std::abs(ga) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  };
  check_array(model.emb, grads.emb);
  check_array(model.w1, grads.w1);
  check_array(model.b1, grads.b1);
  check_array(model.w2, grads.w2);
  check_array(model.b2, grads.b2);
  return worst;
}

// ---- model file (versioned JSON) -------------------------------------------

inline nlohmann::ordered_json tagger_to_json(const TaggerModel& m) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["kind"] = "tagger";
  j["scheme"] = {{"entity_types", m.scheme.entity_types()}};
  std::vector<std::string> chars(m.char_ids.size());
  for (const auto& [c, id] : m.char_ids)
    chars[static_cast<std::size_t>(id - TaggerModel::kFirstCharId)] = encode_utf8(c);
  j["chars"] = chars;
  j["window"] = m.window;
  j["dropout"] = m.dropout;
  j["dims"] = {{"d_emb", m.d_emb}, {"d_hid", m.d_hid}};
  nlohmann::ordered_json params;
  m.for_each_array([&params](const char* name, const std::vector<double>& v) { params[name] = v; });
  j["params"] = std::move(params);
  return j;
}

inline TaggerModel tagger_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1 || j.at("kind").get<std::string>() != "tagger")
      throw MismatchError("model file is not a version-1 tagger model");
    TaggerModel m;
    m.scheme = LabelScheme(j.at("scheme").at("entity_types").get<std::vector<std::string>>());
    int next = TaggerModel::kFirstCharId;
    for (const auto& s : j.at("chars")) {
      const std::u32string cps = decode_utf8(s.get<std::string>());
      if (cps.size() != 1) throw DataError("model chars entry is not a single character");
      m.char_ids.emplace(cps[0], next++);
    }
    m.window = j.at("window").get<int>();
    m.dropout = j.at("dropout").get<double>();
    m.d_emb = j.at("dims").at("d_emb").get<int>();
    m.d_hid = j.at("dims").at("d_hid").get<int>();
    m.for_each_array([&j](const char* name, std::vector<double>& v) {
      v = j.at("params").at(name).get<std::vector<double>>();
    });
    const int L = m.scheme.num_labels();
    if (m.emb.size() != static_cast<std::size_t>(m.vocab_size()) * static_cast<std::size_t>(m.d_emb) ||
        m.w1.size() != static_cast<std::size_t>(m.input_dim()) * static_cast<std::size_t>(m.d_hid) ||
        m.b1.size() != static_cast<std::size_t>(m.d_hid) ||
        m.w2.size() != static_cast<std::size_t>(m.d_hid) * static_cast<std::size_t>(L) ||
        m.b2.size() != static_cast<std::size_t>(L))
      throw MismatchError("tagger model file: inconsistent parameter dimensions");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("tagger model file: ") + e.what());
  }
}

}  // namespace turner
