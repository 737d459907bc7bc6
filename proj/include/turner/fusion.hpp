#pragma once

// Stage-two Knowledge Fusion Model. A fused sample concatenates the sentence,
// a SEP marker, and the retrieved knowledge; the provisional labels travel
// alongside as a label-context channel with the uncertain positions masked.
// Token embedding = char + label-context + position, encoded by a small
// single-head transformer (post-LN, residual + feed-forward), projected to a
// log-softmax lattice over the sentence positions only. Training minimizes a
// position-weighted cross entropy: full weight on uncertain positions, alpha
// elsewhere, no loss on SEP or knowledge positions. All backprop is written
// by hand and validated against central finite differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "turner/corpus.hpp"
#include "turner/decoder.hpp"
#include "turner/errors.hpp"
#include "turner/evalkit.hpp"
#include "turner/lattice.hpp"
#include "turner/retrieval.hpp"
#include "turner/rng.hpp"
#include "turner/tagspace.hpp"
#include "turner/uncertainty.hpp"
#include "turner/utf8.hpp"

namespace turner {

/// Private-use sentinel holding the SEP slot inside x_tilde.
constexpr char32_t kSepChar = 0xE000;

struct FusedSample {
  std::u32string x_tilde;      // c_1..c_n, SEP, k_1..k_m
  std::vector<int> label_ctx;  // same length; label ids, or MASK/PAD
  int n = 0;                   // original sentence length
  std::vector<UncertainComponent> components;
  LabelSequence gold;          // length n when used for training, else empty

  int total_len() const { return static_cast<int>(x_tilde.size()); }
  int knowledge_len() const { return total_len() - n - 1; }
};

inline int mask_label_id(const LabelScheme& scheme) { return scheme.num_labels(); }
inline int pad_label_id(const LabelScheme& scheme) { return scheme.num_labels() + 1; }

/// The masked-label construction: position i keeps l_p[i] unless it falls in
/// one of this sample's components (then MASK); SEP and knowledge positions
/// get PAD. Knowledge is truncated to fit max_seq_len.
inline FusedSample build_fused_sample(const Sentence& x, const LabelSequence& l_p,
                                      const std::vector<UncertainComponent>& components,
                                      const KnowledgeText& knowledge, const LabelScheme& scheme,
                                      int max_seq_len) {
  const int n = x.length();
  if (static_cast<std::size_t>(n) != l_p.size())
    throw MismatchError("build_fused_sample: sentence/label length mismatch");
  if (n + 1 > max_seq_len)
    throw DataError("build_fused_sample: sentence alone exceeds max_seq_len " +
                    std::to_string(max_seq_len));
  for (const auto& c : components)
    if (c.start < 0 || c.end >= n || c.start > c.end)
      throw DataError("build_fused_sample: component outside sentence");

  FusedSample s;
  s.n = n;
  s.components = components;
  const std::u32string k = truncate_cp(knowledge.text, static_cast<std::size_t>(max_seq_len - n - 1));
  s.x_tilde.reserve(static_cast<std::size_t>(n) + 1 + k.size());
  s.x_tilde += x.chars;
  s.x_tilde.push_back(kSepChar);
  s.x_tilde += k;

  const int mask_id = mask_label_id(scheme);
  const int pad_id = pad_label_id(scheme);
  s.label_ctx.assign(s.x_tilde.size(), pad_id);
  for (int i = 0; i < n; ++i) {
    bool uncertain = false;
    for (const auto& c : components)
      if (i >= c.start && i <= c.end) {
        uncertain = true;
        break;
      }
    s.label_ctx[static_cast<std::size_t>(i)] = uncertain ? mask_id : l_p[static_cast<std::size_t>(i)];
  }
  return s;
}

struct FusionConfig {
  int d_model = 32;
  int layers = 2;
  int d_ff = 64;
  int max_seq_len = 512;
  double alpha = 0.1;
  double lr = 0.1;
  int epochs = 10;
  int batch = 32;
  std::uint64_t seed = 1;
};

struct EncoderLayer {
  std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;  // attention, d x d / d
  std::vector<double> ln1_g, ln1_b;                    // d
  std::vector<double> w1, b1;                          // d x ff / ff
  std::vector<double> w2, b2;                          // ff x d / d
  std::vector<double> ln2_g, ln2_b;                    // d

  template <typename Fn>
  void for_each_array(Fn&& fn) {
    fn("wq", wq); fn("bq", bq); fn("wk", wk); fn("bk", bk);
    fn("wv", wv); fn("bv", bv); fn("wo", wo); fn("bo", bo);
    fn("ln1_g", ln1_g); fn("ln1_b", ln1_b);
    fn("w1", w1); fn("b1", b1); fn("w2", w2); fn("b2", b2);
    fn("ln2_g", ln2_g); fn("ln2_b", ln2_b);
  }
  template <typename Fn>
  void for_each_array(Fn&& fn) const {
    const_cast<EncoderLayer*>(this)->for_each_array(
        [&fn](const char* name, std::vector<double>& v) {
          fn(name, static_cast<const std::vector<double>&>(v));
        });
  }
};

class FusionModel {
public:
  static constexpr int kUnkId = 0;
  static constexpr int kSepId = 1;
  static constexpr int kFirstCharId = 2;

  LabelScheme scheme{std::vector<std::string>{}};
  std::map<char32_t, int> char_ids;
  int d_model = 0;
  int d_ff = 0;
  int max_seq_len = 0;

  std::vector<double> char_emb;   // vocab x d
  std::vector<double> label_emb;  // (|labels|+2) x d, MASK then PAD last
  std::vector<double> pos_emb;    // max_seq_len x d
  std::vector<EncoderLayer> encoder;
  std::vector<double> w_out;  // d x |labels|
  std::vector<double> b_out;  // |labels|

  int vocab_size() const { return kFirstCharId + static_cast<int>(char_ids.size()); }

  int char_id(char32_t c) const {
    if (c == kSepChar) return kSepId;
    const auto it = char_ids.find(c);
    return it == char_ids.end() ? kUnkId : it->second;
  }

  template <typename Fn>
  void for_each_param_array(Fn&& fn) {
    fn("char_emb", char_emb);
    fn("label_emb", label_emb);
    fn("pos_emb", pos_emb);
    fn("w_out", w_out);
    fn("b_out", b_out);
  }
  template <typename Fn>
  void for_each_param_array(Fn&& fn) const {
    fn("char_emb", char_emb);
    fn("label_emb", label_emb);
    fn("pos_emb", pos_emb);
    fn("w_out", w_out);
    fn("b_out", b_out);
  }
};

inline std::map<char32_t, int> build_fusion_vocab(const std::vector<FusedSample>& samples) {
  std::map<char32_t, int> vocab;
  for (const auto& s : samples)
    for (char32_t c : s.x_tilde)
      if (c != kSepChar) vocab.emplace(c, 0);
  int next = FusionModel::kFirstCharId;
  for (auto& [c, id] : vocab) id = next++;
  return vocab;
}

inline FusionModel init_fusion(const LabelScheme& scheme, std::map<char32_t, int> vocab,
                               const FusionConfig& cfg) {
  FusionModel m;
  m.scheme = scheme;
  m.char_ids = std::move(vocab);
  m.d_model = cfg.d_model;
  m.d_ff = cfg.d_ff;
  m.max_seq_len = cfg.max_seq_len;

  Rng rng(mix_seed(cfg.seed, 0x66757A65ULL));
  const int d = cfg.d_model;
  const int L = scheme.num_labels();
  const auto fill = [&rng](std::vector<double>& v, std::size_t size, double stddev) {
    v.resize(size);
    for (auto& x : v) x = rng.normal(0.0, stddev);
  };
  const double wscale = 1.0 / std::sqrt(static_cast<double>(d));

  fill(m.char_emb, static_cast<std::size_t>(m.vocab_size()) * static_cast<std::size_t>(d), 0.1);
  fill(m.label_emb, static_cast<std::size_t>(L + 2) * static_cast<std::size_t>(d), 0.1);
  fill(m.pos_emb, static_cast<std::size_t>(cfg.max_seq_len) * static_cast<std::size_t>(d), 0.1);
  m.encoder.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& layer : m.encoder) {
    const auto dd = static_cast<std::size_t>(d) * static_cast<std::size_t>(d);
    fill(layer.wq, dd, wscale);
    layer.bq.assign(static_cast<std::size_t>(d), 0.0);
    fill(layer.wk, dd, wscale);
    layer.bk.assign(static_cast<std::size_t>(d), 0.0);
    fill(layer.wv, dd, wscale);
    layer.bv.assign(static_cast<std::size_t>(d), 0.0);
    fill(layer.wo, dd, wscale);
    layer.bo.assign(static_cast<std::size_t>(d), 0.0);
    layer.ln1_g.assign(static_cast<std::size_t>(d), 1.0);
    layer.ln1_b.assign(static_cast<std::size_t>(d), 0.0);
    fill(layer.w1, static_cast<std::size_t>(d) * static_cast<std::size_t>(cfg.d_ff), wscale);
    layer.b1.assign(static_cast<std::size_t>(cfg.d_ff), 0.0);
    fill(layer.w2, static_cast<std::size_t>(cfg.d_ff) * static_cast<std::size_t>(d),
         1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
    layer.b2.assign(static_cast<std::size_t>(d), 0.0);
    layer.ln2_g.assign(static_cast<std::size_t>(d), 1.0);
    layer.ln2_b.assign(static_cast<std::size_t>(d), 0.0);
  }
  fill(m.w_out, static_cast<std::size_t>(d) * static_cast<std::size_t>(L), wscale);
  m.b_out.assign(static_cast<std::size_t>(L), 0.0);
  return m;
}

namespace detail {

// Row-major dense kernels. Shapes: a is t x m, b is m x n.
inline void matmul(const double* a, const double* b, double* c, int t, int m, int n) {
  std::fill(c, c + static_cast<std::size_t>(t) * static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < m; ++j) {
      const double av = a[i * m + j];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(j) * static_cast<std::size_t>(n);
      double* crow = c + static_cast<std::size_t>(i) * static_cast<std::size_t>(n);
      for (int l = 0; l < n; ++l) crow[l] += av * brow[l];
    }
}

// gb (m x n) += a^T (m x t) * dc (t x n)
inline void accum_at_dc(const double* a, const double* dc, double* gb, int t, int m, int n) {
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < m; ++j) {
      const double av = a[i * m + j];
      if (av == 0.0) continue;
      const double* drow = dc + static_cast<std::size_t>(i) * static_cast<std::size_t>(n);
      double* grow = gb + static_cast<std::size_t>(j) * static_cast<std::size_t>(n);
      for (int l = 0; l < n; ++l) grow[l] += av * drow[l];
    }
}

// da (t x m) += dc (t x n) * b^T (n x m)
inline void accum_dc_bt(const double* dc, const double* b, double* da, int t, int m, int n) {
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < m; ++j) {
      const double* drow = dc + static_cast<std::size_t>(i) * static_cast<std::size_t>(n);
      const double* brow = b + static_cast<std::size_t>(j) * static_cast<std::size_t>(n);
      double acc = 0.0;
      for (int l = 0; l < n; ++l) acc += drow[l] * brow[l];
      da[i * m + j] += acc;
    }
}

inline void add_bias_rows(double* x, const double* b, int t, int n) {
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < n; ++j) x[i * n + j] += b[j];
}

constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  std::vector<double> normed;  // t x d, (x - mu) * rstd
  std::vector<double> rstd;    // t
};

inline void layer_norm_forward(const double* x, const std::vector<double>& gain,
                               const std::vector<double>& bias, double* y, int t, int d,
                               LayerNormCache& cache) {
  cache.normed.assign(static_cast<std::size_t>(t) * static_cast<std::size_t>(d), 0.0);
  cache.rstd.assign(static_cast<std::size_t>(t), 0.0);
  for (int i = 0; i < t; ++i) {
    const double* row = x + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[static_cast<std::size_t>(i)] = rstd;
    double* nrow = &cache.normed[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
    double* yrow = y + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
    for (int j = 0; j < d; ++j) {
      nrow[j] = (row[j] - mu) * rstd;
      yrow[j] = gain[static_cast<std::size_t>(j)] * nrow[j] + bias[static_cast<std::size_t>(j)];
    }
  }
}

inline void layer_norm_backward(const double* dy, const std::vector<double>& gain,
                                const LayerNormCache& cache, double* dx, std::vector<double>& dgain,
                                std::vector<double>& dbias, int t, int d) {
  for (int i = 0; i < t; ++i) {
    const double* dyrow = dy + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
    const double* nrow = &cache.normed[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
    const double rstd = cache.rstd[static_cast<std::size_t>(i)];
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dxhat = dyrow[j] * gain[static_cast<std::size_t>(j)];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * nrow[j];
      dgain[static_cast<std::size_t>(j)] += dyrow[j] * nrow[j];
      dbias[static_cast<std::size_t>(j)] += dyrow[j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    double* dxrow = dx + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
    for (int j = 0; j < d; ++j) {
      const double dxhat = dyrow[j] * gain[static_cast<std::size_t>(j)];
      dxrow[j] = rstd * (dxhat - mean_dxhat - nrow[j] * mean_dxhat_xhat);
    }
  }
}

struct LayerCache {
  std::vector<double> input;  // t x d, layer input X
  std::vector<double> q, k, v;
  std::vector<double> attn;     // t x t, softmax rows
  std::vector<double> context;  // t x d, attn * V
  std::vector<double> resid1;   // t x d, X + attn_out
  LayerNormCache ln1;
  std::vector<double> x1;      // t x d, after LN1
  std::vector<double> ff_pre;  // t x ff, before relu
  std::vector<double> ff_act;  // t x ff, after relu
  std::vector<double> resid2;  // t x d
  LayerNormCache ln2;
  std::vector<double> out;  // t x d, after LN2
};

struct FusionForward {
  int t = 0;
  std::vector<int> char_ids, label_ids;
  std::vector<double> x0;  // t x d, summed embeddings
  std::vector<LayerCache> layers;
  std::vector<double> logprob;  // n x L for the sentence rows only
};

inline void fusion_forward(const FusionModel& m, const FusedSample& s, FusionForward& f) {
  const int t = s.total_len();
  const int d = m.d_model;
  const int ff = m.d_ff;
  const int L = m.scheme.num_labels();
  if (t > m.max_seq_len) throw DataError("fusion: sample exceeds max_seq_len");
  if (static_cast<std::size_t>(t) != s.label_ctx.size())
    throw MismatchError("fusion: x_tilde/label_ctx length mismatch");

  f.t = t;
  f.char_ids.resize(static_cast<std::size_t>(t));
  f.label_ids.resize(static_cast<std::size_t>(t));
  f.x0.assign(static_cast<std::size_t>(t) * static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < t; ++i) {
    const int cid = m.char_id(s.x_tilde[static_cast<std::size_t>(i)]);
    const int lid = s.label_ctx[static_cast<std::size_t>(i)];
    if (lid < 0 || lid >= m.scheme.num_labels() + 2)
      throw MismatchError("fusion: label context id out of range");
    f.char_ids[static_cast<std::size_t>(i)] = cid;
    f.label_ids[static_cast<std::size_t>(i)] = lid;
    double* row = &f.x0[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
    const double* ce = &m.char_emb[static_cast<std::size_t>(cid) * static_cast<std::size_t>(d)];
    const double* le = &m.label_emb[static_cast<std::size_t>(lid) * static_cast<std::size_t>(d)];
    const double* pe = &m.pos_emb[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
    for (int j = 0; j < d; ++j) row[j] = ce[j] + le[j] + pe[j];
  }

  f.layers.resize(m.encoder.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const std::vector<double>* x = &f.x0;
  for (std::size_t li = 0; li < m.encoder.size(); ++li) {
    const EncoderLayer& layer = m.encoder[li];
    LayerCache& c = f.layers[li];
    const auto td = static_cast<std::size_t>(t) * static_cast<std::size_t>(d);
    c.input = *x;
    c.q.assign(td, 0.0);
    c.k.assign(td, 0.0);
    c.v.assign(td, 0.0);
    matmul(c.input.data(), layer.wq.data(), c.q.data(), t, d, d);
    add_bias_rows(c.q.data(), layer.bq.data(), t, d);
    matmul(c.input.data(), layer.wk.data(), c.k.data(), t, d, d);
    add_bias_rows(c.k.data(), layer.bk.data(), t, d);
    matmul(c.input.data(), layer.wv.data(), c.v.data(), t, d, d);
    add_bias_rows(c.v.data(), layer.bv.data(), t, d);

    c.attn.assign(static_cast<std::size_t>(t) * static_cast<std::size_t>(t), 0.0);
    for (int i = 0; i < t; ++i) {
      double* arow = &c.attn[static_cast<std::size_t>(i) * static_cast<std::size_t>(t)];
      const double* qrow = &c.q[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
      double mx = -1e300;
      for (int u = 0; u < t; ++u) {
        const double* krow = &c.k[static_cast<std::size_t>(u) * static_cast<std::size_t>(d)];
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += qrow[j] * krow[j];
        arow[u] = dot * scale;
        mx = std::max(mx, arow[u]);
      }
      double sum = 0.0;
      for (int u = 0; u < t; ++u) {
        arow[u] = std::exp(arow[u] - mx);
        sum += arow[u];
      }
      for (int u = 0; u < t; ++u) arow[u] /= sum;
    }

    c.context.assign(td, 0.0);
    matmul(c.attn.data(), c.v.data(), c.context.data(), t, t, d);

    c.resid1.assign(td, 0.0);
    matmul(c.context.data(), layer.wo.data(), c.resid1.data(), t, d, d);
    add_bias_rows(c.resid1.data(), layer.bo.data(), t, d);
    for (std::size_t j = 0; j < td; ++j) c.resid1[j] += c.input[j];

    c.x1.assign(td, 0.0);
    layer_norm_forward(c.resid1.data(), layer.ln1_g, layer.ln1_b, c.x1.data(), t, d, c.ln1);

    const auto tff = static_cast<std::size_t>(t) * static_cast<std::size_t>(ff);
    c.ff_pre.assign(tff, 0.0);
    matmul(c.x1.data(), layer.w1.data(), c.ff_pre.data(), t, d, ff);
    add_bias_rows(c.ff_pre.data(), layer.b1.data(), t, ff);
    c.ff_act.resize(tff);
    for (std::size_t j = 0; j < tff; ++j) c.ff_act[j] = c.ff_pre[j] > 0.0 ? c.ff_pre[j] : 0.0;

    c.resid2.assign(td, 0.0);
    matmul(c.ff_act.data(), layer.w2.data(), c.resid2.data(), t, ff, d);
    add_bias_rows(c.resid2.data(), layer.b2.data(), t, d);
    for (std::size_t j = 0; j < td; ++j) c.resid2[j] += c.x1[j];

    c.out.assign(td, 0.0);
    layer_norm_forward(c.resid2.data(), layer.ln2_g, layer.ln2_b, c.out.data(), t, d, c.ln2);
    x = &c.out;
  }

  // Project and log-softmax the sentence rows; SEP and knowledge rows carry
  // no prediction.
  const int n = s.n;
  f.logprob.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(L), 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = x->data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
    double* lp = &f.logprob[static_cast<std::size_t>(i) * static_cast<std::size_t>(L)];
    for (int l = 0; l < L; ++l) lp[l] = m.b_out[static_cast<std::size_t>(l)];
    for (int j = 0; j < d; ++j) {
      const double xv = row[j];
      const double* wrow = &m.w_out[static_cast<std::size_t>(j) * static_cast<std::size_t>(L)];
      for (int l = 0; l < L; ++l) lp[l] += xv * wrow[l];
    }
    double mx = lp[0];
    for (int l = 1; l < L; ++l) mx = std::max(mx, lp[l]);
    double sum = 0.0;
    for (int l = 0; l < L; ++l) sum += std::exp(lp[l] - mx);
    const double lse = mx + std::log(sum);
    for (int l = 0; l < L; ++l) lp[l] -= lse;
  }
}

struct FusionGrads {
  std::vector<double> char_emb, label_emb, pos_emb, w_out, b_out;
  std::vector<EncoderLayer> encoder;  // same shapes, gradient storage

  void init_like(const FusionModel& m) {
    char_emb.assign(m.char_emb.size(), 0.0);
    label_emb.assign(m.label_emb.size(), 0.0);
    pos_emb.assign(m.pos_emb.size(), 0.0);
    w_out.assign(m.w_out.size(), 0.0);
    b_out.assign(m.b_out.size(), 0.0);
    encoder.resize(m.encoder.size());
    for (std::size_t i = 0; i < m.encoder.size(); ++i) {
      const EncoderLayer& src = m.encoder[i];
      EncoderLayer& dst = encoder[i];
      src.for_each_array([&dst](const char* name, const std::vector<double>& v) {
        dst.for_each_array([&](const char* dname, std::vector<double>& dv) {
          if (std::string(name) == dname) dv.assign(v.size(), 0.0);
        });
      });
    }
  }
};

// dlogit over the sentence rows (n x L) flows back through the whole stack.
inline void fusion_backward(const FusionModel& m, const FusedSample& s, const FusionForward& f,
                            const std::vector<double>& dlogit, FusionGrads& g) {
  const int t = f.t;
  const int d = m.d_model;
  const int ff = m.d_ff;
  const int L = m.scheme.num_labels();
  const int n = s.n;
  const auto td = static_cast<std::size_t>(t) * static_cast<std::size_t>(d);

  const std::vector<double>& top =
      m.encoder.empty() ? f.x0 : f.layers.back().out;

  std::vector<double> dx(td, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* drow = &dlogit[static_cast<std::size_t>(i) * static_cast<std::size_t>(L)];
    const double* xrow = top.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
    for (int l = 0; l < L; ++l) g.b_out[static_cast<std::size_t>(l)] += drow[l];
    double* dxrow = &dx[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
    for (int j = 0; j < d; ++j) {
      const double* wrow = &m.w_out[static_cast<std::size_t>(j) * static_cast<std::size_t>(L)];
      double* gwrow = &g.w_out[static_cast<std::size_t>(j) * static_cast<std::size_t>(L)];
      double acc = 0.0;
      for (int l = 0; l < L; ++l) {
        gwrow[l] += xrow[j] * drow[l];
        acc += wrow[l] * drow[l];
      }
      dxrow[j] += acc;
    }
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> d_resid2(td), d_x1(td), d_ff_act, d_ff_pre, d_resid1(td), d_context(td),
      d_attn, d_q(td), d_k(td), d_v(td), d_input(td);
  for (int li = static_cast<int>(m.encoder.size()) - 1; li >= 0; --li) {
    const EncoderLayer& layer = m.encoder[static_cast<std::size_t>(li)];
    EncoderLayer& gl = g.encoder[static_cast<std::size_t>(li)];
    const LayerCache& c = f.layers[static_cast<std::size_t>(li)];

    std::fill(d_resid2.begin(), d_resid2.end(), 0.0);
    layer_norm_backward(dx.data(), layer.ln2_g, c.ln2, d_resid2.data(), gl.ln2_g, gl.ln2_b, t, d);

    // resid2 = x1 + ff_act*w2 + b2
    std::fill(d_x1.begin(), d_x1.end(), 0.0);
    for (std::size_t j = 0; j < td; ++j) d_x1[j] = d_resid2[j];
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) gl.b2[static_cast<std::size_t>(j)] += d_resid2[static_cast<std::size_t>(i) * d + j];
    d_ff_act.assign(static_cast<std::size_t>(t) * static_cast<std::size_t>(ff), 0.0);
    accum_at_dc(c.ff_act.data(), d_resid2.data(), gl.w2.data(), t, ff, d);
    accum_dc_bt(d_resid2.data(), layer.w2.data(), d_ff_act.data(), t, ff, d);

    d_ff_pre = d_ff_act;
    for (std::size_t j = 0; j < d_ff_pre.size(); ++j)
      if (c.ff_pre[j] <= 0.0) d_ff_pre[j] = 0.0;
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < ff; ++j) gl.b1[static_cast<std::size_t>(j)] += d_ff_pre[static_cast<std::size_t>(i) * ff + j];
    accum_at_dc(c.x1.data(), d_ff_pre.data(), gl.w1.data(), t, d, ff);
    accum_dc_bt(d_ff_pre.data(), layer.w1.data(), d_x1.data(), t, d, ff);

    std::fill(d_resid1.begin(), d_resid1.end(), 0.0);
    layer_norm_backward(d_x1.data(), layer.ln1_g, c.ln1, d_resid1.data(), gl.ln1_g, gl.ln1_b, t, d);

    // resid1 = input + context*wo + bo
    std::fill(d_input.begin(), d_input.end(), 0.0);
    for (std::size_t j = 0; j < td; ++j) d_input[j] = d_resid1[j];
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) gl.bo[static_cast<std::size_t>(j)] += d_resid1[static_cast<std::size_t>(i) * d + j];
    std::fill(d_context.begin(), d_context.end(), 0.0);
    accum_at_dc(c.context.data(), d_resid1.data(), gl.wo.data(), t, d, d);
    accum_dc_bt(d_resid1.data(), layer.wo.data(), d_context.data(), t, d, d);

    // context = attn * v
    d_attn.assign(static_cast<std::size_t>(t) * static_cast<std::size_t>(t), 0.0);
    accum_dc_bt(d_context.data(), c.v.data(), d_attn.data(), t, t, d);
    std::fill(d_v.begin(), d_v.end(), 0.0);
    accum_at_dc(c.attn.data(), d_context.data(), d_v.data(), t, t, d);

    // softmax rows backward into raw scores, then into q and k
    for (int i = 0; i < t; ++i) {
      double* darow = &d_attn[static_cast<std::size_t>(i) * static_cast<std::size_t>(t)];
      const double* arow = &c.attn[static_cast<std::size_t>(i) * static_cast<std::size_t>(t)];
      double dot = 0.0;
      for (int u = 0; u < t; ++u) dot += darow[u] * arow[u];
      for (int u = 0; u < t; ++u) darow[u] = (darow[u] - dot) * arow[u];
    }
    std::fill(d_q.begin(), d_q.end(), 0.0);
    std::fill(d_k.begin(), d_k.end(), 0.0);
    for (int i = 0; i < t; ++i) {
      const double* dsrow = &d_attn[static_cast<std::size_t>(i) * static_cast<std::size_t>(t)];
      const double* qrow = &c.q[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
      double* dqrow = &d_q[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
      for (int u = 0; u < t; ++u) {
        const double dv_ = dsrow[u] * scale;
        if (dv_ == 0.0) continue;
        const double* krow = &c.k[static_cast<std::size_t>(u) * static_cast<std::size_t>(d)];
        double* dkrow = &d_k[static_cast<std::size_t>(u) * static_cast<std::size_t>(d)];
        for (int j = 0; j < d; ++j) {
          dqrow[j] += dv_ * krow[j];
          dkrow[j] += dv_ * qrow[j];
        }
      }
    }

    // q/k/v projections
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) {
        gl.bq[static_cast<std::size_t>(j)] += d_q[static_cast<std::size_t>(i) * d + j];
        gl.bk[static_cast<std::size_t>(j)] += d_k[static_cast<std::size_t>(i) * d + j];
        gl.bv[static_cast<std::size_t>(j)] += d_v[static_cast<std::size_t>(i) * d + j];
      }
    accum_at_dc(c.input.data(), d_q.data(), gl.wq.data(), t, d, d);
    accum_at_dc(c.input.data(), d_k.data(), gl.wk.data(), t, d, d);
    accum_at_dc(c.input.data(), d_v.data(), gl.wv.data(), t, d, d);
    accum_dc_bt(d_q.data(), layer.wq.data(), d_input.data(), t, d, d);
    accum_dc_bt(d_k.data(), layer.wk.data(), d_input.data(), t, d, d);
    accum_dc_bt(d_v.data(), layer.wv.data(), d_input.data(), t, d, d);

    dx = d_input;
  }

  for (int i = 0; i < t; ++i) {
    const double* dxrow = &dx[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
    double* gc = &g.char_emb[static_cast<std::size_t>(f.char_ids[static_cast<std::size_t>(i)]) *
                             static_cast<std::size_t>(d)];
    double* glb = &g.label_emb[static_cast<std::size_t>(f.label_ids[static_cast<std::size_t>(i)]) *
                               static_cast<std::size_t>(d)];
    double* gp = &g.pos_emb[static_cast<std::size_t>(i) * static_cast<std::size_t>(d)];
    for (int j = 0; j < d; ++j) {
      gc[j] += dxrow[j];
      glb[j] += dxrow[j];
      gp[j] += dxrow[j];
    }
  }
}

}  // namespace detail

/// Per-position loss weights: full weight inside the sample's uncertain
/// components, alpha elsewhere, sentence positions only.
struct LossWeights {
  double alpha = 1.0;
  std::vector<double> lambda;  // length n

  static LossWeights for_sample(const FusedSample& s, double alpha) {
    LossWeights w;
    w.alpha = alpha;
    w.lambda.assign(static_cast<std::size_t>(s.n), alpha);
    for (const auto& c : s.components)
      for (int i = c.start; i <= c.end && i < s.n; ++i) w.lambda[static_cast<std::size_t>(i)] = 1.0;
    return w;
  }
};

/// Weighted cross entropy over the sentence rows of a lattice:
/// sum(lambda_i * loss_i) / sum(lambda_i). Knowledge rows carry no loss.
inline double weighted_loss(const TagLattice& lattice, const LabelSequence& gold,
                            const LossWeights& weights) {
  const int n = static_cast<int>(gold.size());
  if (lattice.length() < n || weights.lambda.size() != gold.size())
    throw MismatchError("weighted_loss: length mismatch");
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i) {
    const double lam = weights.lambda[static_cast<std::size_t>(i)];
    num += lam * -lattice.at(i, gold[static_cast<std::size_t>(i)]);
    den += lam;
  }
  if (den == 0.0) return 0.0;
  return num / den;
}

/// Knowledge-enhanced lattice over the sentence positions 0..n-1.
inline TagLattice encode(const FusionModel& m, const FusedSample& s) {
  detail::FusionForward f;
  detail::fusion_forward(m, s, f);
  const int L = m.scheme.num_labels();
  TagLattice lat(s.n, L);
  for (int i = 0; i < s.n; ++i)
    for (int l = 0; l < L; ++l)
      lat.at(i, l) = f.logprob[static_cast<std::size_t>(i) * static_cast<std::size_t>(L) +
                               static_cast<std::size_t>(l)];
  return lat;
}

/// One lattice per component group (each group masks only its own positions),
/// summed element-wise, then legality-constrained Viterbi.
inline LabelSequence fuse_predict(const FusionModel& m, const Sentence& x, const LabelSequence& l_p,
                                  const std::vector<std::pair<std::vector<UncertainComponent>,
                                                              KnowledgeText>>& groups) {
  if (groups.empty()) throw DataError("fuse_predict: at least one component group required");
  TagLattice sum;
  bool first = true;
  for (const auto& [components, knowledge] : groups) {
    const FusedSample s =
        build_fused_sample(x, l_p, components, knowledge, m.scheme, m.max_seq_len);
    TagLattice lat = encode(m, s);
    if (first) {
      sum = std::move(lat);
      first = false;
    } else {
      sum += lat;
    }
  }
  return viterbi(sum, m.scheme).seq;
}

/// Mini-batch gradient descent on the weighted loss. Deterministic under the
/// config seed; returns the best-dev-F1 checkpoint when dev is nonempty.
inline FusionModel train_fusion(const std::vector<FusedSample>& samples,
                                const std::vector<FusedSample>& dev, const FusionConfig& cfg,
                                const LabelScheme& scheme) {
  if (samples.empty()) throw DataError("train_fusion: no training samples");
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].gold.size() != static_cast<std::size_t>(samples[i].n))
      throw MismatchError("train_fusion: sample " + std::to_string(i) + " lacks gold labels");

  FusionModel model = init_fusion(scheme, build_fusion_vocab(samples), cfg);

  const auto dev_f1 = [&](const FusionModel& m) {
    std::vector<LabelSequence> pred, gold;
    pred.reserve(dev.size());
    for (const auto& s : dev) {
      pred.push_back(viterbi(encode(m, s), scheme).seq);
      gold.push_back(s.gold);
    }
    return entity_f1(pred, gold, scheme).f1;
  };

  FusionModel best = model;
  double best_f1 = -1.0;

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  detail::FusionForward fwd;
  detail::FusionGrads grads;
  const int L = scheme.num_labels();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0xF0501DULL, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch));
      grads.init_like(model);
      const double inv_batch = 1.0 / static_cast<double>(end - begin);

      for (std::size_t i = begin; i < end; ++i) {
        const FusedSample& s = samples[order[i]];
        detail::fusion_forward(model, s, fwd);
        const LossWeights w = LossWeights::for_sample(s, cfg.alpha);
        double den = 0.0;
        for (const double lam : w.lambda) den += lam;
        if (den == 0.0) continue;
        std::vector<double> dlogit(static_cast<std::size_t>(s.n) * static_cast<std::size_t>(L), 0.0);
        for (int p = 0; p < s.n; ++p) {
          const double coeff = inv_batch * w.lambda[static_cast<std::size_t>(p)] / den;
          const double* lp = &fwd.logprob[static_cast<std::size_t>(p) * static_cast<std::size_t>(L)];
          double* drow = &dlogit[static_cast<std::size_t>(p) * static_cast<std::size_t>(L)];
          for (int l = 0; l < L; ++l) drow[l] = coeff * std::exp(lp[l]);
          drow[s.gold[static_cast<std::size_t>(p)]] -= coeff;
        }
        detail::fusion_backward(model, s, fwd, dlogit, grads);
      }

      const double lr = cfg.lr;
      const auto update = [lr](std::vector<double>& p, const std::vector<double>& g) {
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
      };
      update(model.char_emb, grads.char_emb);
      update(model.label_emb, grads.label_emb);
      update(model.pos_emb, grads.pos_emb);
      update(model.w_out, grads.w_out);
      update(model.b_out, grads.b_out);
      for (std::size_t li = 0; li < model.encoder.size(); ++li) {
        EncoderLayer& layer = model.encoder[li];
        EncoderLayer& gl = grads.encoder[li];
        layer.for_each_array([&gl, &update](const char* name, std::vector<double>& v) {
          gl.for_each_array([&](const char* gname, std::vector<double>& gv) {
            if (std::string(name) == gname) update(v, gv);
          });
        });
      }
    }

    if (!dev.empty()) {
      const double f1 = dev_f1(model);
      if (f1 > best_f1) {
        best_f1 = f1;
        best = model;
      }
    }
  }
  return dev.empty() || cfg.epochs == 0 ? model : best;
}

/// Analytic vs central finite-difference gradients (h = 1e-4) over every
/// parameter array of a small fusion model.
inline double fusion_gradient_check(FusionModel model, const FusedSample& sample, double alpha) {
  if (sample.gold.size() != static_cast<std::size_t>(sample.n))
    throw MismatchError("fusion_gradient_check: sample lacks gold labels");
  const int L = model.scheme.num_labels();
  const LossWeights w = LossWeights::for_sample(sample, alpha);
  double den = 0.0;
  for (const double lam : w.lambda) den += lam;
  if (den == 0.0) throw DataError("fusion_gradient_check: zero total weight");

  detail::FusionForward fwd;
  detail::fusion_forward(model, sample, fwd);
  detail::FusionGrads grads;
  grads.init_like(model);
  std::vector<double> dlogit(static_cast<std::size_t>(sample.n) * static_cast<std::size_t>(L), 0.0);
  for (int p = 0; p < sample.n; ++p) {
    const double coeff = w.lambda[static_cast<std::size_t>(p)] / den;
    const double* lp = &fwd.logprob[static_cast<std::size_t>(p) * static_cast<std::size_t>(L)];
    double* drow = &dlogit[static_cast<std::size_t>(p) * static_cast<std::size_t>(L)];
    for (int l = 0; l < L; ++l) drow[l] = coeff * std::exp(lp[l]);
    drow[sample.gold[static_cast<std::size_t>(p)]] -= coeff;
  }
  detail::fusion_backward(model, sample, fwd, dlogit, grads);

  const auto loss_at = [&]() {
    return weighted_loss(encode(model, sample), sample.gold, w);
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
        throw DataError("fusion_gradient_check: non-finite gradient");
      const double rel = std::abs(ga - numeric) / std::max(1e-8, std::abs(ga) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  };

  check_array(model.char_emb, grads.char_emb);
  check_array(model.label_emb, grads.label_emb);
  check_array(model.pos_emb, grads.pos_emb);
  check_array(model.w_out, grads.w_out);
  check_array(model.b_out, grads.b_out);
  for (std::size_t li = 0; li < model.encoder.size(); ++li) {
    EncoderLayer& layer = model.encoder[li];
    const EncoderLayer& gl = grads.encoder[li];
    layer.for_each_array([&](const char* name, std::vector<double>& v) {
      gl.for_each_array([&](const char* gname, const std::vector<double>& gv) {
        if (std::string(name) == gname) check_array(v, gv);
      });
    });
  }
  return worst;
}

// ---- model file (versioned JSON) -------------------------------------------

inline nlohmann::ordered_json fusion_to_json(const FusionModel& m) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["kind"] = "fusion";
  j["scheme"] = {{"entity_types", m.scheme.entity_types()}};
  std::vector<std::string> chars(m.char_ids.size());
  for (const auto& [c, id] : m.char_ids)
    chars[static_cast<std::size_t>(id - FusionModel::kFirstCharId)] = encode_utf8(c);
  j["chars"] = chars;
  j["mask_label_id"] = mask_label_id(m.scheme);
  j["pad_label_id"] = pad_label_id(m.scheme);
  j["dims"] = {{"d_model", m.d_model}, {"d_ff", m.d_ff}, {"layers", m.encoder.size()},
               {"max_seq_len", m.max_seq_len}};
  nlohmann::ordered_json params;
  m.for_each_param_array([&params](const char* name, const std::vector<double>& v) { params[name] = v; });
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& layer : m.encoder) {
    nlohmann::ordered_json lj;
    layer.for_each_array([&lj](const char* name, const std::vector<double>& v) { lj[name] = v; });
    layers.push_back(std::move(lj));
  }
  j["params"] = std::move(params);
  j["encoder"] = std::move(layers);
  return j;
}

inline FusionModel fusion_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1 || j.at("kind").get<std::string>() != "fusion")
      throw MismatchError("model file is not a version-1 fusion model");
    FusionModel m;
    m.scheme = LabelScheme(j.at("scheme").at("entity_types").get<std::vector<std::string>>());
    int next = FusionModel::kFirstCharId;
    for (const auto& s : j.at("chars")) {
      const std::u32string cps = decode_utf8(s.get<std::string>());
      if (cps.size() != 1) throw DataError("model chars entry is not a single character");
      m.char_ids.emplace(cps[0], next++);
    }
    if (j.at("mask_label_id").get<int>() != mask_label_id(m.scheme) ||
        j.at("pad_label_id").get<int>() != pad_label_id(m.scheme))
      throw MismatchError("fusion model file: MASK/PAD ids inconsistent with scheme");
    m.d_model = j.at("dims").at("d_model").get<int>();
    m.d_ff = j.at("dims").at("d_ff").get<int>();
    m.max_seq_len = j.at("dims").at("max_seq_len").get<int>();
    m.for_each_param_array([&j](const char* name, std::vector<double>& v) {
      v = j.at("params").at(name).get<std::vector<double>>();
    });
    m.encoder.resize(j.at("dims").at("layers").get<std::size_t>());
    const auto& layers = j.at("encoder");
    if (layers.size() != m.encoder.size())
      throw MismatchError("fusion model file: encoder layer count mismatch");
    for (std::size_t i = 0; i < m.encoder.size(); ++i)
      m.encoder[i].for_each_array([&layers, i](const char* name, std::vector<double>& v) {
        v = layers[i].at(name).get<std::vector<double>>();
      });
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("fusion model file: ") + e.what());
  }
}

}  // namespace turner
