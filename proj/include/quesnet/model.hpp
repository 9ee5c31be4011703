#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "quesnet/config.hpp"
#include "quesnet/corpus.hpp"
#include "quesnet/embedding.hpp"
#include "quesnet/encoder.hpp"
#include "quesnet/ops.hpp"
#include "quesnet/params.hpp"
#include "quesnet/rng.hpp"
#include "quesnet/tensor.hpp"

namespace quesnet {

// Everything the forward pass produces for one question: the token list
// the network actually saw (after ablation filtering), the recurrent
// states, and the sentence vector.
struct Encoded {
  Question q;
  EncoderState state;
  Tensor sentence;  // [2*d_h]
};

// Full model: embedding layer, content encoder, sentence aggregator, the
// three reconstruction heads, the option scorer, and the discriminator.
// Construction registers every parameter in a stable order so optimizer
// state and checkpoints line up across runs.
class QuesNetModel {
 public:
  QuesNetModel(const ModelConfig& cfg, const AblationConfig& ab,
               std::size_t vocab_size, std::uint64_t seed)
      : cfg_(cfg),
        ab_(ab),
        vocab_(vocab_size),
        rng_(seed),
        emb_(params_, cfg, vocab_size, rng_),
        content_(params_, cfg, rng_),
        sentence_(params_, cfg, rng_) {
    if (!ab.enable_text && !ab.enable_image && !ab.enable_meta)
      throw ConfigError("ablation disables every input kind");
    if (!ab.enable_low && !ab.enable_high)
      throw ConfigError("ablation disables every pre-training objective");

    auto fc = [&](const std::string& name, std::size_t out, std::size_t in) {
      Tensor w = Tensor::zeros({out, in}, true);
      xavier_fill(w, in, out, rng_);
      return std::pair{params_.add(name + ".w", w),
                       params_.add(name + ".b", Tensor::zeros({out}, true))};
    };
    const std::size_t two_dh = 2 * cfg.d_h;
    std::tie(ww_, wb_) = fc("hlm.word", vocab_size, two_dh);
    std::tie(iw_, ib_) = fc("hlm.img", cfg.n_e, two_dh);
    std::tie(mw_, mb_) = fc("hlm.meta", cfg.n_e, two_dh);

    auto lstm_dir = [&](const std::string& name) {
      Tensor w = Tensor::zeros({4 * cfg.d_h, cfg.n_e + cfg.d_h}, true);
      xavier_fill(w, cfg.n_e + cfg.d_h, cfg.d_h, rng_);
      return std::pair{params_.add(name + ".w", w),
                       params_.add(name + ".b",
                                   Tensor::zeros({4 * cfg.d_h}, true))};
    };
    std::tie(ofw_, ofb_) = lstm_dir("opt.f");
    std::tie(obw_, obb_) = lstm_dir("opt.b");

    std::tie(d0w_, d0b_) = fc("disc.0", cfg.disc_hidden, 2 * two_dh);
    std::tie(d1w_, d1b_) = fc("disc.1", 1, cfg.disc_hidden);
  }

  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const AblationConfig& ablation() const { return ab_; }
  std::size_t vocab_size() const { return vocab_; }
  const EmbeddingLayer& embedding() const { return emb_; }
  const ContentEncoder& content_encoder() const { return content_; }
  const SentenceAggregator& aggregator() const { return sentence_; }

  // Drops token kinds the ablation disables. Options are left untouched:
  // they feed the high-level objective, which has its own switch.
  Question filter(const Question& q) const {
    Question out;
    out.id = q.id;
    out.options = q.options;
    for (const Token& t : q.tokens) {
      bool keep = (t.kind == TokenKind::Word && ab_.enable_text) ||
                  (t.kind == TokenKind::Image && ab_.enable_image) ||
                  (t.kind == TokenKind::Meta && ab_.enable_meta);
      if (keep) out.tokens.push_back(t);
    }
    if (out.tokens.empty())
      throw UsageError("ablation removed every token of question " + q.id);
    return out;
  }

  Encoded encode(const Question& q, Rng* drop_rng = nullptr) const {
    Encoded e;
    e.q = filter(q);
    std::vector<Tensor> xs;
    xs.reserve(e.q.tokens.size());
    for (const Token& t : e.q.tokens) xs.push_back(emb_.embed(t));
    e.state = content_.forward(xs, drop_rng);
    e.sentence = sentence_.forward(e.state, drop_rng);
    return e;
  }

  // ---- reconstruction heads over a hole context h [2*d_h] ----

  Tensor word_logits(const Tensor& h) const { return affine(ww_, h, wb_); }

  // [2*d_h] -> reconstructed image [1, img_h, img_w], shares the
  // embedding layer's image decoder.
  Tensor image_recon(const Tensor& h) const {
    return emb_.image().decode(affine(iw_, h, ib_));
  }

  // [2*d_h] -> category logits [k_meta], shares the meta decoder.
  Tensor meta_logits(const Tensor& h) const {
    return emb_.meta().decode(affine(mw_, h, mb_));
  }

  // ---- domain objective ----

  // Runs a 1-layer bi-LSTM over the option's word embeddings (table shared
  // with the stem) and concatenates the two final states.
  Tensor option_vec(const Option& opt) const {
    if (opt.tokens.empty()) throw UsageError("option_vec: empty option");
    std::vector<Tensor> xs;
    xs.reserve(opt.tokens.size());
    for (const Token& t : opt.tokens) xs.push_back(emb_.embed(t));
    Tensor h = Tensor::zeros({cfg_.d_h}), c = Tensor::zeros({cfg_.d_h});
    for (const Tensor& x : xs) {
      LstmOut s = lstm_cell(x, h, c, ofw_, ofb_);
      h = s.h;
      c = s.c;
    }
    Tensor hb = Tensor::zeros({cfg_.d_h}), cb = Tensor::zeros({cfg_.d_h});
    for (std::size_t i = xs.size(); i-- > 0;) {
      LstmOut s = lstm_cell(xs[i], hb, cb, obw_, obb_);
      hb = s.h;
      cb = s.c;
    }
    return concat_vec({h, hb});
  }

  // Scalar logit saying "this option answers this question".
  Tensor disc_logit(const Tensor& v_s, const Tensor& v_opt) const {
    Tensor x = concat_vec({v_s, v_opt});
    Tensor hid = leaky_relu(affine(d0w_, x, d0b_), 0.01);
    return sum(affine(d1w_, hid, d1b_));
  }

 private:
  ParamMap params_;
  ModelConfig cfg_;
  AblationConfig ab_;
  std::size_t vocab_;
  Rng rng_;  // consumed during construction only
  EmbeddingLayer emb_;
  ContentEncoder content_;
  SentenceAggregator sentence_;
  Tensor ww_, wb_, iw_, ib_, mw_, mb_;
  Tensor ofw_, ofb_, obw_, obb_;
  Tensor d0w_, d0b_, d1w_, d1b_;
};

}  // namespace quesnet
