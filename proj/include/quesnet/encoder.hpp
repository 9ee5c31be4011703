#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "config.hpp"
#include "embedding.hpp"
#include "ops.hpp"
#include "params.hpp"

namespace quesnet {

// Sinusoidal position table: row t alternates sin/cos of t scaled by
// 10000^(-2i/width). Constant, never trained.
inline Tensor sinusoidal_positions(std::size_t steps, std::size_t width) {
  std::vector<double> v(steps * width);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < width; ++i) {
      double exponent = static_cast<double>(2 * (i / 2)) /
                        static_cast<double>(width);
      double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      v[t * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from({steps, width}, std::move(v));
}

// Per-token states of the Bi-LSTM stack, boundaries included. For a
// sequence of n tokens each direction holds n+1 states per layer:
//   fwd_h[l][0] is the learned start state, fwd_h[l][t+1] the state after
//   consuming token t; bwd_h[l][n] is the learned end state, bwd_h[l][t]
//   the state after reading tokens n-1..t.
// content row t is concat(fwd_h[top][t+1], bwd_h[top][t]), width 2*d_h.
struct EncoderState {
  std::vector<std::vector<Tensor>> fwd_h, fwd_c;
  std::vector<std::vector<Tensor>> bwd_h, bwd_c;
  Tensor content;
  std::vector<int> mask;

  std::size_t length() const { return mask.size(); }
};

// The top-layer context around position t, excluding t itself: the forward
// state just before t concatenated with the backward state just after it.
// Well defined at both ends thanks to the learned boundary states.
inline Tensor hole_context(const EncoderState& s, std::size_t t) {
  const auto& fwd = s.fwd_h.back();
  const auto& bwd = s.bwd_h.back();
  if (t + 1 >= fwd.size())
    throw UsageError("hole_context: position " + std::to_string(t) +
                     " out of range for length " +
                     std::to_string(fwd.size() - 1));
  return concat_vec({fwd[t], bwd[t + 1]});
}

// Multi-layer Bi-LSTM over embedded tokens. Layer 1 reads the embeddings
// in both directions; each deeper layer reads its own direction's states
// from the layer below, never the opposite direction's. Keeping the stacks
// direction-pure is what makes the forward state at t a function of tokens
// 0..t alone at every depth, so a context built from the states around a
// position genuinely excludes it. Initial (h, c) per layer and direction
// are learned, zero-initialized. Masked positions pass states through
// unchanged.
class ContentEncoder {
 public:
  ContentEncoder(ParamMap& ps, const ModelConfig& cfg, Rng& rng)
      : d_h_(cfg.d_h), drop_(cfg.dropout) {
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      std::size_t in = (l == 0) ? cfg.n_e : d_h_;
      Layer la;
      Direction* dirs[2] = {&la.f, &la.b};
      const char* tags[2] = {"f", "b"};
      for (int d = 0; d < 2; ++d) {
        std::string base =
            "enc.l" + std::to_string(l) + "." + tags[d] + ".";
        dirs[d]->w = ps.add(base + "w", Tensor::zeros({4 * d_h_, in + d_h_}, true));
        xavier_fill(dirs[d]->w, in + d_h_, d_h_, rng);
        dirs[d]->b = ps.add(base + "b", Tensor::zeros({4 * d_h_}, true));
        dirs[d]->h0 = ps.add(base + "h0", Tensor::zeros({d_h_}, true));
        dirs[d]->c0 = ps.add(base + "c0", Tensor::zeros({d_h_}, true));
      }
      layers_.push_back(std::move(la));
    }
  }

  std::size_t width() const { return 2 * d_h_; }
  std::size_t depth() const { return layers_.size(); }

  // drop_rng enables inter-layer dropout; leave null for evaluation.
  EncoderState forward(const std::vector<Tensor>& xs,
                       const std::vector<int>& mask,
                       Rng* drop_rng = nullptr) const {
    std::size_t n = xs.size();
    if (n == 0) throw UsageError("encode: empty token sequence");
    if (mask.size() != n)
      throw DimensionError("encode: mask length " +
                           std::to_string(mask.size()) + " vs " +
                           std::to_string(n) + " tokens");

    EncoderState st;
    st.mask = mask;
    std::size_t depth = layers_.size();
    st.fwd_h.resize(depth);
    st.fwd_c.resize(depth);
    st.bwd_h.resize(depth);
    st.bwd_c.resize(depth);

    std::vector<Tensor> fwd_in = xs, bwd_in = xs;
    for (std::size_t l = 0; l < depth; ++l) {
      const Layer& la = layers_[l];
      if (l > 0 && drop_rng && drop_ > 0.0) {
        for (Tensor& x : fwd_in) x = dropout(x, drop_, *drop_rng, true);
        for (Tensor& x : bwd_in) x = dropout(x, drop_, *drop_rng, true);
      }

      auto& fh = st.fwd_h[l];
      auto& fc = st.fwd_c[l];
      fh.resize(n + 1);
      fc.resize(n + 1);
      fh[0] = la.f.h0;
      fc[0] = la.f.c0;
      for (std::size_t t = 0; t < n; ++t) {
        if (!mask[t]) {
          fh[t + 1] = fh[t];
          fc[t + 1] = fc[t];
          continue;
        }
        LstmOut o = lstm_cell(fwd_in[t], fh[t], fc[t], la.f.w, la.f.b);
        fh[t + 1] = o.h;
        fc[t + 1] = o.c;
      }

      auto& bh = st.bwd_h[l];
      auto& bc = st.bwd_c[l];
      bh.resize(n + 1);
      bc.resize(n + 1);
      bh[n] = la.b.h0;
      bc[n] = la.b.c0;
      for (std::size_t t = n; t-- > 0;) {
        if (!mask[t]) {
          bh[t] = bh[t + 1];
          bc[t] = bc[t + 1];
          continue;
        }
        LstmOut o =
            lstm_cell(bwd_in[t], bh[t + 1], bc[t + 1], la.b.w, la.b.b);
        bh[t] = o.h;
        bc[t] = o.c;
      }

      if (l + 1 < depth)
        for (std::size_t t = 0; t < n; ++t) {
          fwd_in[t] = fh[t + 1];
          bwd_in[t] = bh[t];
        }
    }

    std::vector<Tensor> rows(n);
    for (std::size_t t = 0; t < n; ++t)
      rows[t] = concat_vec({st.fwd_h[depth - 1][t + 1],
                            st.bwd_h[depth - 1][t]});
    st.content = stack_rows(rows);
    return st;
  }

  EncoderState forward(const std::vector<Tensor>& xs,
                       Rng* drop_rng = nullptr) const {
    return forward(xs, std::vector<int>(xs.size(), 1), drop_rng);
  }

 private:
  struct Direction {
    Tensor w, b, h0, c0;
  };
  struct Layer {
    Direction f, b;
  };
  std::vector<Layer> layers_;
  std::size_t d_h_;
  double drop_;
};

// Single multi-head self-attention block over the content rows with the
// position table concatenated, followed by a residual, a masked max-pool
// over time, and a linear map back down to the content width.
class SentenceAggregator {
 public:
  SentenceAggregator(ParamMap& ps, const ModelConfig& cfg, Rng& rng)
      : heads_(cfg.heads),
        d_in_(2 * cfg.d_h + cfg.n_pe),
        n_(2 * cfg.d_h),
        n_pe_(cfg.n_pe),
        drop_(cfg.dropout) {
    if (d_in_ % heads_ != 0)
      throw ConfigError("attention width " + std::to_string(d_in_) +
                        " not divisible by " + std::to_string(heads_) +
                        " heads");
    ln_g_ = ps.add("att.ln.g", Tensor::zeros({d_in_}, true));
    for (double& x : ln_g_.data()) x = 1.0;
    ln_b_ = ps.add("att.ln.b", Tensor::zeros({d_in_}, true));
    Tensor* mats[4] = {&wq_, &wk_, &wv_, &wo_};
    const char* names[4] = {"att.wq", "att.wk", "att.wv", "att.wo"};
    for (int i = 0; i < 4; ++i) {
      *mats[i] = ps.add(names[i], Tensor::zeros({d_in_, d_in_}, true));
      xavier_fill(*mats[i], d_in_, d_in_, rng);
    }
    out_w_ = ps.add("agg.w", Tensor::zeros({n_, d_in_}, true));
    xavier_fill(out_w_, d_in_, n_, rng);
    out_b_ = ps.add("agg.b", Tensor::zeros({n_}, true));
  }

  std::size_t width() const { return n_; }

  // attn, when given, receives one [n x n] weight matrix per head.
  Tensor forward(const EncoderState& st, Rng* drop_rng = nullptr,
                 std::vector<Tensor>* attn = nullptr) const {
    std::size_t n = st.length();
    Tensor x_plus = concat_cols(st.content, sinusoidal_positions(n, n_pe_));
    Tensor normed = layer_norm_rows(x_plus, ln_g_, ln_b_);
    Tensor q = matmul(normed, wq_);
    Tensor k = matmul(normed, wk_);
    Tensor v = matmul(normed, wv_);

    std::size_t dk = d_in_ / heads_;
    std::vector<double> key_bias(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (!st.mask[j])
        for (std::size_t i = 0; i < n; ++i) key_bias[i * n + j] = -1e30;
    Tensor bias = Tensor::from({n, n}, std::move(key_bias));

    Tensor merged;
    for (std::size_t h = 0; h < heads_; ++h) {
      Tensor qh = slice_cols(q, h * dk, dk);
      Tensor kh = slice_cols(k, h * dk, dk);
      Tensor vh = slice_cols(v, h * dk, dk);
      Tensor scores =
          scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dk)));
      Tensor weights = softmax(add(scores, bias), -1);
      if (attn) attn->push_back(weights);
      Tensor head = matmul(weights, vh);
      merged = (h == 0) ? head : concat_cols(merged, head);
    }
    Tensor out = matmul(merged, wo_);
    if (drop_rng && drop_ > 0.0) out = dropout(out, drop_, *drop_rng, true);
    Tensor resid = add(out, x_plus);
    Tensor pooled = max_over_rows(resid, st.mask);
    return affine(out_w_, pooled, out_b_);
  }

 private:
  Tensor ln_g_, ln_b_, wq_, wk_, wv_, wo_, out_w_, out_b_;
  std::size_t heads_, d_in_, n_, n_pe_;
  double drop_;
};

struct QuestionRep {
  Tensor content;   // per token, width 2*d_h
  Tensor sentence;  // single vector, width 2*d_h
};

// Full path from raw tokens to the pair of representations.
inline QuestionRep represent(const EmbeddingLayer& emb,
                             const ContentEncoder& enc,
                             const SentenceAggregator& agg, const Question& q,
                             Rng* drop_rng = nullptr) {
  if (q.tokens.empty())
    throw UsageError("represent: question " + q.id + " has no tokens");
  std::vector<Tensor> xs;
  xs.reserve(q.tokens.size());
  for (const Token& t : q.tokens) xs.push_back(emb.embed(t));
  EncoderState st = enc.forward(xs, drop_rng);
  Tensor vs = agg.forward(st, drop_rng);
  return {st.content, vs};
}

}  // namespace quesnet
