#pragma once

#include <cmath>
#include <vector>

#include "config.hpp"
#include "corpus.hpp"
#include "tensor.hpp"

namespace quesnet {

namespace w2v_detail {

// Word-token runs: windows never cross image or meta tokens, and each
// option is its own run.
inline std::vector<std::vector<int>> segments(const Corpus& corpus,
                                              const Vocabulary& vocab) {
  std::vector<std::vector<int>> out;
  auto flush = [&](std::vector<int>& run) {
    if (run.size() >= 2) out.push_back(run);
    run.clear();
  };
  for (const auto& q : corpus.questions) {
    std::vector<int> run;
    for (const auto& t : q.tokens) {
      if (t.kind == TokenKind::Word)
        run.push_back(vocab.lookup(t.word));
      else
        flush(run);
    }
    flush(run);
    for (const auto& o : q.options) {
      for (const auto& t : o.tokens) run.push_back(vocab.lookup(t.word));
      flush(run);
    }
  }
  return out;
}

}  // namespace w2v_detail

// Skip-gram with negative sampling, trained by plain SGD directly on the
// two small tables. Deterministic: iteration order is corpus order and the
// seed drives initialization and negative draws. Returns the input-vector
// table, with the PAD row zeroed.
inline Tensor pretrain_word2vec(const Corpus& corpus, const Vocabulary& vocab,
                                std::size_t dim, const W2vConfig& cfg,
                                std::uint64_t seed) {
  auto segs = w2v_detail::segments(corpus, vocab);
  if (segs.empty())
    throw UsageError("word2vec: corpus has no word-token runs to train on");

  std::size_t v = vocab.size();
  std::vector<double> counts(v, 0.0);
  for (const auto& s : segs)
    for (int id : s) counts[static_cast<std::size_t>(id)] += 1.0;

  // noise distribution: unigram^0.75 over words that occur
  std::vector<double> cum;
  std::vector<std::size_t> cum_id;
  double total = 0.0;
  for (std::size_t i = 0; i < v; ++i)
    if (counts[i] > 0.0) {
      total += std::pow(counts[i], 0.75);
      cum.push_back(total);
      cum_id.push_back(i);
    }

  Rng rng(seed);
  std::vector<double> vin(v * dim), vout(v * dim, 0.0);
  double bound = 0.5 / static_cast<double>(dim);
  for (double& x : vin) x = rng.uniform(-bound, bound);

  auto sample_negative = [&]() {
    double r = rng.uniform() * total;
    std::size_t lo = 0, hi = cum.size() - 1;
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (cum[mid] < r)
        lo = mid + 1;
      else
        hi = mid;
    }
    return cum_id[lo];
  };

  std::vector<double> acc(dim);
  auto train_pair = [&](std::size_t c, std::size_t o, double label) {
    double* wc = vin.data() + c * dim;
    double* wo = vout.data() + o * dim;
    double z = 0.0;
    for (std::size_t d = 0; d < dim; ++d) z += wc[d] * wo[d];
    double g = cfg.lr * (1.0 / (1.0 + std::exp(-z)) - label);
    for (std::size_t d = 0; d < dim; ++d) {
      acc[d] += g * wo[d];
      wo[d] -= g * wc[d];
    }
  };

  for (std::size_t e = 0; e < cfg.epochs; ++e)
    for (const auto& s : segs)
      for (std::size_t i = 0; i < s.size(); ++i) {
        auto c = static_cast<std::size_t>(s[i]);
        auto lo = i > cfg.window ? i - cfg.window : 0;
        auto hi = std::min(s.size() - 1, i + cfg.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          auto ctx = static_cast<std::size_t>(s[j]);
          std::fill(acc.begin(), acc.end(), 0.0);
          train_pair(c, ctx, 1.0);
          for (std::size_t n = 0; n < cfg.negatives; ++n) {
            std::size_t neg = sample_negative();
            if (neg != ctx) train_pair(c, neg, 0.0);
          }
          double* wc = vin.data() + c * dim;
          for (std::size_t d = 0; d < dim; ++d) wc[d] -= acc[d];
        }
      }

  auto pad = static_cast<std::size_t>(Vocabulary::kPad);
  std::fill(vin.begin() + pad * dim, vin.begin() + (pad + 1) * dim, 0.0);
  return Tensor::from({v, dim}, vin);
}

}  // namespace quesnet
