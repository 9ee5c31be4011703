#pragma once

// Independent reference implementations used only by tests. Everything here
// is deliberately brute-force or count-based so it shares no code with the
// library paths it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "quesnet/corpus.hpp"

namespace oracle {

// ---- count-based neighbor-conditional language model ----
//
// Estimates p(word at t | token at t-1, token at t+1) by counting, with
// unigram interpolation. Non-word neighbors collapse to sentinel symbols;
// sequence edges use <s> / </s>. Only word positions are scored, matching
// the word loss of the model under test.
class NeighborOracle {
 public:
  void add(const quesnet::Corpus& corpus,
           const std::vector<std::size_t>& idx) {
    for (std::size_t qi : idx) {
      const auto& toks = corpus.questions[qi].tokens;
      for (std::size_t t = 0; t < toks.size(); ++t) {
        if (toks[t].kind != quesnet::TokenKind::Word) continue;
        const std::string& w = toks[t].word;
        ++uni_[w];
        ++total_;
        ++ctx_[key(toks, t)][w];
      }
    }
  }

  // Mean negative log-likelihood per word position.
  double conditional_ce(const quesnet::Corpus& corpus,
                        const std::vector<std::size_t>& idx) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t qi : idx) {
      const auto& toks = corpus.questions[qi].tokens;
      for (std::size_t t = 0; t < toks.size(); ++t) {
        if (toks[t].kind != quesnet::TokenKind::Word) continue;
        sum += -std::log(cond_prob(toks, t));
        ++n;
      }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
  }

  double unigram_ce(const quesnet::Corpus& corpus,
                    const std::vector<std::size_t>& idx) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t qi : idx) {
      for (const auto& t : corpus.questions[qi].tokens) {
        if (t.kind != quesnet::TokenKind::Word) continue;
        sum += -std::log(uni_prob(t.word));
        ++n;
      }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
  }

 private:
  static std::string symbol(const std::vector<quesnet::Token>& toks,
                            std::ptrdiff_t t) {
    if (t < 0) return "<s>";
    if (t >= static_cast<std::ptrdiff_t>(toks.size())) return "</s>";
    const auto& tok = toks[static_cast<std::size_t>(t)];
    switch (tok.kind) {
      case quesnet::TokenKind::Word:
        return tok.word;
      case quesnet::TokenKind::Image:
        return "<img>";
      case quesnet::TokenKind::Meta:
        return "<meta:" + std::to_string(tok.meta_index) + ">";
    }
    return "<?>";
  }

  static std::string key(const std::vector<quesnet::Token>& toks,
                         std::size_t t) {
    auto st = static_cast<std::ptrdiff_t>(t);
    return symbol(toks, st - 1) + "\x1f" + symbol(toks, st + 1);
  }

  double uni_prob(const std::string& w) const {
    auto it = uni_.find(w);
    double c = it == uni_.end() ? 0.0 : static_cast<double>(it->second);
    double types = static_cast<double>(uni_.size()) + 1.0;
    return (c + kAlpha) / (static_cast<double>(total_) + kAlpha * types);
  }

  double cond_prob(const std::vector<quesnet::Token>& toks,
                   std::size_t t) const {
    auto it = ctx_.find(key(toks, t));
    double cw = 0.0, cc = 0.0;
    if (it != ctx_.end()) {
      for (const auto& [w, c] : it->second) cc += static_cast<double>(c);
      auto wit = it->second.find(toks[t].word);
      if (wit != it->second.end()) cw = static_cast<double>(wit->second);
    }
    return (cw + kBeta * uni_prob(toks[t].word)) / (cc + kBeta);
  }

  static constexpr double kAlpha = 0.1;  // unigram add-alpha
  static constexpr double kBeta = 1.0;   // interpolation pseudo-count

  std::unordered_map<std::string, std::unordered_map<std::string, std::size_t>>
      ctx_;
  std::unordered_map<std::string, std::size_t> uni_;
  std::size_t total_ = 0;
};

// ---- metric references ----

// Pair enumeration: positives above negatives score 1, ties 0.5.
inline double auc(const std::vector<double>& score,
                  const std::vector<int>& label) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (label[i] != 1) continue;
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (label[j] != 0) continue;
      ++pairs;
      if (score[i] > score[j])
        wins += 1.0;
      else if (score[i] == score[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Concordance over pairs strictly ordered in truth; prediction ties 0.5.
inline double doa(const std::vector<double>& pred,
                  const std::vector<double>& truth) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (!(truth[i] > truth[j])) continue;
      ++pairs;
      if (pred[i] > pred[j])
        wins += 1.0;
      else if (pred[i] == pred[j])
        wins += 0.5;
    }
  return wins / static_cast<double>(pairs);
}

inline double pcc(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  auto n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

struct MultilabelRef {
  double precision = 0.0, recall = 0.0, f1 = 0.0, acc = 0.0;
};

inline MultilabelRef multilabel(const std::vector<std::vector<int>>& pred,
                                const std::vector<std::vector<int>>& truth) {
  MultilabelRef r;
  auto n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    std::vector<int> p = pred[i], t = truth[i];
    std::sort(p.begin(), p.end());
    std::sort(t.begin(), t.end());
    std::vector<int> both, either;
    std::set_intersection(p.begin(), p.end(), t.begin(), t.end(),
                          std::back_inserter(both));
    std::set_union(p.begin(), p.end(), t.begin(), t.end(),
                   std::back_inserter(either));
    double inter = static_cast<double>(both.size());
    double pr = p.empty() ? 0.0 : inter / static_cast<double>(p.size());
    double rc = inter / static_cast<double>(t.size());
    r.precision += pr;
    r.recall += rc;
    r.f1 += (pr + rc > 0.0) ? 2.0 * pr * rc / (pr + rc) : 0.0;
    r.acc += inter / static_cast<double>(either.size());
  }
  r.precision /= n;
  r.recall /= n;
  r.f1 /= n;
  r.acc /= n;
  return r;
}

// ---- least-squares linear fit (for the planted difficulty target) ----
//
// Fits y ~ w0 + w1*a + w2*b by normal equations and reports MAE of the
// clipped prediction.
inline double linear_fit_mae(const std::vector<double>& a,
                             const std::vector<double>& b,
                             const std::vector<double>& y) {
  double m[3][3] = {};
  double v[3] = {};
  for (std::size_t i = 0; i < y.size(); ++i) {
    double row[3] = {1.0, a[i], b[i]};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r][c] += row[r] * row[c];
      v[r] += row[r] * y[i];
    }
  }
  // Gaussian elimination with partial pivoting on the 3x3 system.
  int piv[3] = {0, 1, 2};
  for (int c = 0; c < 3; ++c) {
    int best = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::fabs(m[piv[r]][c]) > std::fabs(m[piv[best]][c])) best = r;
    std::swap(piv[c], piv[best]);
    for (int r = c + 1; r < 3; ++r) {
      double f = m[piv[r]][c] / m[piv[c]][c];
      for (int k = c; k < 3; ++k) m[piv[r]][k] -= f * m[piv[c]][k];
      v[piv[r]] -= f * v[piv[c]];
    }
  }
  double w[3];
  for (int c = 2; c >= 0; --c) {
    double s = v[piv[c]];
    for (int k = c + 1; k < 3; ++k) s -= m[piv[c]][k] * w[k];
    w[c] = s / m[piv[c]][c];
  }
  double mae = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double p = w[0] + w[1] * a[i] + w[2] * b[i];
    p = std::min(1.0, std::max(0.0, p));
    mae += std::fabs(p - y[i]);
  }
  return mae / static_cast<double>(y.size());
}

}  // namespace oracle
