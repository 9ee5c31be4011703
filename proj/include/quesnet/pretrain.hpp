#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "quesnet/checkpoint.hpp"
#include "quesnet/config.hpp"
#include "quesnet/corpus.hpp"
#include "quesnet/metrics.hpp"
#include "quesnet/model.hpp"
#include "quesnet/optim.hpp"
#include "quesnet/rng.hpp"
#include "quesnet/tensor.hpp"

namespace quesnet {

// ---- low-level objective: reconstruct each input from its hole context ----
//
// Position t is scored from the top-layer forward state before t and the
// backward state after t, so the target never influences its own context.
// Word positions get a vocabulary cross-entropy, image positions a pixel
// MSE through the shared image decoder, meta positions a category
// cross-entropy through the shared meta decoder.

struct HlmTerms {
  Tensor loss;                     // scalar sum over positions
  std::size_t positions = 0;
  double word_ce = 0.0;            // plain sum of the word-position terms
  std::size_t word_positions = 0;
};

inline HlmTerms hlm_loss(const QuesNetModel& m, const Encoded& e) {
  HlmTerms out;
  std::vector<Tensor> terms;
  terms.reserve(e.q.tokens.size());
  for (std::size_t t = 0; t < e.q.tokens.size(); ++t) {
    Tensor h = hole_context(e.state, t);
    const Token& tok = e.q.tokens[t];
    Tensor term;
    switch (tok.kind) {
      case TokenKind::Word: {
        if (tok.word_id < 0)
          throw UsageError("hlm_loss: word token not indexed");
        term = cross_entropy(m.word_logits(h),
                             static_cast<std::size_t>(tok.word_id));
        out.word_ce += term.item();
        ++out.word_positions;
        break;
      }
      case TokenKind::Image:
        term = mse(m.image_recon(h), ImageCoder::image_tensor(tok));
        break;
      case TokenKind::Meta:
        term = cross_entropy(m.meta_logits(h), tok.meta_index);
        break;
    }
    terms.push_back(term);
  }
  out.positions = terms.size();
  out.loss = add_all(terms);
  return out;
}

// ---- high-level objective: tell right options from wrong ones ----

struct DomainTerms {
  Tensor loss;              // scalar mean over options; constant 0 if none
  std::size_t options = 0;
};

inline DomainTerms domain_loss(const QuesNetModel& m, const Encoded& e) {
  DomainTerms out;
  if (e.q.options.empty()) {
    out.loss = Tensor::scalar(0.0);
    return out;
  }
  std::vector<Tensor> terms;
  terms.reserve(e.q.options.size());
  for (const Option& o : e.q.options) {
    Tensor logit = m.disc_logit(e.sentence, m.option_vec(o));
    terms.push_back(bce_with_logit(logit, o.correct ? 1.0 : 0.0));
  }
  out.options = terms.size();
  out.loss = scale(add_all(terms), 1.0 / double(out.options));
  return out;
}

// ---- optimization ----

struct StepStats {
  double l_low = 0.0;   // 0 when the low-level objective is ablated
  double l_high = 0.0;  // 0 when the high-level objective is ablated
  double l = 0.0;
  std::size_t positions = 0;
  std::size_t options = 0;
};

// One optimizer step on a batch. The low-level term defaults to a
// per-position batch mean so the reported value is a readable nats/position
// figure; sum_positions restores per-question sums (mean over questions).
// The high-level term is the batch mean of per-question option means, and
// the two objectives add with equal weight.
inline StepStats pretrain_step(QuesNetModel& m, Adam& opt,
                               const std::vector<const Question*>& batch,
                               bool sum_positions, Rng& rng) {
  if (batch.empty()) throw UsageError("pretrain_step: empty batch");
  const AblationConfig& ab = m.ablation();
  std::vector<Tensor> low, high;
  StepStats s;
  for (const Question* q : batch) {
    Encoded e = m.encode(*q, &rng);
    if (ab.enable_low) {
      HlmTerms t = hlm_loss(m, e);
      low.push_back(t.loss);
      s.positions += t.positions;
    }
    if (ab.enable_high) {
      DomainTerms d = domain_loss(m, e);
      high.push_back(d.loss);
      s.options += d.options;
    }
  }
  Tensor total;
  bool have = false;
  if (ab.enable_low) {
    double div = sum_positions ? double(batch.size()) : double(s.positions);
    Tensor l_low = scale(add_all(low), 1.0 / div);
    s.l_low = l_low.item();
    total = l_low;
    have = true;
  }
  if (ab.enable_high) {
    Tensor l_high = scale(add_all(high), 1.0 / double(batch.size()));
    s.l_high = l_high.item();
    total = have ? add(total, l_high) : l_high;
    have = true;
  }
  s.l = total.item();
  if (!std::isfinite(s.l))
    throw NumericalError("pretrain: non-finite loss (l_low=" +
                         std::to_string(s.l_low) + ", l_high=" +
                         std::to_string(s.l_high) + ", batch of " +
                         std::to_string(batch.size()) + ")");
  opt.zero_grad();
  total.backward();
  opt.step();
  return s;
}

// ---- evaluation (no gradients, no dropout) ----

struct HlmEval {
  double word_ce_sum = 0.0;
  std::size_t word_positions = 0;
  double loss_sum = 0.0;
  std::size_t positions = 0;

  double per_word_ce() const {
    if (!word_positions) throw UsageError("per_word_ce: no word positions");
    return word_ce_sum / double(word_positions);
  }
  double per_position() const {
    if (!positions) throw UsageError("per_position: no positions");
    return loss_sum / double(positions);
  }
};

inline HlmEval eval_hlm(const QuesNetModel& m,
                        const std::vector<Question>& qs) {
  NoGradGuard ng;
  HlmEval out;
  for (const Question& q : qs) {
    Encoded e = m.encode(q);
    HlmTerms t = hlm_loss(m, e);
    out.word_ce_sum += t.word_ce;
    out.word_positions += t.word_positions;
    out.loss_sum += t.loss.item();
    out.positions += t.positions;
  }
  return out;
}

struct DomainEval {
  std::vector<double> probs;  // one per option, question order
  std::vector<int> labels;
  double bce_sum = 0.0;

  std::size_t options() const { return probs.size(); }
  double mean_bce() const {
    if (probs.empty()) throw UsageError("mean_bce: no options scored");
    return bce_sum / double(probs.size());
  }
  MetricValue auc() const { return metric_auc(probs, labels); }
};

inline DomainEval eval_domain(const QuesNetModel& m,
                              const std::vector<Question>& qs) {
  NoGradGuard ng;
  DomainEval out;
  for (const Question& q : qs) {
    if (q.options.empty()) continue;
    Encoded e = m.encode(q);
    for (const Option& o : q.options) {
      double z = m.disc_logit(e.sentence, m.option_vec(o)).item();
      double y = o.correct ? 1.0 : 0.0;
      out.probs.push_back(1.0 / (1.0 + std::exp(-z)));
      out.labels.push_back(o.correct ? 1 : 0);
      out.bce_sum +=
          std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
  }
  return out;
}

// ---- full run: epochs, step metrics, per-epoch checkpoints ----

struct PretrainResult {
  std::size_t steps = 0;
  StepStats last;
  std::vector<std::string> checkpoints;  // one per epoch, in order
  std::string metrics_path;
};

inline PretrainResult pretrain_run(QuesNetModel& m,
                                   const std::vector<Question>& train,
                                   const Config& cfg, const Vocabulary& vocab,
                                   const std::string& out_dir) {
  if (train.empty()) throw UsageError("pretrain_run: empty training set");
  std::filesystem::create_directories(out_dir);
  PretrainResult res;
  res.metrics_path = out_dir + "/pretrain_metrics.jsonl";
  std::ofstream metrics(res.metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + res.metrics_path);

  Adam opt(m.params(), cfg.pretrain.lr);
  Rng rng(cfg.pretrain.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.pretrain.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t off = 0; off < order.size();
         off += cfg.pretrain.batch) {
      std::vector<const Question*> batch;
      std::size_t end = std::min(off + cfg.pretrain.batch, order.size());
      for (std::size_t i = off; i < end; ++i)
        batch.push_back(&train[order[i]]);
      StepStats s =
          pretrain_step(m, opt, batch, cfg.pretrain.sum_positions, rng);
      ++res.steps;
      res.last = s;
      double secs = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      json line{{"step", res.steps},
                {"l_low", s.l_low},
                {"l_high", s.l_high},
                {"l", s.l},
                {"secs", secs}};
      metrics << line.dump() << '\n';
    }
    std::string path =
        out_dir + "/pretrain_epoch" + std::to_string(epoch) + ".qnckpt";
    save_checkpoint(path, cfg, vocab, m.params(), rng.state());
    res.checkpoints.push_back(path);
  }
  if (!metrics.flush()) throw IoError("write failed for " + res.metrics_path);
  return res;
}

}  // namespace quesnet
