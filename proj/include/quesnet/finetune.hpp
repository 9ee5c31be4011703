#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "quesnet/checkpoint.hpp"
#include "quesnet/config.hpp"
#include "quesnet/corpus.hpp"
#include "quesnet/metrics.hpp"
#include "quesnet/model.hpp"
#include "quesnet/optim.hpp"
#include "quesnet/rng.hpp"

namespace quesnet {

// ---- deterministic 70/10/20 splits ----
//
// Buckets come from FNV-1a over the id bytes mixed with the seed, so the
// partition depends only on (id, seed), never on ordering or platform.

enum class Split { Train, Valid, Test };

inline Split split_of(const std::string& id, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9e3779b97f4a7c15ull);
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t b = h % 10;
  return b < 7 ? Split::Train : b == 7 ? Split::Valid : Split::Test;
}

template <typename T>
struct SplitSet {
  std::vector<const T*> train, valid, test;

  std::vector<const T*>& of(Split s) {
    return s == Split::Train ? train : s == Split::Valid ? valid : test;
  }
};

template <typename Pred>
SplitSet<Question> split_questions(const Corpus& corpus, std::uint64_t seed,
                                   Pred labeled) {
  SplitSet<Question> out;
  for (const Question& q : corpus.questions)
    if (labeled(q)) out.of(split_of(q.id, seed)).push_back(&q);
  if (out.train.empty() || out.valid.empty() || out.test.empty())
    throw UsageError("split_questions: a partition came out empty");
  return out;
}

inline SplitSet<StudentRecord> split_students(const Corpus& corpus,
                                              std::uint64_t seed) {
  SplitSet<StudentRecord> out;
  for (const StudentRecord& s : corpus.students)
    if (!s.seq.empty()) out.of(split_of(s.id, seed)).push_back(&s);
  if (out.train.empty() || out.valid.empty() || out.test.empty())
    throw UsageError("split_students: a partition came out empty");
  return out;
}

// ---- task heads ----

// Per-label logits over the sentence vector; a label is predicted when its
// sigmoid clears the threshold.
class KnowledgeHead {
 public:
  KnowledgeHead(ParamMap& ps, std::size_t in, std::size_t labels, Rng& rng)
      : labels_(labels) {
    Tensor w = Tensor::zeros({labels, in}, true);
    xavier_fill(w, in, labels, rng);
    w_ = ps.add("head.know.w", w);
    b_ = ps.add("head.know.b", Tensor::zeros({labels}, true));
  }

  std::size_t labels() const { return labels_; }
  Tensor logits(const Tensor& v) const { return affine(w_, v, b_); }

  std::vector<int> predict(const Tensor& v, double threshold) const {
    Tensor z = logits(v);
    std::vector<int> out;
    for (std::size_t l = 0; l < labels_; ++l)
      if (1.0 / (1.0 + std::exp(-z.data()[l])) >= threshold)
        out.push_back(int(l));
    return out;
  }

  // Mean per-label binary cross-entropy against the label set.
  Tensor loss(const Tensor& v, const std::vector<int>& truth) const {
    std::vector<char> is(labels_, 0);
    for (int l : truth) {
      if (l < 0 || std::size_t(l) >= labels_)
        throw UsageError("knowledge label " + std::to_string(l) +
                         " outside the " + std::to_string(labels_) +
                         "-label space");
      is[std::size_t(l)] = 1;
    }
    Tensor z = logits(v);
    std::vector<Tensor> terms;
    terms.reserve(labels_);
    for (std::size_t l = 0; l < labels_; ++l)
      terms.push_back(bce_with_logit(slice_vec(z, l, 1), is[l] ? 1.0 : 0.0));
    return scale(add_all(terms), 1.0 / double(labels_));
  }

 private:
  std::size_t labels_;
  Tensor w_, b_;
};

// Two-layer regressor with a sigmoid output, so predictions live in (0,1)
// like the planted difficulty values.
class DifficultyHead {
 public:
  DifficultyHead(ParamMap& ps, std::size_t in, std::size_t hidden, Rng& rng) {
    auto fc = [&](const std::string& name, std::size_t out, std::size_t n) {
      Tensor w = Tensor::zeros({out, n}, true);
      xavier_fill(w, n, out, rng);
      return std::pair{ps.add(name + ".w", w),
                       ps.add(name + ".b", Tensor::zeros({out}, true))};
    };
    std::tie(w0_, b0_) = fc("head.diff.0", hidden, in);
    std::tie(w1_, b1_) = fc("head.diff.1", 1, hidden);
  }

  Tensor predict(const Tensor& v) const {
    Tensor h = leaky_relu(affine(w0_, v, b0_), 0.01);
    return sigmoid(sum(affine(w1_, h, b1_)));
  }

 private:
  Tensor w0_, b0_, w1_, b1_;
};

// Recurrent model over a student's attempts. Each step reads the attempted
// question's sentence vector with the previous response appended as one
// extra dimension (0.5 before any response exists), and scores the
// probability of a correct answer before that answer is seen.
class ScoreModel {
 public:
  ScoreModel(ParamMap& ps, std::size_t in, std::size_t hidden, Rng& rng)
      : hidden_(hidden) {
    Tensor w = Tensor::zeros({4 * hidden, in + 1 + hidden}, true);
    xavier_fill(w, in + 1 + hidden, hidden, rng);
    w_ = ps.add("head.score.w", w);
    b_ = ps.add("head.score.b", Tensor::zeros({4 * hidden}, true));
    Tensor ow = Tensor::zeros({1, hidden}, true);
    xavier_fill(ow, hidden, 1, rng);
    ow_ = ps.add("head.score.out.w", ow);
    ob_ = ps.add("head.score.out.b", Tensor::zeros({1}, true));
  }

  // One pre-sigmoid score per attempt, in sequence order.
  std::vector<Tensor> logits(const std::vector<Tensor>& sentences,
                             const std::vector<int>& correct) const {
    if (sentences.size() != correct.size() || sentences.empty())
      throw UsageError("score model: sequence and labels disagree");
    Tensor h = Tensor::zeros({hidden_}), c = Tensor::zeros({hidden_});
    std::vector<Tensor> out;
    out.reserve(sentences.size());
    double prev = 0.5;
    for (std::size_t t = 0; t < sentences.size(); ++t) {
      Tensor x = concat_vec({sentences[t], Tensor::scalar(prev)});
      LstmOut s = lstm_cell(x, h, c, w_, b_);
      h = s.h;
      c = s.c;
      out.push_back(sum(affine(ow_, h, ob_)));
      prev = correct[t] ? 1.0 : 0.0;
    }
    return out;
  }

  std::vector<Tensor> probs(const std::vector<Tensor>& sentences,
                            const std::vector<int>& correct) const {
    std::vector<Tensor> out = logits(sentences, correct);
    for (Tensor& z : out) z = sigmoid(z);
    return out;
  }

 private:
  std::size_t hidden_;
  Tensor w_, b_, ow_, ob_;
};

// ---- measurement (shared by training-time validation and eval) ----

namespace finetune_detail {

inline std::unordered_map<std::string, const Question*> question_index(
    const Corpus& corpus) {
  std::unordered_map<std::string, const Question*> by_id;
  for (const Question& q : corpus.questions) by_id[q.id] = &q;
  return by_id;
}

}  // namespace finetune_detail

inline MultilabelMetrics knowledge_metrics(
    QuesNetModel& m, const KnowledgeHead& head,
    const std::vector<const Question*>& qs, double threshold) {
  NoGradGuard ng;
  std::vector<std::vector<int>> pred, truth;
  for (const Question* q : qs) {
    pred.push_back(head.predict(m.encode(*q).sentence, threshold));
    truth.push_back(q->knowledge);
  }
  return metric_multilabel(pred, truth);
}

inline RegressionMetrics difficulty_metrics(
    QuesNetModel& m, const DifficultyHead& head,
    const std::vector<const Question*>& qs) {
  NoGradGuard ng;
  std::vector<double> pred, truth;
  for (const Question* q : qs) {
    pred.push_back(head.predict(m.encode(*q).sentence).item());
    truth.push_back(q->difficulty);
  }
  return metric_regression(pred, truth);
}

inline BinaryMetrics score_metrics(
    QuesNetModel& m, const ScoreModel& head,
    const std::unordered_map<std::string, const Question*>& by_id,
    const std::vector<const StudentRecord*>& students) {
  NoGradGuard ng;
  std::vector<double> probs;
  std::vector<int> labels;
  for (const StudentRecord* s : students) {
    std::vector<Tensor> sentences;
    std::vector<int> ys;
    for (const auto& [qid, y] : s->seq) {
      auto it = by_id.find(qid);
      if (it == by_id.end())
        throw UsageError("score task: student " + s->id +
                         " references unknown question " + qid);
      sentences.push_back(m.encode(*it->second).sentence);
      ys.push_back(y);
    }
    std::vector<Tensor> zs = head.logits(sentences, ys);
    for (std::size_t t = 0; t < zs.size(); ++t) {
      probs.push_back(1.0 / (1.0 + std::exp(-zs[t].item())));
      labels.push_back(ys[t]);
    }
  }
  return metric_binary(probs, labels);
}

// ---- shared fine-tuning scaffold ----

struct FinetuneOutcome {
  explicit FinetuneOutcome(std::string task) : report(std::move(task)) {}

  MetricReport report;               // test metrics at the restored best
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;        // 1-based
  double best_valid = 0.0;
  std::vector<double> valid_curve;   // validation metric after each epoch
  double threshold = 0.5;            // knowledge decision threshold used
};

namespace finetune_detail {

// Epoch loop with early stopping: run_epoch does one pass of updates,
// validate scores the validation split, higher_better orients the
// comparison. The best parameters are restored before returning.
template <typename RunEpoch, typename Validate>
std::pair<std::vector<double>, std::size_t> train_early_stop(
    ParamMap& trainable, const FinetuneConfig& fc, RunEpoch run_epoch,
    Validate validate, bool higher_better) {
  std::vector<double> curve;
  std::vector<std::vector<double>> best = trainable.snapshot();
  std::size_t best_epoch = 0;
  double best_metric = higher_better ? -1e300 : 1e300;
  std::size_t since = 0;
  for (std::size_t epoch = 1; epoch <= fc.epochs; ++epoch) {
    run_epoch(epoch);
    double metric = validate();
    curve.push_back(metric);
    bool better =
        higher_better ? metric > best_metric : metric < best_metric;
    if (better) {
      best_metric = metric;
      best = trainable.snapshot();
      best_epoch = epoch;
      since = 0;
    } else if (++since >= fc.patience) {
      break;
    }
  }
  trainable.restore(best);
  return {std::move(curve), best_epoch};
}

// Handles into the model's registry: everything, or just the task head
// when the backbone is frozen. Adam sizes its state from this map, so it
// must be assembled before the optimizer is built.
inline ParamMap trainable_set(QuesNetModel& m, bool freeze_backbone) {
  ParamMap out;
  for (auto& [name, t] : m.params())
    if (!freeze_backbone || name.rfind("head.", 0) == 0) out.add(name, t);
  return out;
}

inline void fill_outcome(FinetuneOutcome& out, std::vector<double> curve,
                         std::size_t best_epoch) {
  out.valid_curve = std::move(curve);
  out.epochs_run = out.valid_curve.size();
  out.best_epoch = best_epoch;
  out.best_valid = best_epoch ? out.valid_curve[best_epoch - 1] : 0.0;
}

}  // namespace finetune_detail

// ---- knowledge mapping ----

inline std::size_t knowledge_label_count(const Corpus& corpus) {
  int max_label = -1;
  for (const Question& q : corpus.questions)
    if (q.has_knowledge)
      for (int l : q.knowledge) max_label = std::max(max_label, l);
  if (max_label < 0)
    throw UsageError("knowledge task: corpus has no knowledge labels");
  return std::size_t(max_label) + 1;
}

inline FinetuneOutcome finetune_knowledge(QuesNetModel& m,
                                          const Corpus& corpus,
                                          const FinetuneConfig& fc,
                                          bool tune_threshold = false) {
  std::size_t n_labels = knowledge_label_count(corpus);
  auto split = split_questions(corpus, fc.seed, [](const Question& q) {
    return q.has_knowledge && !q.knowledge.empty();
  });
  Rng rng(fc.seed);
  KnowledgeHead head(m.params(), 2 * m.config().d_h, n_labels, rng);
  ParamMap trainable = finetune_detail::trainable_set(m, fc.freeze_backbone);
  Adam opt(trainable, fc.lr);

  auto run_epoch = [&](std::size_t) {
    std::vector<const Question*> order = split.train;
    rng.shuffle(order);
    for (std::size_t off = 0; off < order.size(); off += fc.batch) {
      std::size_t end = std::min(off + fc.batch, order.size());
      std::vector<Tensor> terms;
      for (std::size_t i = off; i < end; ++i) {
        Encoded e = m.encode(*order[i], &rng);
        terms.push_back(head.loss(e.sentence, order[i]->knowledge));
      }
      Tensor loss = scale(add_all(terms), 1.0 / double(terms.size()));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  };
  auto [curve, best_epoch] = finetune_detail::train_early_stop(
      trainable, fc, run_epoch,
      [&]() {
        return knowledge_metrics(m, head, split.valid, fc.threshold).f1;
      },
      true);

  FinetuneOutcome out("knowledge");
  finetune_detail::fill_outcome(out, std::move(curve), best_epoch);
  out.threshold = fc.threshold;
  if (tune_threshold) {
    double best_f1 = -1.0;
    for (double tau = 0.10; tau <= 0.901; tau += 0.05) {
      double f1 = knowledge_metrics(m, head, split.valid, tau).f1;
      if (f1 > best_f1) {
        best_f1 = f1;
        out.threshold = tau;
      }
    }
  }
  MultilabelMetrics test = knowledge_metrics(m, head, split.test, out.threshold);
  out.report.set("f1", test.f1);
  out.report.set("precision", test.precision);
  out.report.set("recall", test.recall);
  out.report.set("acc", test.acc);
  return out;
}

// ---- difficulty estimation ----

inline FinetuneOutcome finetune_difficulty(QuesNetModel& m,
                                           const Corpus& corpus,
                                           const FinetuneConfig& fc) {
  auto split = split_questions(
      corpus, fc.seed, [](const Question& q) { return q.has_difficulty; });
  Rng rng(fc.seed);
  DifficultyHead head(m.params(), 2 * m.config().d_h, fc.hidden, rng);
  ParamMap trainable = finetune_detail::trainable_set(m, fc.freeze_backbone);
  Adam opt(trainable, fc.lr);

  auto run_epoch = [&](std::size_t) {
    std::vector<const Question*> order = split.train;
    rng.shuffle(order);
    for (std::size_t off = 0; off < order.size(); off += fc.batch) {
      std::size_t end = std::min(off + fc.batch, order.size());
      std::vector<Tensor> terms;
      for (std::size_t i = off; i < end; ++i) {
        Encoded e = m.encode(*order[i], &rng);
        terms.push_back(mse(head.predict(e.sentence),
                            Tensor::scalar(order[i]->difficulty)));
      }
      Tensor loss = scale(add_all(terms), 1.0 / double(terms.size()));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  };
  auto [curve, best_epoch] = finetune_detail::train_early_stop(
      trainable, fc, run_epoch,
      [&]() { return difficulty_metrics(m, head, split.valid).mae; }, false);

  FinetuneOutcome out("difficulty");
  finetune_detail::fill_outcome(out, std::move(curve), best_epoch);
  RegressionMetrics test = difficulty_metrics(m, head, split.test);
  out.report.set("mae", test.mae);
  out.report.set("rmse", test.rmse);
  out.report.set("doa", test.doa);
  out.report.set("pcc", test.pcc);
  return out;
}

// ---- score prediction ----

inline FinetuneOutcome finetune_score(QuesNetModel& m, const Corpus& corpus,
                                      const FinetuneConfig& fc) {
  if (corpus.students.empty())
    throw UsageError("score task: corpus has no student records");
  auto split = split_students(corpus, fc.seed);
  auto by_id = finetune_detail::question_index(corpus);

  Rng rng(fc.seed);
  ScoreModel head(m.params(), 2 * m.config().d_h, fc.hidden, rng);
  ParamMap trainable = finetune_detail::trainable_set(m, fc.freeze_backbone);
  Adam opt(trainable, fc.lr);

  auto sequence_logits = [&](const StudentRecord& s, Rng* drop) {
    std::vector<Tensor> sentences;
    std::vector<int> ys;
    for (const auto& [qid, y] : s.seq) {
      auto it = by_id.find(qid);
      if (it == by_id.end())
        throw UsageError("score task: student " + s.id +
                         " references unknown question " + qid);
      sentences.push_back(m.encode(*it->second, drop).sentence);
      ys.push_back(y);
    }
    return std::pair{head.logits(sentences, ys), ys};
  };
  auto run_epoch = [&](std::size_t) {
    std::vector<const StudentRecord*> order = split.train;
    rng.shuffle(order);
    for (std::size_t off = 0; off < order.size(); off += fc.batch) {
      std::size_t end = std::min(off + fc.batch, order.size());
      std::vector<Tensor> terms;
      for (std::size_t i = off; i < end; ++i) {
        auto [zs, ys] = sequence_logits(*order[i], &rng);
        for (std::size_t t = 0; t < zs.size(); ++t)
          terms.push_back(bce_with_logit(zs[t], ys[t] ? 1.0 : 0.0));
      }
      Tensor loss = scale(add_all(terms), 1.0 / double(terms.size()));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  };
  auto [curve, best_epoch] = finetune_detail::train_early_stop(
      trainable, fc, run_epoch,
      [&]() {
        MetricValue auc = score_metrics(m, head, by_id, split.valid).auc;
        return auc.defined ? auc.value : 0.5;
      },
      true);

  FinetuneOutcome out("score");
  finetune_detail::fill_outcome(out, std::move(curve), best_epoch);
  BinaryMetrics test = score_metrics(m, head, by_id, split.test);
  out.report.set("acc", test.acc);
  out.report.set("auc", test.auc);
  out.report.set("mae", test.mae);
  out.report.set("rmse", test.rmse);
  return out;
}

// ---- checkpoint-driven entry points ----

enum class Task { Knowledge, Difficulty, Score };

inline const char* task_name(Task t) {
  return t == Task::Knowledge ? "knowledge"
         : t == Task::Difficulty ? "difficulty"
                                 : "score";
}

inline Task task_from_name(const std::string& name) {
  if (name == "knowledge") return Task::Knowledge;
  if (name == "difficulty") return Task::Difficulty;
  if (name == "score") return Task::Score;
  throw ConfigError("unknown task \"" + name +
                    "\" (expected knowledge, difficulty, or score)");
}

// Builds the model from the checkpoint's own config snapshot, installs the
// stored parameters, and runs the requested task. The caller's finetune
// settings come from `fc`; the backbone dimensions always come from the
// checkpoint so shapes can never disagree. After the call the model's
// registry also holds the trained head ("head.*"), so saving it yields a
// checkpoint an evaluator can rebuild from. The vocabulary travels with
// the checkpoint and comes back through `vocab_out`.
inline FinetuneOutcome finetune_task(Task task, const Corpus& corpus,
                                     const std::string& checkpoint_path,
                                     const FinetuneConfig& fc,
                                     std::optional<QuesNetModel>* model_out = nullptr,
                                     Vocabulary* vocab_out = nullptr) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  QuesNetModel m(ck.config.model, ck.config.ablation, ck.vocab.size(),
                 fc.seed);
  ck.install(m.params());
  FinetuneOutcome out =
      task == Task::Knowledge  ? finetune_knowledge(m, corpus, fc)
      : task == Task::Difficulty ? finetune_difficulty(m, corpus, fc)
                                 : finetune_score(m, corpus, fc);
  if (vocab_out) *vocab_out = ck.vocab;
  if (model_out) model_out->emplace(std::move(m));
  return out;
}

// Re-scores the test split of a fine-tuned checkpoint. Everything that
// shapes the measurement (dims, task head sizes, split seed, threshold)
// comes from the checkpoint snapshot, so repeated runs on the same inputs
// produce byte-identical reports. The corpus must be indexed with the
// checkpoint's vocabulary.
inline MetricReport eval_task(Task task, const Corpus& corpus,
                              const std::string& checkpoint_path) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  const FinetuneConfig& fc = ck.config.finetune;
  QuesNetModel m(ck.config.model, ck.config.ablation, ck.vocab.size(),
                 fc.seed);
  auto head_shape = [&](const char* name) -> const Shape& {
    for (const auto& [n, t] : ck.tensors)
      if (n == name) return t.shape();
    throw UsageError("checkpoint " + checkpoint_path + " lacks " + name +
                     "; was it fine-tuned for the " +
                     std::string(task_name(task)) + " task?");
  };
  Rng rng(fc.seed);
  std::size_t d = 2 * m.config().d_h;
  MetricReport report(task_name(task));
  if (task == Task::Knowledge) {
    KnowledgeHead head(m.params(), d, head_shape("head.know.w")[0], rng);
    ck.install(m.params());
    auto split = split_questions(corpus, fc.seed, [](const Question& q) {
      return q.has_knowledge && !q.knowledge.empty();
    });
    MultilabelMetrics t = knowledge_metrics(m, head, split.test, fc.threshold);
    report.set("f1", t.f1);
    report.set("precision", t.precision);
    report.set("recall", t.recall);
    report.set("acc", t.acc);
  } else if (task == Task::Difficulty) {
    DifficultyHead head(m.params(), d, head_shape("head.diff.0.w")[0], rng);
    ck.install(m.params());
    auto split = split_questions(
        corpus, fc.seed, [](const Question& q) { return q.has_difficulty; });
    RegressionMetrics t = difficulty_metrics(m, head, split.test);
    report.set("mae", t.mae);
    report.set("rmse", t.rmse);
    report.set("doa", t.doa);
    report.set("pcc", t.pcc);
  } else {
    ScoreModel head(m.params(), d, head_shape("head.score.w")[0] / 4, rng);
    ck.install(m.params());
    auto split = split_students(corpus, fc.seed);
    auto by_id = finetune_detail::question_index(corpus);
    BinaryMetrics t = score_metrics(m, head, by_id, split.test);
    report.set("acc", t.acc);
    report.set("auc", t.auc);
    report.set("mae", t.mae);
    report.set("rmse", t.rmse);
  }
  return report;
}

}  // namespace quesnet
