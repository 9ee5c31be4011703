#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "quesnet/errors.hpp"

namespace quesnet {

// A metric value plus a definedness flag. Metrics that need structure the
// data lacks (AUC with one class, PCC of a constant vector, DOA with no
// ordered pairs) come back flagged instead of NaN.
struct MetricValue {
  double value = 0.0;
  bool defined = true;

  static MetricValue undefined() { return {0.0, false}; }
};

// Example-based multi-label metrics, macro-averaged over questions: per
// question P = |pred n truth| / |pred| (0 for empty pred), R over truth,
// F1 their harmonic mean, ACC Jaccard overlap.
struct MultilabelMetrics {
  double acc = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline MultilabelMetrics metric_multilabel(
    const std::vector<std::vector<int>>& pred,
    const std::vector<std::vector<int>>& truth) {
  if (pred.size() != truth.size())
    throw UsageError("metric_multilabel: " + std::to_string(pred.size()) +
                     " predictions vs " + std::to_string(truth.size()) +
                     " truths");
  if (pred.empty()) throw UsageError("metric_multilabel: no examples");
  MultilabelMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    std::set<int> p(pred[i].begin(), pred[i].end());
    std::set<int> t(truth[i].begin(), truth[i].end());
    if (t.empty())
      throw UsageError("metric_multilabel: empty truth set at example " +
                       std::to_string(i));
    std::size_t both = 0;
    for (int x : p) both += t.count(x);
    std::size_t either = p.size() + t.size() - both;
    double prec = p.empty() ? 0.0 : double(both) / double(p.size());
    double rec = double(both) / double(t.size());
    m.precision += prec;
    m.recall += rec;
    m.f1 += (prec + rec > 0.0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
    m.acc += double(both) / double(either);
  }
  double n = double(pred.size());
  m.acc /= n;
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

inline double metric_mae(const std::vector<double>& pred,
                         const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw UsageError("metric_mae: bad lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    s += std::abs(pred[i] - truth[i]);
  return s / double(pred.size());
}

inline double metric_rmse(const std::vector<double>& pred,
                          const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw UsageError("metric_rmse: bad lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / double(pred.size()));
}

// Degree of agreement: over pairs with truth_i > truth_j, the fraction
// where pred_i > pred_j, prediction ties counting half.
inline MetricValue metric_doa(const std::vector<double>& pred,
                              const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw UsageError("metric_doa: bad lengths");
  double hits = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (!(truth[i] > truth[j])) continue;
      ++pairs;
      if (pred[i] > pred[j])
        hits += 1.0;
      else if (pred[i] == pred[j])
        hits += 0.5;
    }
  if (pairs == 0) return MetricValue::undefined();
  return {hits / double(pairs), true};
}

inline MetricValue metric_pcc(const std::vector<double>& a,
                              const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw UsageError("metric_pcc: bad lengths");
  auto constant = [](const std::vector<double>& v) {
    for (double x : v)
      if (x != v.front()) return false;
    return true;
  };
  if (constant(a) || constant(b)) return MetricValue::undefined();
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(b.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return {cov / std::sqrt(va * vb), true};
}

struct RegressionMetrics {
  double mae = 0.0, rmse = 0.0;
  MetricValue doa, pcc;
};

inline RegressionMetrics metric_regression(const std::vector<double>& pred,
                                           const std::vector<double>& truth) {
  RegressionMetrics r;
  r.mae = metric_mae(pred, truth);
  r.rmse = metric_rmse(pred, truth);
  r.doa = metric_doa(pred, truth);
  r.pcc = metric_pcc(pred, truth);
  return r;
}

// AUC via the rank-statistic route: average ranks over the pooled sample,
// ties sharing their mean rank. Equivalent to pair enumeration with ties
// counted half, which the tests check against an independent oracle.
inline MetricValue metric_auc(const std::vector<double>& score,
                              const std::vector<int>& label) {
  if (score.size() != label.size() || score.empty())
    throw UsageError("metric_auc: bad lengths");
  std::size_t npos = 0;
  for (int l : label) {
    if (l != 0 && l != 1) throw UsageError("metric_auc: labels must be 0/1");
    npos += std::size_t(l);
  }
  std::size_t nneg = score.size() - npos;
  if (npos == 0 || nneg == 0) return MetricValue::undefined();
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return score[x] < score[y];
  });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && score[order[j]] == score[order[i]]) ++j;
    double mean_rank = 0.5 * double(i + 1 + j);  // of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (label[order[k]]) pos_rank_sum += mean_rank;
    i = j;
  }
  double auc = (pos_rank_sum - 0.5 * double(npos) * double(npos + 1)) /
               (double(npos) * double(nneg));
  return {auc, true};
}

struct BinaryMetrics {
  double acc = 0.0, mae = 0.0, rmse = 0.0;
  MetricValue auc;
};

inline BinaryMetrics metric_binary(const std::vector<double>& prob,
                                   const std::vector<int>& label) {
  if (prob.size() != label.size() || prob.empty())
    throw UsageError("metric_binary: bad lengths");
  BinaryMetrics b;
  std::vector<double> truth(label.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    truth[i] = double(label[i]);
    correct += ((prob[i] >= 0.5) == (label[i] == 1));
  }
  b.acc = double(correct) / double(prob.size());
  b.mae = metric_mae(prob, truth);
  b.rmse = metric_rmse(prob, truth);
  b.auc = metric_auc(prob, label);
  return b;
}

// Ordered task-keyed report; serializes as one "task.metric = value" line
// per entry so repeated evaluations diff cleanly.
class MetricReport {
 public:
  explicit MetricReport(std::string task) : task_(std::move(task)) {}

  void set(const std::string& name, MetricValue v) {
    for (auto& e : entries_)
      if (e.first == name) {
        e.second = v;
        return;
      }
    entries_.emplace_back(name, v);
  }
  void set(const std::string& name, double v) { set(name, MetricValue{v, true}); }

  MetricValue get(const std::string& name) const {
    for (auto& e : entries_)
      if (e.first == name) return e.second;
    throw UsageError("metric report: no metric named " + name);
  }

  const std::string& task() const { return task_; }
  const std::vector<std::pair<std::string, MetricValue>>& entries() const {
    return entries_;
  }

  std::string to_text() const {
    std::string out;
    char buf[64];
    for (const auto& [name, v] : entries_) {
      if (v.defined) {
        std::snprintf(buf, sizeof buf, "%.12g", v.value);
        out += task_ + "." + name + " = " + buf + "\n";
      } else {
        out += task_ + "." + name + " undefined\n";
      }
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write metric report " + path);
    os << to_text();
    if (!os.flush()) throw IoError("write failed for metric report " + path);
  }

 private:
  std::string task_;
  std::vector<std::pair<std::string, MetricValue>> entries_;
};

}  // namespace quesnet
