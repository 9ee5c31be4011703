#include <unistd.h>

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracle.hpp"
#include "quesnet/metrics.hpp"
#include "quesnet/rng.hpp"

using namespace quesnet;
namespace fs = std::filesystem;

TEST_CASE("multi-label metrics match hand-worked examples") {
  auto exact = metric_multilabel({{2, 3}}, {{2, 3}});
  CHECK(exact.precision == 1.0);
  CHECK(exact.recall == 1.0);
  CHECK(exact.f1 == 1.0);
  CHECK(exact.acc == 1.0);

  auto half = metric_multilabel({{1, 2}}, {{2, 3}});
  CHECK(half.precision == 0.5);
  CHECK(half.recall == 0.5);
  CHECK(half.f1 == 0.5);
  CHECK(half.acc == Catch::Approx(1.0 / 3.0).margin(1e-15));

  auto empty_pred = metric_multilabel({{}}, {{1}});
  CHECK(empty_pred.precision == 0.0);
  CHECK(empty_pred.recall == 0.0);
  CHECK(empty_pred.f1 == 0.0);
  CHECK(empty_pred.acc == 0.0);

  CHECK_THROWS_AS(metric_multilabel({{1}}, {{}}), UsageError);
  CHECK_THROWS_AS(metric_multilabel({{1}}, {{1}, {2}}), UsageError);
}

TEST_CASE("regression metrics match hand-worked examples") {
  std::vector<double> t{0.1, 0.9, 0.1};

  auto perfect = metric_regression(t, t);
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.rmse == 0.0);
  CHECK(perfect.doa.defined);
  CHECK(perfect.doa.value == 1.0);
  CHECK(perfect.pcc.defined);
  CHECK(perfect.pcc.value == Catch::Approx(1.0).margin(1e-15));

  std::vector<double> anti{-0.1, -0.9, -0.1};
  auto flipped = metric_regression(anti, t);
  CHECK(flipped.pcc.value == Catch::Approx(-1.0).margin(1e-15));
  CHECK(flipped.doa.value == 0.0);

  std::vector<double> p{0.2, 0.8, 0.5};
  auto mixed = metric_regression(p, t);
  CHECK(mixed.doa.value == 1.0);
  CHECK(mixed.pcc.value == Catch::Approx(0.866025).margin(1e-6));
  CHECK(mixed.pcc.value == Catch::Approx(oracle::pcc(p, t)).margin(1e-12));
}

TEST_CASE("binary metrics match hand-worked examples") {
  auto sharp = metric_binary({0.9, 0.2}, {1, 0});
  CHECK(sharp.auc.defined);
  CHECK(sharp.auc.value == 1.0);
  CHECK(sharp.acc == 1.0);

  auto tied = metric_binary({0.5, 0.5}, {1, 0});
  CHECK(tied.auc.value == 0.5);

  auto one_class = metric_binary({0.9, 0.2}, {1, 1});
  CHECK_FALSE(one_class.auc.defined);
  CHECK(one_class.acc == 0.5);
}

TEST_CASE("undefined metrics come back flagged, never NaN") {
  std::vector<double> flat{0.4, 0.4, 0.4};
  std::vector<double> moving{0.1, 0.2, 0.3};
  CHECK_FALSE(metric_pcc(flat, moving).defined);
  CHECK_FALSE(metric_pcc(moving, flat).defined);
  CHECK_FALSE(metric_doa(moving, flat).defined);  // no ordered truth pairs
  CHECK(metric_doa(flat, moving).defined);        // prediction ties count 0.5
  CHECK(metric_doa(flat, moving).value == 0.5);
}

TEST_CASE("rank-statistic AUC equals pair enumeration on 200 instances") {
  Rng rng(71);
  for (int inst = 0; inst < 200; ++inst) {
    std::size_t n = 3 + rng.randint(38);
    std::vector<double> score(n);
    std::vector<int> label(n);
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < n; ++i) {
      score[i] = double(rng.randint(6)) / 5.0;  // grid values force ties
      label[i] = rng.bernoulli(0.4) ? 1 : 0;
      (label[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) {
      label[0] = has1 ? 0 : 1;
    }
    MetricValue mine = metric_auc(score, label);
    REQUIRE(mine.defined);
    CHECK(std::abs(mine.value - oracle::auc(score, label)) < 1e-12);
  }
}

TEST_CASE("DOA and PCC match enumeration oracles on 200 instances") {
  Rng rng(72);
  for (int inst = 0; inst < 200; ++inst) {
    std::size_t n = 3 + rng.randint(28);
    std::vector<double> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = double(rng.randint(8)) / 7.0;
      truth[i] = double(rng.randint(8)) / 7.0;
    }
    truth[0] = 0.0;
    truth[1] = 1.0;  // guarantee ordered pairs and non-constant inputs
    pred[0] = 0.0;
    pred[1] = 0.5;
    MetricValue d = metric_doa(pred, truth);
    REQUIRE(d.defined);
    CHECK(std::abs(d.value - oracle::doa(pred, truth)) < 1e-12);
    MetricValue p = metric_pcc(pred, truth);
    REQUIRE(p.defined);
    CHECK(std::abs(p.value - oracle::pcc(pred, truth)) < 1e-12);
  }
}

TEST_CASE("multi-label metrics match the enumeration oracle on 200 instances") {
  Rng rng(73);
  for (int inst = 0; inst < 200; ++inst) {
    std::size_t n = 1 + rng.randint(20);
    std::vector<std::vector<int>> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (int l = 0; l < 10; ++l) {
        if (rng.bernoulli(0.25)) pred[i].push_back(l);
        if (rng.bernoulli(0.25)) truth[i].push_back(l);
      }
      if (truth[i].empty()) truth[i].push_back(int(rng.randint(10)));
    }
    auto mine = metric_multilabel(pred, truth);
    auto ref = oracle::multilabel(pred, truth);
    CHECK(std::abs(mine.precision - ref.precision) < 1e-12);
    CHECK(std::abs(mine.recall - ref.recall) < 1e-12);
    CHECK(std::abs(mine.f1 - ref.f1) < 1e-12);
    CHECK(std::abs(mine.acc - ref.acc) < 1e-12);
  }
}

TEST_CASE("MAE never exceeds RMSE") {
  Rng rng(74);
  for (int inst = 0; inst < 20; ++inst) {
    std::size_t n = 2 + rng.randint(30);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-2.0, 2.0);
      b[i] = rng.uniform(-2.0, 2.0);
    }
    CHECK(metric_mae(a, b) <= metric_rmse(a, b) + 1e-15);
  }
}

TEST_CASE("metric reports serialize deterministically") {
  MetricReport r("knowledge");
  r.set("f1", 0.9625);
  r.set("precision", 1.0 / 3.0);
  r.set("auc", MetricValue::undefined());
  r.set("f1", 0.97);  // overwrite keeps position

  std::string text = r.to_text();
  CHECK(text ==
        "knowledge.f1 = 0.97\n"
        "knowledge.precision = 0.333333333333\n"
        "knowledge.auc undefined\n");
  CHECK(r.get("f1").value == 0.97);
  CHECK_FALSE(r.get("auc").defined);
  CHECK_THROWS_AS(r.get("nope"), UsageError);
  CHECK(r.to_text() == text);

  fs::path path = fs::temp_directory_path() /
                  ("quesnet-metrics-" + std::to_string(::getpid()) + ".txt");
  r.save(path.string());
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == text);
  fs::remove(path);
}
