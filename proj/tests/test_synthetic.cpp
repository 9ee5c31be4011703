#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>
#include <unordered_map>

#include "oracle.hpp"
#include "quesnet/synthetic.hpp"

using namespace quesnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("quesnet-synth-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One shared full-size corpus; generation is cheap but not free.
const std::pair<Corpus, SyntheticTruth>& full() {
  static auto p = generate_synthetic(SyntheticSpec{}, 42);
  return p;
}

std::size_t stem_cue(const Question& q) {
  std::size_t cue = SyntheticSpec::kCues;
  std::size_t hits = 0;
  for (const auto& t : q.tokens)
    if (t.kind == TokenKind::Word && t.word[0] == 'k') {
      cue = std::stoul(t.word.substr(1));
      ++hits;
    }
  REQUIRE(hits == 1);
  return cue;
}

}  // namespace

TEST_CASE("generated ratios match the spec within 0.02") {
  const auto& [corpus, truth] = full();
  REQUIRE(corpus.questions.size() == 10000);
  double img = 0, meta = 0, opts = 0;
  for (const auto& q : corpus.questions) {
    if (q.has_meta()) meta += 1;
    if (!q.options.empty()) opts += 1;
    for (const auto& t : q.tokens)
      if (t.kind == TokenKind::Image) img += 1;
  }
  double n = static_cast<double>(corpus.questions.size());
  CHECK(std::fabs(img / n - 0.25) < 0.02);
  CHECK(std::fabs(meta / n - 0.72) < 0.02);
  CHECK(std::fabs(opts / n - 0.36) < 0.02);
}

TEST_CASE("generated vocabulary is exactly 200 words") {
  Vocabulary v = build_vocabulary(full().first);
  CHECK(v.size() == 200);
}

TEST_CASE("exactly the correct option shares the stem cue") {
  const auto& [corpus, truth] = full();
  std::size_t option_questions = 0;
  for (const auto& q : corpus.questions) {
    if (q.options.empty()) continue;
    ++option_questions;
    std::string cue = synth_detail::cue_word(stem_cue(q));
    std::size_t sharing = 0, correct = 0;
    for (const auto& o : q.options) {
      bool has = false;
      for (const auto& t : o.tokens) has = has || t.word == cue;
      if (has) {
        ++sharing;
        CHECK(o.correct);
      }
      if (o.correct) ++correct;
    }
    REQUIRE(sharing == 1);
    REQUIRE(correct == 1);
  }
  CHECK(option_questions > 3000);
}

TEST_CASE("labels are the planted functions of the token sequence") {
  const auto& [corpus, truth] = full();
  for (std::size_t i = 0; i < corpus.questions.size(); i += 17) {
    const Question& q = corpus.questions[i];
    std::size_t cue = stem_cue(q);
    CHECK(truth.questions[i].id == q.id);
    CHECK(truth.questions[i].cue == cue);

    double m = 0, f0 = 0, f1 = 0;
    for (const auto& t : q.tokens)
      if (t.kind == TokenKind::Word && t.word[0] == 'f') {
        m += 1;
        if (t.word == "f00") f0 += 1;
        if (t.word == "f01") f1 += 1;
      }
    REQUIRE(q.has_difficulty);
    CHECK(q.difficulty == synthetic_difficulty(f0 / m, f1 / m));
    REQUIRE(q.has_knowledge);
    CHECK(q.knowledge == synthetic_knowledge(cue));
    if (q.has_meta()) CHECK(q.tokens[0].meta_index == cue % 8);
  }
}

TEST_CASE("grammar is far more predictable from neighbors than alone") {
  const auto& [corpus, truth] = full();
  std::vector<std::size_t> all(corpus.questions.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  oracle::NeighborOracle model;
  model.add(corpus, all);
  double uni = model.unigram_ce(corpus, all);
  double cond = model.conditional_ce(corpus, all);
  INFO("unigram " << uni << " conditional " << cond);
  CHECK(uni - cond >= 0.5);
  // the only free slot given neighbors is the first filler's b attribute
  CHECK(cond < 0.35);
  CHECK(uni > 2.0);
}

TEST_CASE("student outcomes track ability against difficulty") {
  const auto& [corpus, truth] = full();
  REQUIRE(corpus.students.size() == 500);
  std::unordered_map<std::string, double> diff;
  for (const auto& q : corpus.questions) diff[q.id] = q.difficulty;

  std::vector<double> score;
  std::vector<int> label;
  for (std::size_t s = 0; s < corpus.students.size(); ++s) {
    const auto& rec = corpus.students[s];
    CHECK(rec.seq.size() >= 30);
    CHECK(rec.seq.size() <= 45);
    double theta = truth.students[s].theta;
    CHECK(truth.students[s].id == rec.id);
    for (const auto& [qid, y] : rec.seq) {
      double p = 1.0 / (1.0 + std::exp(-SyntheticSpec::kSlope *
                                       (theta - diff.at(qid))));
      score.push_back(p);
      label.push_back(y);
    }
  }
  // the generator's own response model should rank outcomes near its
  // simulated ceiling
  double auc = oracle::auc(score, label);
  INFO("generator oracle AUC " << auc);
  CHECK(auc > 0.86);
  CHECK(auc < 0.92);
}

TEST_CASE("planted difficulty is recoverable by a linear fit") {
  const auto& [corpus, truth] = full();
  std::vector<double> a, b, y;
  for (std::size_t i = 0; i < corpus.questions.size(); ++i) {
    a.push_back(truth.questions[i].f0);
    b.push_back(truth.questions[i].f1);
    y.push_back(corpus.questions[i].difficulty);
  }
  CHECK(oracle::linear_fit_mae(a, b, y) < 0.05);
}

TEST_CASE("images carry their cue class") {
  const auto& [corpus, truth] = full();
  struct Img {
    std::size_t pattern;
    const std::vector<double>* px;
  };
  std::vector<Img> imgs;
  for (std::size_t i = 0; i < corpus.questions.size() && imgs.size() < 60; ++i)
    for (const auto& t : corpus.questions[i].tokens)
      if (t.kind == TokenKind::Image) {
        CHECK(t.img_h == 32);
        CHECK(t.img_w == 32);
        for (double v : t.pixels) {
          REQUIRE(v >= 0.0);
          REQUIRE(v <= 1.0);
        }
        imgs.push_back({truth.questions[i].pattern, &t.pixels});
      }
  REQUIRE(imgs.size() == 60);

  double within = 0, between = 0;
  std::size_t nw = 0, nb = 0;
  for (std::size_t i = 0; i < imgs.size(); ++i)
    for (std::size_t j = i + 1; j < imgs.size(); ++j) {
      double d = 0;
      for (std::size_t k = 0; k < imgs[i].px->size(); ++k)
        d += std::fabs((*imgs[i].px)[k] - (*imgs[j].px)[k]);
      d /= static_cast<double>(imgs[i].px->size());
      if (imgs[i].pattern == imgs[j].pattern) {
        within += d;
        ++nw;
      } else {
        between += d;
        ++nb;
      }
    }
  REQUIRE(nw > 0);
  REQUIRE(nb > 0);
  CHECK(within / static_cast<double>(nw) < between / static_cast<double>(nb));
}

TEST_CASE("same seed emits byte-identical files") {
  SyntheticSpec spec;
  spec.questions = 150;
  spec.students = 20;
  spec.img_h = 8;
  spec.img_w = 8;

  TempDir a, r;
  write_synthetic(spec, 7, a.path.string());
  write_synthetic(spec, 7, r.path.string());
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.path)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    fs::path rel = fs::relative(entry.path(), a.path);
    CHECK(read_file(entry.path().string()) ==
          read_file((r.path / rel).string()));
  }
  CHECK(files >= 3);  // corpus, truth, at least one image

  // a different seed diverges
  TempDir d;
  write_synthetic(spec, 8, d.path.string());
  CHECK(read_file(a.file("corpus.jsonl")) != read_file(d.file("corpus.jsonl")));
}

TEST_CASE("emitted files load back through the corpus reader") {
  SyntheticSpec spec;
  spec.questions = 150;
  spec.students = 20;
  spec.img_h = 8;
  spec.img_w = 8;
  TempDir dir;
  write_synthetic(spec, 7, dir.path.string());

  Corpus c = load_corpus(dir.file("corpus.jsonl"));
  CHECK(c.questions.size() == 150);
  CHECK(c.students.size() == 20);

  SyntheticTruth t = load_truth(dir.file("truth.jsonl"));
  REQUIRE(t.questions.size() == 150);
  REQUIRE(t.students.size() == 20);
  for (std::size_t i = 0; i < c.questions.size(); ++i) {
    CHECK(t.questions[i].id == c.questions[i].id);
    CHECK(c.questions[i].difficulty ==
          synthetic_difficulty(t.questions[i].f0, t.questions[i].f1));
  }
}

TEST_CASE("spec validation names the offending field") {
  SyntheticSpec s;
  s.image_ratio = 1.5;
  try {
    s.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("image_ratio") != std::string::npos);
  }

  SyntheticSpec v;
  v.vocab = 300;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  SyntheticSpec k;
  k.k_meta = 40;
  CHECK_THROWS_AS(k.validate(), ConfigError);
  SyntheticSpec f;
  f.min_fillers = 5;
  f.max_fillers = 4;
  CHECK_THROWS_AS(f.validate(), ConfigError);
  SyntheticSpec o;
  o.opt_len_min = 0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  SyntheticSpec q;
  q.questions = 0;
  CHECK_THROWS_AS(q.validate(), ConfigError);
}

TEST_CASE("spec serializes and loads from file") {
  SyntheticSpec s;
  s.questions = 512;
  s.image_ratio = 0.5;
  json j = s.to_json();
  SyntheticSpec back = SyntheticSpec::from_json(j);
  CHECK(back.questions == 512);
  CHECK(back.image_ratio == 0.5);
  CHECK(back.k_meta == s.k_meta);

  TempDir dir;
  {
    std::ofstream out(dir.file("spec.json"));
    out << j.dump(2) << "\n";
  }
  SyntheticSpec loaded = SyntheticSpec::load(dir.file("spec.json"));
  CHECK(loaded.questions == 512);

  {
    std::ofstream out(dir.file("bad.json"));
    out << "{\"vocab\": 300}\n";
  }
  CHECK_THROWS_AS(SyntheticSpec::load(dir.file("bad.json")), ConfigError);
  CHECK_THROWS_AS(SyntheticSpec::load(dir.file("absent.json")), IoError);
}
