#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "config.hpp"
#include "corpus.hpp"

namespace quesnet {

// Synthetic corpus with planted structure:
//   stem = [meta?] f C f C ... f cue [image?]
// The f slots hold filler words f00..f35 with a(f) = f / 6 and b(f) = f % 6.
// Each content word C between two fillers is fully determined by them:
// C = c<i><j> with i = a(left filler), j = b(right filler). The cue word is
// k<n> with n = the last filler's index. Every word is therefore exactly
// determined by its two neighbors except the first filler, whose b part is
// free; a model that reads both directions can drive the word loss to a
// small floor while any one-directional model cannot.
//
// The correct option repeats the stem's cue; wrong options carry a
// different cue. Knowledge labels, the meta category, and the image pattern
// all derive from the cue. Difficulty is a clipped linear function of the
// f00/f01 filler frequencies, and student outcomes follow a one-parameter
// logistic response model over it.
struct SyntheticSpec {
  std::size_t questions = 10000;
  std::size_t students = 500;
  std::size_t vocab = 200;  // fixed by the planted word classes
  std::size_t min_fillers = 4, max_fillers = 7;
  double image_ratio = 0.25;
  double meta_ratio = 0.72;
  double option_ratio = 0.36;
  std::size_t k_meta = 8;
  std::size_t img_h = 32, img_w = 32;
  std::size_t n_options = 4;
  std::size_t opt_len_min = 3, opt_len_max = 5;

  // Fixed planted constants (documented, not configurable).
  static constexpr std::size_t kFillers = 36;
  static constexpr std::size_t kCues = 36;
  static constexpr std::size_t kOptionWords = 90;
  static constexpr std::size_t kKnowledgeLabels = 16;
  static constexpr double kFillerSkew = 0.18;  // each of f00, f01
  static constexpr double kDiffBase = 0.2;
  static constexpr double kDiffC0 = 1.6;
  static constexpr double kDiffC1 = 0.4;
  static constexpr double kSlope = 6.0;
  static constexpr std::size_t kStudentLenMin = 30;
  static constexpr std::size_t kStudentLenMax = 45;

  void validate() const {
    auto ratio = [](double v, const char* name) {
      if (v < 0.0 || v > 1.0)
        throw ConfigError(std::string("synthetic: ") + name +
                          " must lie in [0,1], got " + std::to_string(v));
    };
    ratio(image_ratio, "image_ratio");
    ratio(meta_ratio, "meta_ratio");
    ratio(option_ratio, "option_ratio");
    if (questions == 0) throw ConfigError("synthetic: questions must be > 0");
    if (vocab != 200)
      throw ConfigError(
          "synthetic: vocab is fixed at 200 by the planted word classes");
    if (min_fillers < 2 || max_fillers < min_fillers)
      throw ConfigError("synthetic: filler range invalid (need 2 <= min <= max)");
    if (k_meta == 0 || k_meta > kCues)
      throw ConfigError("synthetic: k_meta must lie in [1, 36]");
    if (img_h == 0 || img_w == 0)
      throw ConfigError("synthetic: image dims must be positive");
    if (n_options < 2)
      throw ConfigError("synthetic: n_options must be >= 2");
    if (opt_len_min == 0 || opt_len_max < opt_len_min)
      throw ConfigError("synthetic: option length range invalid");
  }

  json to_json() const {
    json j;
    j["questions"] = questions;
    j["students"] = students;
    j["vocab"] = vocab;
    j["min_fillers"] = min_fillers;
    j["max_fillers"] = max_fillers;
    j["image_ratio"] = image_ratio;
    j["meta_ratio"] = meta_ratio;
    j["option_ratio"] = option_ratio;
    j["k_meta"] = k_meta;
    j["img_h"] = img_h;
    j["img_w"] = img_w;
    j["n_options"] = n_options;
    j["opt_len_min"] = opt_len_min;
    j["opt_len_max"] = opt_len_max;
    return j;
  }

  static SyntheticSpec from_json(const json& j) {
    SyntheticSpec s;
    auto get = [&](const char* key, auto& out) {
      if (j.contains(key))
        out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    get("questions", s.questions);
    get("students", s.students);
    get("vocab", s.vocab);
    get("min_fillers", s.min_fillers);
    get("max_fillers", s.max_fillers);
    get("image_ratio", s.image_ratio);
    get("meta_ratio", s.meta_ratio);
    get("option_ratio", s.option_ratio);
    get("k_meta", s.k_meta);
    get("img_h", s.img_h);
    get("img_w", s.img_w);
    get("n_options", s.n_options);
    get("opt_len_min", s.opt_len_min);
    get("opt_len_max", s.opt_len_max);
    return s;
  }

  static SyntheticSpec load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("synthetic: cannot open spec " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("synthetic: " + path + ": " + e.what());
    }
    SyntheticSpec s = from_json(j);
    s.validate();
    return s;
  }
};

// Per-record ground truth the generator knows; consumed only by tests.
struct SyntheticTruth {
  struct Q {
    std::string id;
    std::size_t cue = 0;
    bool has_image = false;
    std::size_t pattern = 0;
    double f0 = 0.0, f1 = 0.0;  // f00 / f01 filler frequencies
  };
  struct S {
    std::string id;
    double theta = 0.0;
  };
  std::vector<Q> questions;
  std::vector<S> students;
};

namespace synth_detail {

inline std::string filler_word(std::size_t f) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "f%02zu", f);
  return buf;
}
inline std::string content_word(std::size_t i, std::size_t j) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "c%zu%zu", i, j);
  return buf;
}
inline std::string cue_word(std::size_t k) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "k%02zu", k);
  return buf;
}
inline std::string option_word(std::size_t o) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "o%02zu", o);
  return buf;
}

// Skewed filler draw: f00 and f01 each with probability 0.18, remainder
// uniform over the other 34. Consumes one uniform, then possibly one
// randint.
inline std::size_t draw_filler(Rng& rng) {
  double u = rng.uniform();
  if (u < SyntheticSpec::kFillerSkew) return 0;
  if (u < 2.0 * SyntheticSpec::kFillerSkew) return 1;
  return 2 + rng.randint(SyntheticSpec::kFillers - 2);
}

// Smooth striped pattern for cue class p, jittered per pixel.
inline std::vector<double> draw_image(std::size_t p, std::size_t h,
                                      std::size_t w, Rng& rng) {
  double theta = M_PI * static_cast<double>(p) / 8.0;
  double waves = 1.0 + static_cast<double>(p % 3);
  double phase = 0.7 * static_cast<double>(p);
  std::vector<double> px(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double proj = static_cast<double>(x) * std::cos(theta) +
                    static_cast<double>(y) * std::sin(theta);
      double base = 0.5 + 0.42 * std::sin(2.0 * M_PI * waves * proj /
                                              static_cast<double>(w) +
                                          phase);
      double v = base + 0.1 * (rng.uniform() - 0.5);
      px[y * w + x] = std::min(1.0, std::max(0.0, v));
    }
  return px;
}

}  // namespace synth_detail

inline double synthetic_difficulty(double f0, double f1) {
  double d = SyntheticSpec::kDiffBase + SyntheticSpec::kDiffC0 * f0 -
             SyntheticSpec::kDiffC1 * f1;
  return std::min(1.0, std::max(0.0, d));
}

inline std::vector<int> synthetic_knowledge(std::size_t cue) {
  return {static_cast<int>(cue % 8),
          static_cast<int>(8 + (5 * cue + 1) % 8)};
}

// Deterministic generation; the draw order below is part of the format
// contract (per question: meta?, image?, options?, filler count, fillers,
// image pixels, option draws; then all students).
inline std::pair<Corpus, SyntheticTruth> generate_synthetic(
    const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Corpus corpus;
  SyntheticTruth truth;

  for (std::size_t qi = 0; qi < spec.questions; ++qi) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "q%06zu", qi);
    Question q;
    q.id = idbuf;

    bool has_meta = rng.bernoulli(spec.meta_ratio);
    bool has_image = rng.bernoulli(spec.image_ratio);
    bool has_options = rng.bernoulli(spec.option_ratio);
    std::size_t m =
        spec.min_fillers + rng.randint(spec.max_fillers - spec.min_fillers + 1);

    std::vector<std::size_t> fillers(m);
    for (auto& f : fillers) f = synth_detail::draw_filler(rng);
    std::size_t cue = fillers[m - 1];

    if (has_meta) q.tokens.push_back(Token::make_meta(cue % spec.k_meta));
    for (std::size_t i = 0; i < m; ++i) {
      q.tokens.push_back(
          Token::make_word(synth_detail::filler_word(fillers[i])));
      if (i + 1 < m)
        q.tokens.push_back(Token::make_word(synth_detail::content_word(
            fillers[i] / 6, fillers[i + 1] % 6)));
    }
    q.tokens.push_back(Token::make_word(synth_detail::cue_word(cue)));

    std::size_t pattern = cue % 8;
    if (has_image) {
      auto px =
          synth_detail::draw_image(pattern, spec.img_h, spec.img_w, rng);
      q.tokens.push_back(Token::make_image(
          std::string("images/") + idbuf + ".txt", spec.img_h, spec.img_w,
          std::move(px)));
    }

    if (has_options) {
      std::size_t correct_idx = rng.randint(spec.n_options);
      for (std::size_t k = 0; k < spec.n_options; ++k) {
        Option opt;
        opt.correct = (k == correct_idx);
        std::size_t len = spec.opt_len_min +
                          rng.randint(spec.opt_len_max - spec.opt_len_min + 1);
        for (std::size_t wi = 0; wi < len; ++wi)
          opt.tokens.push_back(Token::make_word(synth_detail::option_word(
              rng.randint(SyntheticSpec::kOptionWords))));
        std::size_t opt_cue;
        if (opt.correct) {
          opt_cue = cue;
        } else {
          std::size_t w = rng.randint(SyntheticSpec::kCues - 1);
          opt_cue = (w >= cue) ? w + 1 : w;
        }
        std::size_t pos = rng.randint(len + 1);
        opt.tokens.insert(
            opt.tokens.begin() + static_cast<std::ptrdiff_t>(pos),
            Token::make_word(synth_detail::cue_word(opt_cue)));
        q.options.push_back(std::move(opt));
      }
    }

    double f0 = 0.0, f1 = 0.0;
    for (auto f : fillers) {
      if (f == 0) f0 += 1.0;
      if (f == 1) f1 += 1.0;
    }
    f0 /= static_cast<double>(m);
    f1 /= static_cast<double>(m);
    q.has_difficulty = true;
    q.difficulty = synthetic_difficulty(f0, f1);
    q.has_knowledge = true;
    q.knowledge = synthetic_knowledge(cue);

    truth.questions.push_back({q.id, cue, has_image, pattern, f0, f1});
    corpus.questions.push_back(std::move(q));
  }

  for (std::size_t si = 0; si < spec.students; ++si) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "s%04zu", si);
    StudentRecord s;
    s.id = idbuf;
    double theta = 0.05 + 0.9 * rng.uniform();
    std::size_t len =
        SyntheticSpec::kStudentLenMin +
        rng.randint(SyntheticSpec::kStudentLenMax -
                    SyntheticSpec::kStudentLenMin + 1);
    for (std::size_t t = 0; t < len; ++t) {
      std::size_t qi = rng.randint(spec.questions);
      double p =
          1.0 / (1.0 + std::exp(-SyntheticSpec::kSlope *
                                (theta - corpus.questions[qi].difficulty)));
      int y = rng.bernoulli(p) ? 1 : 0;
      s.seq.emplace_back(corpus.questions[qi].id, y);
    }
    truth.students.push_back({s.id, theta});
    corpus.students.push_back(std::move(s));
  }
  return {std::move(corpus), std::move(truth)};
}

// Writes corpus.jsonl + images/ + truth.jsonl under out_dir. The truth
// file carries generator-only diagnostics for tests; nothing in training
// reads it.
inline void write_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                            const std::string& out_dir) {
  auto [corpus, truth] = generate_synthetic(spec, seed);
  std::filesystem::create_directories(out_dir);
  save_corpus(corpus, out_dir + "/corpus.jsonl");
  std::ofstream tf(out_dir + "/truth.jsonl");
  if (!tf) throw IoError("synthetic: cannot write " + out_dir + "/truth.jsonl");
  json header;
  header["slope"] = SyntheticSpec::kSlope;
  header["diff_base"] = SyntheticSpec::kDiffBase;
  header["diff_c0"] = SyntheticSpec::kDiffC0;
  header["diff_c1"] = SyntheticSpec::kDiffC1;
  tf << header.dump() << "\n";
  for (const auto& q : truth.questions) {
    json j;
    j["id"] = q.id;
    j["cue"] = q.cue;
    if (q.has_image) j["pattern"] = q.pattern;
    j["f0"] = q.f0;
    j["f1"] = q.f1;
    tf << j.dump() << "\n";
  }
  for (const auto& s : truth.students) {
    json j;
    j["id"] = s.id;
    j["theta"] = s.theta;
    tf << j.dump() << "\n";
  }
}

// Reads a truth.jsonl written by write_synthetic (test support).
inline SyntheticTruth load_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("synthetic: cannot open " + path);
  SyntheticTruth truth;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (first) {
      first = false;
      continue;  // constants header
    }
    if (j.contains("theta")) {
      truth.students.push_back(
          {j.at("id").get<std::string>(), j.at("theta").get<double>()});
    } else {
      SyntheticTruth::Q q;
      q.id = j.at("id").get<std::string>();
      q.cue = j.at("cue").get<std::size_t>();
      q.has_image = j.contains("pattern");
      if (q.has_image) q.pattern = j.at("pattern").get<std::size_t>();
      q.f0 = j.at("f0").get<double>();
      q.f1 = j.at("f1").get<double>();
      truth.questions.push_back(std::move(q));
    }
  }
  return truth;
}

}  // namespace quesnet
