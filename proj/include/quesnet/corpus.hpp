#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "rng.hpp"

namespace quesnet {

enum class TokenKind { Word, Image, Meta };

struct Token {
  TokenKind kind = TokenKind::Word;
  // Word
  std::string word;
  int word_id = -1;  // set by index_corpus; -1 until then
  // Image
  std::string img_path;  // as written in the corpus file
  std::size_t img_h = 0, img_w = 0;
  std::vector<double> pixels;  // row-major, values in [0,1]
  // Meta
  std::size_t meta_index = 0;

  static Token make_word(std::string w) {
    Token t;
    t.kind = TokenKind::Word;
    t.word = std::move(w);
    return t;
  }
  static Token make_image(std::string path, std::size_t h, std::size_t w,
                          std::vector<double> px) {
    Token t;
    t.kind = TokenKind::Image;
    t.img_path = std::move(path);
    t.img_h = h;
    t.img_w = w;
    t.pixels = std::move(px);
    return t;
  }
  static Token make_meta(std::size_t index) {
    Token t;
    t.kind = TokenKind::Meta;
    t.meta_index = index;
    return t;
  }
};

struct Option {
  std::vector<Token> tokens;  // word tokens only
  bool correct = false;
};

struct Question {
  std::string id;
  std::vector<Token> tokens;
  std::vector<Option> options;
  std::vector<int> knowledge;
  bool has_knowledge = false;
  double difficulty = 0.0;
  bool has_difficulty = false;

  bool has_meta() const {
    return !tokens.empty() && tokens.front().kind == TokenKind::Meta;
  }
};

struct StudentRecord {
  std::string id;
  std::vector<std::pair<std::string, int>> seq;  // (question_id, correct)
};

struct Corpus {
  std::vector<Question> questions;
  std::vector<StudentRecord> students;
};

// ---- image side files ----

struct ImageData {
  std::size_t h = 0, w = 0;
  std::vector<double> pixels;
};

inline ImageData load_image(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("image: cannot open " + path);
  ImageData img;
  std::size_t w = 0, h = 0;
  if (!(in >> w >> h) || w == 0 || h == 0)
    throw ParseError("image " + path + ": first line must be \"W H\"");
  img.w = w;
  img.h = h;
  img.pixels.resize(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    if (!(in >> img.pixels[i]))
      throw ParseError("image " + path + ": expected " +
                       std::to_string(w * h) + " values");
    if (img.pixels[i] < 0.0 || img.pixels[i] > 1.0)
      throw ParseError("image " + path + ": value " +
                       std::to_string(img.pixels[i]) + " outside [0,1]");
  }
  return img;
}

inline void save_image(const std::string& path, std::size_t h, std::size_t w,
                       const std::vector<double>& pixels) {
  std::filesystem::create_directories(
      std::filesystem::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("image: cannot write " + path);
  out << w << " " << h << "\n";
  char buf[32];
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      std::snprintf(buf, sizeof buf, "%.6f", pixels[r * w + c]);
      out << buf << (c + 1 == w ? "" : " ");
    }
    out << "\n";
  }
}

// ---- corpus file ----

namespace detail {

inline ParseError parse_err(const std::string& path, std::size_t line,
                            const std::string& msg) {
  return ParseError(path + ":" + std::to_string(line) + ": " + msg);
}

inline std::vector<Token> parse_option_tokens(const nlohmann::ordered_json& j,
                                              const std::string& path,
                                              std::size_t line) {
  std::vector<Token> out;
  for (const auto& t : j) {
    if (!t.is_object() || !t.contains("w") || !t.at("w").is_string())
      throw parse_err(path, line, "option tokens must be {\"w\": word}");
    out.push_back(Token::make_word(t.at("w").get<std::string>()));
  }
  if (out.empty()) throw parse_err(path, line, "option has no tokens");
  return out;
}

}  // namespace detail

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("corpus: cannot open " + path);
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw detail::parse_err(path, lineno, e.what());
    }
    if (!j.is_object() || !j.contains("id"))
      throw detail::parse_err(path, lineno, "record must have \"id\"");

    if (j.contains("seq")) {
      StudentRecord s;
      s.id = j.at("id").get<std::string>();
      for (const auto& step : j.at("seq")) {
        if (!step.is_array() || step.size() != 2)
          throw detail::parse_err(path, lineno,
                                  "seq entries must be [question_id, 0|1]");
        int correct = step.at(1).get<int>();
        if (correct != 0 && correct != 1)
          throw detail::parse_err(path, lineno,
                                  "seq: correctness must be 0 or 1");
        s.seq.emplace_back(step.at(0).get<std::string>(), correct);
      }
      if (s.seq.size() < 2)
        throw detail::parse_err(path, lineno,
                                "seq: student needs at least 2 interactions");
      corpus.students.push_back(std::move(s));
      continue;
    }

    if (!j.contains("tokens"))
      throw detail::parse_err(path, lineno, "question must have \"tokens\"");
    Question q;
    q.id = j.at("id").get<std::string>();
    std::size_t pos = 0;
    std::size_t non_meta = 0;
    for (const auto& t : j.at("tokens")) {
      if (!t.is_object() || t.size() != 1)
        throw detail::parse_err(
            path, lineno, "tokens must be one-key objects (w/img/meta)");
      if (t.contains("w")) {
        q.tokens.push_back(Token::make_word(t.at("w").get<std::string>()));
        ++non_meta;
      } else if (t.contains("img")) {
        std::string rel = t.at("img").get<std::string>();
        ImageData img = load_image((base / rel).string());
        q.tokens.push_back(
            Token::make_image(rel, img.h, img.w, std::move(img.pixels)));
        ++non_meta;
      } else if (t.contains("meta")) {
        const auto& m = t.at("meta");
        std::size_t idx = 0;
        if (m.is_number_unsigned() || m.is_number_integer()) {
          long long v = m.get<long long>();
          if (v < 0)
            throw detail::parse_err(path, lineno, "meta index negative");
          idx = static_cast<std::size_t>(v);
        } else if (m.is_array()) {
          // one-hot form: exactly one entry equal to 1, rest 0
          std::size_t ones = 0;
          for (std::size_t i = 0; i < m.size(); ++i) {
            double v = m.at(i).get<double>();
            if (v == 1.0) {
              idx = i;
              ++ones;
            } else if (v != 0.0) {
              throw detail::parse_err(path, lineno,
                                      "meta vector entries must be 0 or 1");
            }
          }
          if (ones != 1)
            throw detail::parse_err(path, lineno,
                                    "meta vector must sum to exactly 1");
        } else {
          throw detail::parse_err(path, lineno,
                                  "meta must be an index or one-hot vector");
        }
        if (pos != 0)
          throw detail::parse_err(path, lineno,
                                  "meta allowed only at position 0");
        q.tokens.push_back(Token::make_meta(idx));
      } else {
        throw detail::parse_err(path, lineno,
                                "token key must be w, img, or meta");
      }
      ++pos;
    }
    if (non_meta < 1)
      throw detail::parse_err(path, lineno,
                              "question needs at least one non-meta token");

    if (j.contains("options")) {
      bool any_correct = false;
      for (const auto& o : j.at("options")) {
        Option opt;
        if (!o.contains("tokens") || !o.contains("correct"))
          throw detail::parse_err(path, lineno,
                                  "options need tokens and correct");
        opt.tokens = detail::parse_option_tokens(o.at("tokens"), path, lineno);
        opt.correct = o.at("correct").get<bool>();
        any_correct = any_correct || opt.correct;
        q.options.push_back(std::move(opt));
      }
      if (!q.options.empty() && !any_correct)
        throw detail::parse_err(path, lineno,
                                "options: no option marked correct");
    }
    if (j.contains("knowledge")) {
      q.has_knowledge = true;
      for (const auto& k : j.at("knowledge"))
        q.knowledge.push_back(k.get<int>());
    }
    if (j.contains("difficulty")) {
      q.has_difficulty = true;
      q.difficulty = j.at("difficulty").get<double>();
      if (q.difficulty < 0.0 || q.difficulty > 1.0)
        throw detail::parse_err(path, lineno,
                                "difficulty outside [0,1]");
    }
    corpus.questions.push_back(std::move(q));
  }

  // Student interactions must refer to loaded questions.
  std::unordered_set<std::string> ids;
  for (const auto& q : corpus.questions) ids.insert(q.id);
  for (const auto& s : corpus.students)
    for (const auto& [qid, correct] : s.seq)
      if (!ids.count(qid))
        throw ParseError("corpus: student " + s.id +
                         " references unknown question " + qid);
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  if (!base.empty()) std::filesystem::create_directories(base);
  std::ofstream out(path);
  if (!out) throw IoError("corpus: cannot write " + path);
  for (const auto& q : corpus.questions) {
    nlohmann::ordered_json j;
    j["id"] = q.id;
    auto& toks = j["tokens"] = nlohmann::ordered_json::array();
    for (const auto& t : q.tokens) {
      switch (t.kind) {
        case TokenKind::Word:
          toks.push_back({{"w", t.word}});
          break;
        case TokenKind::Image:
          toks.push_back({{"img", t.img_path}});
          save_image((base / t.img_path).string(), t.img_h, t.img_w,
                     t.pixels);
          break;
        case TokenKind::Meta:
          toks.push_back({{"meta", t.meta_index}});
          break;
      }
    }
    if (!q.options.empty()) {
      auto& opts = j["options"] = nlohmann::ordered_json::array();
      for (const auto& o : q.options) {
        nlohmann::ordered_json oj;
        auto& ot = oj["tokens"] = nlohmann::ordered_json::array();
        for (const auto& t : o.tokens) ot.push_back({{"w", t.word}});
        oj["correct"] = o.correct;
        opts.push_back(std::move(oj));
      }
    }
    if (q.has_knowledge) j["knowledge"] = q.knowledge;
    if (q.has_difficulty) j["difficulty"] = q.difficulty;
    out << j.dump() << "\n";
  }
  for (const auto& s : corpus.students) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    auto& seq = j["seq"] = nlohmann::ordered_json::array();
    for (const auto& [qid, correct] : s.seq)
      seq.push_back(nlohmann::ordered_json::array({qid, correct}));
    out << j.dump() << "\n";
  }
}

// ---- vocabulary ----

class Vocabulary {
 public:
  static constexpr int kUnknown = 0;
  static constexpr int kPad = 1;

  Vocabulary() {
    words_ = {"<unk>", "<pad>"};
    rebuild_index();
  }

  explicit Vocabulary(std::vector<std::string> words)
      : words_(std::move(words)) {
    if (words_.size() < 2 || words_[0] != "<unk>" || words_[1] != "<pad>")
      throw UsageError("vocabulary: first entries must be <unk>, <pad>");
    rebuild_index();
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t i) const { return words_.at(i); }
  const std::vector<std::string>& words() const { return words_; }

  int lookup(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnknown : it->second;
  }

  void add(const std::string& w) {
    if (index_.count(w)) throw UsageError("vocabulary: duplicate word " + w);
    index_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i)
      index_[words_[i]] = static_cast<int>(i);
  }
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Frequency-descending, then lexicographic. Counts cover question tokens
// and option tokens (the option encoder shares the word table).
inline Vocabulary build_vocabulary(const Corpus& corpus,
                                   std::size_t min_count = 1) {
  if (corpus.questions.empty())
    throw UsageError("build_vocabulary: empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& q : corpus.questions) {
    for (const auto& t : q.tokens)
      if (t.kind == TokenKind::Word) ++counts[t.word];
    for (const auto& o : q.options)
      for (const auto& t : o.tokens) ++counts[t.word];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(),
                                                           counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [w, c] : entries)
    if (c >= min_count) v.add(w);
  return v;
}

// Stamps word_id on every word token; unseen words map to UNKNOWN.
inline void index_corpus(Corpus& corpus, const Vocabulary& vocab) {
  for (auto& q : corpus.questions) {
    for (auto& t : q.tokens)
      if (t.kind == TokenKind::Word) t.word_id = vocab.lookup(t.word);
    for (auto& o : q.options)
      for (auto& t : o.tokens) t.word_id = vocab.lookup(t.word);
  }
}

// ---- batching ----

struct Batch {
  std::vector<std::size_t> question_idx;   // into corpus.questions
  std::size_t width = 0;                   // max token count in the batch
  std::vector<std::vector<int>> masks;     // per question: 1 real, 0 pad
};

// Deterministic shuffled batches. Questions are padded (via the mask) to
// the longest sequence in their batch; a trailing short batch is kept.
inline std::vector<Batch> batch_iter(const Corpus& corpus,
                                     std::size_t batch_size,
                                     std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw UsageError("batch_iter: batch_size must be >= 1");
  std::vector<std::size_t> order(corpus.questions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(shuffle_seed);
  rng.shuffle(order);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    std::size_t end = std::min(start + batch_size, order.size());
    for (std::size_t i = start; i < end; ++i) {
      b.question_idx.push_back(order[i]);
      b.width = std::max(b.width, corpus.questions[order[i]].tokens.size());
    }
    for (std::size_t qi : b.question_idx) {
      std::size_t len = corpus.questions[qi].tokens.size();
      std::vector<int> m(b.width, 0);
      std::fill(m.begin(), m.begin() + len, 1);
      b.masks.push_back(std::move(m));
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace quesnet
