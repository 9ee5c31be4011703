#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "quesnet/embedding.hpp"
#include "quesnet/gradcheck.hpp"
#include "quesnet/synthetic.hpp"
#include "quesnet/word2vec.hpp"

using namespace quesnet;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_e = 8;
  cfg.img_h = 8;
  cfg.img_w = 8;
  cfg.conv_maps = {2, 3};
  cfg.k_meta = 5;
  cfg.meta_hidden = 6;
  return cfg;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b,
              std::size_t off_a, std::size_t off_b, std::size_t d) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += a[off_a + i] * b[off_b + i];
    na += a[off_a + i] * a[off_a + i];
    nb += b[off_b + i] * b[off_b + i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("every token kind embeds to the shared width") {
  ModelConfig cfg = tiny_config();
  ParamMap ps;
  Rng rng(3);
  EmbeddingLayer emb(ps, cfg, 12, rng);

  Token w = Token::make_word("x");
  w.word_id = 4;
  CHECK(emb.embed(w).shape() == Shape{8});

  Token img = Token::make_image("p", 8, 8, std::vector<double>(64, 0.5));
  CHECK(emb.embed(img).shape() == Shape{8});

  Token meta = Token::make_meta(2);
  CHECK(emb.embed(meta).shape() == Shape{8});

  // the conv encoder is size-agnostic thanks to the global pool
  Token big = Token::make_image("p", 16, 16, std::vector<double>(256, 0.25));
  CHECK(emb.embed(big).shape() == Shape{8});
}

TEST_CASE("embedding is deterministic per token content") {
  ModelConfig cfg = tiny_config();
  ParamMap ps;
  Rng rng(3);
  EmbeddingLayer emb(ps, cfg, 12, rng);

  Token w1 = Token::make_word("x");
  w1.word_id = 7;
  Token w2 = Token::make_word("x");
  w2.word_id = 7;
  CHECK(emb.embed(w1).data() == emb.embed(w2).data());

  Token z1 = Token::make_image("a", 8, 8, std::vector<double>(64, 0.0));
  Token z2 = Token::make_image("b", 8, 8, std::vector<double>(64, 0.0));
  CHECK(emb.embed(z1).data() == emb.embed(z2).data());
}

TEST_CASE("embedding rejects invalid tokens") {
  ModelConfig cfg = tiny_config();
  ParamMap ps;
  Rng rng(3);
  EmbeddingLayer emb(ps, cfg, 12, rng);

  Token unindexed = Token::make_word("x");
  CHECK_THROWS_AS(emb.embed(unindexed), UsageError);

  Token oob = Token::make_word("x");
  oob.word_id = 12;
  CHECK_THROWS_AS(emb.embed(oob), IndexError);

  CHECK_THROWS_AS(emb.embed(Token::make_meta(5)), IndexError);

  Token bad = Token::make_image("p", 8, 8, std::vector<double>(63, 0.5));
  CHECK_THROWS_AS(emb.embed(bad), UsageError);
}

TEST_CASE("image and meta coder gradients match finite differences") {
  ModelConfig cfg = tiny_config();
  cfg.n_e = 4;
  cfg.k_meta = 4;
  cfg.meta_hidden = 5;
  ParamMap ps;
  Rng rng(11);
  ImageCoder img(ps, cfg, rng);
  MetaCoder meta(ps, cfg, rng);

  std::vector<double> px(64);
  Rng data_rng(5);
  for (double& p : px) p = data_rng.uniform();
  Tensor x = Tensor::from({1, 8, 8}, px);

  auto loss = [&]() {
    Tensor rec = mse(img.decode(img.encode(x)), x);
    Tensor ce = cross_entropy(meta.decode(meta.encode(2)), 2);
    return add(rec, ce);
  };
  auto result = grad_check(loss, ps);
  INFO("worst " << result.worst << " rel " << result.max_rel_err);
  CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("word2vec brings co-occurring words together") {
  // aa and bb share the context xx; cc lives in a disjoint context
  Corpus corpus;
  for (int i = 0; i < 40; ++i) {
    Question q;
    q.id = "p" + std::to_string(i);
    q.tokens = {Token::make_word("aa"), Token::make_word("xx"),
                Token::make_word("bb")};
    corpus.questions.push_back(q);
    Question r;
    r.id = "r" + std::to_string(i);
    r.tokens = {Token::make_word("cc"), Token::make_word("yy"),
                Token::make_word("dd")};
    corpus.questions.push_back(r);
  }
  Vocabulary vocab = build_vocabulary(corpus);
  W2vConfig cfg;
  cfg.epochs = 40;
  cfg.negatives = 3;

  Tensor table = pretrain_word2vec(corpus, vocab, 8, cfg, 9);
  REQUIRE(table.shape() == Shape{vocab.size(), 8});

  auto id = [&](const char* w) {
    return static_cast<std::size_t>(vocab.lookup(w)) * 8;
  };
  const auto& d = table.data();
  double ab = cosine(d, d, id("aa"), id("bb"), 8);
  double ac = cosine(d, d, id("aa"), id("cc"), 8);
  INFO("cos(a,b) " << ab << " cos(a,c) " << ac);
  CHECK(ab > ac);

  // deterministic per seed
  Tensor again = pretrain_word2vec(corpus, vocab, 8, cfg, 9);
  CHECK(again.data() == table.data());
  Tensor other = pretrain_word2vec(corpus, vocab, 8, cfg, 10);
  CHECK(other.data() != table.data());

  // PAD row stays zero
  auto pad = static_cast<std::size_t>(Vocabulary::kPad) * 8;
  for (std::size_t i = 0; i < 8; ++i) CHECK(d[pad + i] == 0.0);
}

TEST_CASE("word2vec windows do not cross non-word tokens") {
  Corpus corpus;
  Question q;
  q.id = "q";
  q.tokens = {Token::make_word("aa"), Token::make_word("bb"),
              Token::make_image("p", 1, 1, {0.5}), Token::make_word("cc"),
              Token::make_word("dd")};
  Option o;
  o.tokens = {Token::make_word("ee"), Token::make_word("ff")};
  o.correct = true;
  q.options.push_back(o);
  corpus.questions.push_back(q);

  Vocabulary vocab = build_vocabulary(corpus);
  auto segs = w2v_detail::segments(corpus, vocab);
  REQUIRE(segs.size() == 3);
  CHECK(segs[0].size() == 2);
  CHECK(segs[1].size() == 2);
  CHECK(segs[2].size() == 2);
  CHECK(segs[0][0] == vocab.lookup("aa"));
  CHECK(segs[1][0] == vocab.lookup("cc"));
  CHECK(segs[2][0] == vocab.lookup("ee"));

  Corpus empty;
  Question only_img;
  only_img.id = "i";
  only_img.tokens = {Token::make_image("p", 1, 1, {0.5})};
  empty.questions.push_back(only_img);
  Vocabulary ev;
  CHECK_THROWS_AS(pretrain_word2vec(empty, ev, 4, W2vConfig{}, 1),
                  UsageError);
}

TEST_CASE("image autoencoder memorizes a single constant image") {
  ModelConfig cfg = tiny_config();
  ParamMap ps;
  Rng rng(21);
  ImageCoder coder(ps, cfg, rng);

  std::vector<ImageData> imgs{{8, 8, std::vector<double>(64, 0.37)}};
  AeConfig ae;
  ae.epochs = 300;
  ae.lr = 3e-3;
  AeCurve curve = pretrain_autoencoder_images(coder, ps, imgs, ae, 4);
  INFO("initial " << curve.initial << " best " << curve.best_loss);
  CHECK(curve.best_loss < 1e-3);
  for (double l : curve.epochs) CHECK(l >= 0.0);
}

TEST_CASE("image autoencoder compresses the synthetic patterns") {
  ModelConfig cfg = tiny_config();
  cfg.conv_maps = {4, 8};
  ParamMap ps;
  Rng rng(22);
  ImageCoder coder(ps, cfg, rng);

  std::vector<ImageData> imgs;
  Rng img_rng(77);
  for (std::size_t i = 0; i < 60; ++i)
    imgs.push_back({8, 8, synth_detail::draw_image(i % 8, 8, 8, img_rng)});

  AeConfig ae;
  ae.epochs = 30;
  ae.lr = 3e-3;
  AeCurve curve = pretrain_autoencoder_images(coder, ps, imgs, ae, 4);
  INFO("initial " << curve.initial << " best " << curve.best_loss);
  CHECK(curve.best_loss < 0.1 * curve.initial);

  // best-so-far parameters are the installed ones
  NoGradGuard g;
  double sum = 0.0;
  for (const auto& img : imgs) {
    Tensor x = Tensor::from({1, 8, 8}, img.pixels);
    sum += mse(coder.decode(coder.encode(x)), x).item();
  }
  CHECK(sum / 60.0 == Catch::Approx(curve.best_loss).epsilon(1e-12));
}

TEST_CASE("image autoencoder validates inputs and learning progress") {
  ModelConfig cfg = tiny_config();
  ParamMap ps;
  Rng rng(23);
  ImageCoder coder(ps, cfg, rng);

  CHECK_THROWS_AS(
      pretrain_autoencoder_images(coder, ps, {}, AeConfig{}, 1), UsageError);

  std::vector<ImageData> wrong{{4, 4, std::vector<double>(16, 0.5)}};
  CHECK_THROWS_AS(pretrain_autoencoder_images(coder, ps, wrong, AeConfig{}, 1),
                  UsageError);

  // a zero learning rate cannot decrease the loss and must abort loudly
  std::vector<ImageData> one{{8, 8, std::vector<double>(64, 0.4)}};
  AeConfig stuck;
  stuck.epochs = 6;
  stuck.lr = 0.0;
  CHECK_THROWS_AS(pretrain_autoencoder_images(coder, ps, one, stuck, 1),
                  NumericalError);
}

TEST_CASE("meta autoencoder reaches perfect held-in reconstruction") {
  ModelConfig cfg = tiny_config();
  cfg.k_meta = 10;
  cfg.meta_hidden = 16;
  ParamMap ps;
  Rng rng(31);
  MetaCoder coder(ps, cfg, rng);

  std::vector<std::size_t> cats;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 10; ++c) cats.push_back(c);

  AeConfig ae;
  ae.epochs = 80;
  ae.lr = 1e-2;
  AeCurve curve = pretrain_autoencoder_meta(coder, ps, cats, ae, 4);

  // Xavier logits start near uniform
  CHECK(std::fabs(curve.initial - std::log(10.0)) < 0.5);
  for (double l : curve.epochs) CHECK(l >= 0.0);
  CHECK(meta_reconstruction_accuracy(coder, cats) == 1.0);
}
