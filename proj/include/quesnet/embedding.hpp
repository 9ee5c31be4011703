#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "config.hpp"
#include "corpus.hpp"
#include "optim.hpp"
#include "ops.hpp"
#include "params.hpp"

namespace quesnet {

constexpr double kLeak = 0.01;

// Strided conv stack halving the spatial dims per layer, global max-pool,
// and a linear projection to the shared embedding width; the decoder
// mirrors it with transposed convolutions and a logistic output so
// reconstructions stay in the pixel range. The encoder accepts any image
// whose dims survive the stride chain; the decoder always emits the
// configured dims.
class ImageCoder {
 public:
  ImageCoder(ParamMap& ps, const ModelConfig& cfg, Rng& rng) {
    maps_.push_back(1);
    for (std::size_t m : cfg.conv_maps) maps_.push_back(m);
    out_h_ = cfg.img_h >> cfg.conv_maps.size();
    out_w_ = cfg.img_w >> cfg.conv_maps.size();

    auto kernel = [&](const std::string& name, std::size_t d0, std::size_t d1,
                      std::size_t ic, std::size_t oc) {
      Tensor k = Tensor::zeros({d0, d1, kK, kK}, true);
      xavier_fill(k, ic * kK * kK, oc * kK * kK, rng);
      return ps.add(name, k);
    };
    for (std::size_t l = 0; l + 1 < maps_.size(); ++l) {
      std::string base = "img.enc" + std::to_string(l);
      std::size_t ic = maps_[l], oc = maps_[l + 1];
      ek_.push_back(kernel(base + ".k", oc, ic, ic, oc));  // [oc, ic, k, k]
      eb_.push_back(ps.add(base + ".b", Tensor::zeros({oc}, true)));
    }
    Tensor pw = Tensor::zeros({cfg.n_e, maps_.back()}, true);
    xavier_fill(pw, maps_.back(), cfg.n_e, rng);
    pw_ = ps.add("img.proj.w", pw);
    pb_ = ps.add("img.proj.b", Tensor::zeros({cfg.n_e}, true));

    std::size_t flat = maps_.back() * out_h_ * out_w_;
    Tensor dw = Tensor::zeros({flat, cfg.n_e}, true);
    xavier_fill(dw, cfg.n_e, flat, rng);
    dw_ = ps.add("img.dec_in.w", dw);
    db_ = ps.add("img.dec_in.b", Tensor::zeros({flat}, true));
    for (std::size_t l = maps_.size() - 1; l > 0; --l) {
      std::string base = "img.dec" + std::to_string(maps_.size() - 1 - l);
      std::size_t ic = maps_[l], oc = maps_[l - 1];
      dk_.push_back(kernel(base + ".k", ic, oc, ic, oc));  // [ic, oc, k, k]
      db2_.push_back(ps.add(base + ".b", Tensor::zeros({oc}, true)));
    }
  }

  // [1, h, w] -> [n_e]
  Tensor encode(const Tensor& image) const {
    Tensor h = image;
    for (std::size_t l = 0; l < ek_.size(); ++l)
      h = leaky_relu(conv2d(h, ek_[l], eb_[l], kStride, kPad), kLeak);
    return affine(pw_, global_max_pool(h), pb_);
  }

  // [n_e] -> [1, configured h, configured w], values in (0, 1)
  Tensor decode(const Tensor& code) const {
    Tensor h = leaky_relu(affine(dw_, code, db_), kLeak);
    h = reshape(h, {maps_.back(), out_h_, out_w_});
    for (std::size_t l = 0; l < dk_.size(); ++l) {
      h = transposed_conv2d(h, dk_[l], db2_[l], kStride, kPad);
      h = (l + 1 < dk_.size()) ? leaky_relu(h, kLeak) : sigmoid(h);
    }
    return h;
  }

  std::size_t img_h() const { return out_h_ << (maps_.size() - 1); }
  std::size_t img_w() const { return out_w_ << (maps_.size() - 1); }

  static Tensor image_tensor(const Token& t) {
    if (t.pixels.size() != t.img_h * t.img_w)
      throw UsageError("image token pixel count does not match dims");
    Tensor x = Tensor::from({1, t.img_h, t.img_w}, t.pixels);
    return x;
  }

 private:
  static constexpr std::size_t kK = 4, kStride = 2, kPad = 1;
  std::vector<std::size_t> maps_;
  std::size_t out_h_ = 0, out_w_ = 0;
  std::vector<Tensor> ek_, eb_, dk_, db2_;
  Tensor pw_, pb_, dw_, db_;
};

// Two fully-connected layers from the one-hot category to the embedding,
// mirrored back to category logits.
class MetaCoder {
 public:
  MetaCoder(ParamMap& ps, const ModelConfig& cfg, Rng& rng) : k_(cfg.k_meta) {
    auto fc = [&](const std::string& name, std::size_t out, std::size_t in) {
      Tensor w = Tensor::zeros({out, in}, true);
      xavier_fill(w, in, out, rng);
      ps.add(name + ".w", w);
      ps.add(name + ".b", Tensor::zeros({out}, true));
      return std::pair{ps.at(name + ".w"), ps.at(name + ".b")};
    };
    std::tie(e0w_, e0b_) = fc("meta.enc0", cfg.meta_hidden, cfg.k_meta);
    std::tie(e1w_, e1b_) = fc("meta.enc1", cfg.n_e, cfg.meta_hidden);
    std::tie(d0w_, d0b_) = fc("meta.dec0", cfg.meta_hidden, cfg.n_e);
    std::tie(d1w_, d1b_) = fc("meta.dec1", cfg.k_meta, cfg.meta_hidden);
  }

  Tensor encode(std::size_t category) const {
    if (category >= k_)
      throw IndexError("meta category " + std::to_string(category) +
                       " out of " + std::to_string(k_));
    std::vector<double> onehot(k_, 0.0);
    onehot[category] = 1.0;
    Tensor x = Tensor::from({k_}, onehot);
    return affine(e1w_, leaky_relu(affine(e0w_, x, e0b_), kLeak), e1b_);
  }

  // [n_e] -> category logits [K]
  Tensor decode(const Tensor& code) const {
    return affine(d1w_, leaky_relu(affine(d0w_, code, d0b_), kLeak), d1b_);
  }

  std::size_t categories() const { return k_; }

 private:
  std::size_t k_;
  Tensor e0w_, e0b_, e1w_, e1b_, d0w_, d0b_, d1w_, d1b_;
};

// Dispatches any token kind to a vector of the shared embedding width.
class EmbeddingLayer {
 public:
  EmbeddingLayer(ParamMap& ps, const ModelConfig& cfg, std::size_t vocab_size,
                 Rng& rng)
      : image_(ps, cfg, rng), meta_(ps, cfg, rng) {
    Tensor t = Tensor::zeros({vocab_size, cfg.n_e}, true);
    xavier_fill(t, vocab_size, cfg.n_e, rng);
    table_ = ps.add("emb.word", t);
  }

  Tensor embed(const Token& t) const {
    switch (t.kind) {
      case TokenKind::Word:
        if (t.word_id < 0)
          throw UsageError("embed: word token not indexed (run index_corpus)");
        return embedding_row(table_, static_cast<std::size_t>(t.word_id));
      case TokenKind::Image:
        return image_.encode(ImageCoder::image_tensor(t));
      case TokenKind::Meta:
        return meta_.encode(t.meta_index);
    }
    throw UsageError("embed: unknown token kind");
  }

  Tensor word_table() const { return table_; }
  const ImageCoder& image() const { return image_; }
  const MetaCoder& meta() const { return meta_; }

 private:
  ImageCoder image_;
  MetaCoder meta_;
  Tensor table_;
};

// ---- embedding pre-training ----

struct AeCurve {
  double initial = 0.0;           // mean loss before any update
  std::vector<double> epochs;     // mean loss after each epoch
  std::size_t best_epoch = 0;     // 1-based; 0 means the initial state
  double best_loss = 0.0;
};

namespace detail {

// Shared epoch driver: per-sample Adam steps, end-of-epoch evaluation,
// best-so-far restoration, and the early-learning sanity guard.
template <typename StepLoss, typename EvalLoss>
AeCurve autoencoder_loop(ParamMap& ps, std::size_t n, std::size_t epochs,
                         double lr, std::uint64_t seed, StepLoss step_loss,
                         EvalLoss eval_loss, const char* what) {
  Adam adam(ps, lr);
  Rng rng(seed);
  AeCurve curve;
  curve.initial = eval_loss();
  curve.best_loss = curve.initial;
  auto best = ps.snapshot();

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      ps.zero_grad();
      Tensor loss = step_loss(i);
      loss.backward();
      adam.step();
    }
    double l = eval_loss();
    curve.epochs.push_back(l);
    if (l < curve.best_loss) {
      curve.best_loss = l;
      curve.best_epoch = e + 1;
      best = ps.snapshot();
    }
  }
  ps.restore(best);

  // A healthy run must improve monotonically out of the gate.
  std::size_t guard = std::min<std::size_t>(5, curve.epochs.size());
  double prev = curve.initial;
  for (std::size_t e = 0; e < guard; ++e) {
    if (!(curve.epochs[e] < prev)) {
      std::string msg = std::string(what) + " loss not decreasing:";
      msg += " init " + std::to_string(curve.initial);
      for (double v : curve.epochs) msg += " " + std::to_string(v);
      throw NumericalError(msg);
    }
    prev = curve.epochs[e];
  }
  return curve;
}

}  // namespace detail

// Minimizes pixel MSE of decode(encode(x)); ps must hold exactly the
// coder's parameters. Returns the loss curve with best-epoch parameters
// left installed.
inline AeCurve pretrain_autoencoder_images(ImageCoder& coder, ParamMap& ps,
                                           const std::vector<ImageData>& images,
                                           const AeConfig& cfg,
                                           std::uint64_t seed) {
  if (images.empty())
    throw UsageError("image autoencoder: no images to train on");
  std::vector<Tensor> inputs;
  for (const auto& img : images) {
    if (img.h != coder.img_h() || img.w != coder.img_w())
      throw UsageError("image autoencoder: image " + std::to_string(img.w) +
                       "x" + std::to_string(img.h) + " does not match coder " +
                       std::to_string(coder.img_w()) + "x" +
                       std::to_string(coder.img_h()));
    inputs.push_back(Tensor::from({1, img.h, img.w}, img.pixels));
  }
  auto recon = [&](std::size_t i) {
    return mse(coder.decode(coder.encode(inputs[i])), inputs[i]);
  };
  auto eval = [&]() {
    NoGradGuard g;
    double sum = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) sum += recon(i).item();
    return sum / static_cast<double>(inputs.size());
  };
  return detail::autoencoder_loop(ps, inputs.size(), cfg.epochs, cfg.lr, seed,
                                  recon, eval, "image autoencoder");
}

// Categorical reconstruction: cross-entropy of decoder logits against the
// encoded category.
inline AeCurve pretrain_autoencoder_meta(MetaCoder& coder, ParamMap& ps,
                                         const std::vector<std::size_t>& cats,
                                         const AeConfig& cfg,
                                         std::uint64_t seed) {
  if (cats.empty())
    throw UsageError("meta autoencoder: no categories to train on");
  auto recon = [&](std::size_t i) {
    return cross_entropy(coder.decode(coder.encode(cats[i])), cats[i]);
  };
  auto eval = [&]() {
    NoGradGuard g;
    double sum = 0.0;
    for (std::size_t i = 0; i < cats.size(); ++i) sum += recon(i).item();
    return sum / static_cast<double>(cats.size());
  };
  return detail::autoencoder_loop(ps, cats.size(), cfg.epochs, cfg.lr, seed,
                                  recon, eval, "meta autoencoder");
}

inline double meta_reconstruction_accuracy(const MetaCoder& coder,
                                           const std::vector<std::size_t>& cats) {
  NoGradGuard g;
  std::size_t hits = 0;
  for (std::size_t c : cats) {
    Tensor logits = coder.decode(coder.encode(c));
    std::size_t arg = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits.data()[i] > logits.data()[arg]) arg = i;
    if (arg == c) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(cats.size());
}

}  // namespace quesnet
