#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "quesnet/checkpoint.hpp"
#include "quesnet/config.hpp"
#include "quesnet/corpus.hpp"
#include "quesnet/embedding.hpp"
#include "quesnet/finetune.hpp"
#include "quesnet/model.hpp"
#include "quesnet/pretrain.hpp"
#include "quesnet/synthetic.hpp"
#include "quesnet/word2vec.hpp"

namespace fs = std::filesystem;
using namespace quesnet;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kMissingArtifact = 3;
constexpr int kNumericalError = 4;

// Raised when a pipeline stage's input file is absent; carries exit code 3.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path))
    throw MissingArtifact("missing " + path + " (" + hint + ")");
}

// Options shared by the pipeline commands.
struct Common {
  std::string config_path;
  std::optional<std::int64_t> seed;
  std::vector<std::string> sets;
  std::optional<bool> en_text, en_image, en_meta, en_low, en_high, freeze;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Config file (JSON)");
  cmd->add_option("--seed", c.seed, "Seed override for this stage");
  cmd->add_option("--set", c.sets, "Config override key=value (repeatable)")
      ->expected(1)
      ->allow_extra_args(false);
  cmd->add_option("--enable-text", c.en_text, "Toggle word input");
  cmd->add_option("--enable-image", c.en_image, "Toggle image input");
  cmd->add_option("--enable-meta", c.en_meta, "Toggle meta input");
  cmd->add_option("--enable-low", c.en_low, "Toggle the low-level objective");
  cmd->add_option("--enable-high", c.en_high, "Toggle the high-level objective");
  cmd->add_option("--freeze-backbone", c.freeze,
                  "Train only the task head during fine-tuning");
}

Config effective_config(const Common& c) {
  Config cfg = c.config_path.empty() ? Config{} : Config::load(c.config_path);
  for (const std::string& kv : c.sets) cfg.set(kv);
  if (c.en_text) cfg.ablation.enable_text = *c.en_text;
  if (c.en_image) cfg.ablation.enable_image = *c.en_image;
  if (c.en_meta) cfg.ablation.enable_meta = *c.en_meta;
  if (c.en_low) cfg.ablation.enable_low = *c.en_low;
  if (c.en_high) cfg.ablation.enable_high = *c.en_high;
  if (c.freeze) cfg.finetune.freeze_backbone = *c.freeze;
  if (c.seed) {
    cfg.pretrain.seed = std::uint64_t(*c.seed);
    cfg.finetune.seed = std::uint64_t(*c.seed);
  }
  cfg.validate();
  return cfg;
}

void apply_ablation_flags(const Common& c, AblationConfig& ab) {
  if (c.en_text) ab.enable_text = *c.en_text;
  if (c.en_image) ab.enable_image = *c.en_image;
  if (c.en_meta) ab.enable_meta = *c.en_meta;
  if (c.en_low) ab.enable_low = *c.en_low;
  if (c.en_high) ab.enable_high = *c.en_high;
}

SyntheticSpec spec_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open spec file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("spec file " + path + ": " + e.what());
  }
  SyntheticSpec s;
  try {
    auto get = [&](const char* key, auto& out) {
      if (j.contains(key))
        out = j.at(key).template get<std::decay_t<decltype(out)>>();
    };
    get("questions", s.questions);
    get("students", s.students);
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
  } catch (const json::exception& e) {
    throw ConfigError("spec file " + path + ": " + e.what());
  }
  return s;
}

Corpus load_indexed_corpus(const std::string& path, const Vocabulary& vocab) {
  Corpus corpus = load_corpus(path);
  index_corpus(corpus, vocab);
  return corpus;
}

int cmd_gen_corpus(const std::string& spec_path, const std::string& out_dir,
                   std::uint64_t seed) {
  SyntheticSpec spec =
      spec_path.empty() ? SyntheticSpec{} : spec_from_file(spec_path);
  spec.validate();
  write_synthetic(spec, seed, out_dir);
  std::printf("wrote %s/corpus.jsonl (%zu questions, %zu students, seed %llu)\n",
              out_dir.c_str(), spec.questions, spec.students,
              (unsigned long long)seed);
  return kOk;
}

int cmd_pretrain_emb(const Config& cfg) {
  std::string corpus_path = cfg.data_dir() + "/corpus.jsonl";
  require_file(corpus_path, "run gen-corpus first");
  Corpus corpus = load_corpus(corpus_path);
  Vocabulary vocab = build_vocabulary(corpus);
  index_corpus(corpus, vocab);

  // The final map mirrors the model's embedding layout so its names line
  // up at install time; each coder trains in its own registry because the
  // autoencoder drivers optimize everything they are handed.
  Rng rng(cfg.pretrain.seed);
  ParamMap emb_ps;
  EmbeddingLayer emb(emb_ps, cfg.model, vocab.size(), rng);

  if (cfg.ablation.enable_image) {
    std::vector<ImageData> images;
    for (const Question& q : corpus.questions)
      for (const Token& t : q.tokens)
        if (t.kind == TokenKind::Image)
          images.push_back({t.img_h, t.img_w, t.pixels});
    if (images.empty()) {
      std::fprintf(stderr, "note: no images in corpus, skipping image coder\n");
    } else {
      ParamMap img_ps;
      Rng img_rng(cfg.pretrain.seed);
      ImageCoder coder(img_ps, cfg.model, img_rng);
      AeCurve curve = pretrain_autoencoder_images(coder, img_ps, images,
                                                  cfg.pretrain.ae,
                                                  cfg.pretrain.seed);
      emb_ps.copy_values_from(img_ps);
      std::printf("image coder: mse %.6f -> %.6f (best epoch %zu)\n",
                  curve.initial, curve.best_loss, curve.best_epoch);
    }
  }
  if (cfg.ablation.enable_meta) {
    std::vector<std::size_t> cats;
    for (const Question& q : corpus.questions)
      for (const Token& t : q.tokens)
        if (t.kind == TokenKind::Meta) cats.push_back(t.meta_index);
    if (cats.empty()) {
      std::fprintf(stderr, "note: no meta tokens in corpus, skipping meta coder\n");
    } else {
      ParamMap meta_ps;
      Rng meta_rng(cfg.pretrain.seed);
      MetaCoder coder(meta_ps, cfg.model, meta_rng);
      AeCurve curve = pretrain_autoencoder_meta(coder, meta_ps, cats,
                                                cfg.pretrain.ae,
                                                cfg.pretrain.seed);
      emb_ps.copy_values_from(meta_ps);
      std::printf("meta coder: ce %.6f -> %.6f (accuracy %.3f)\n",
                  curve.initial, curve.best_loss,
                  meta_reconstruction_accuracy(coder, cats));
    }
  }
  if (cfg.ablation.enable_text) {
    Tensor table = pretrain_word2vec(corpus, vocab, cfg.model.n_e,
                                     cfg.pretrain.w2v, cfg.pretrain.seed);
    emb_ps.at("emb.word").data() = table.data();
    std::printf("word table: %zu x %zu from skip-gram\n", vocab.size(),
                cfg.model.n_e);
  }

  fs::create_directories(cfg.out_dir());
  std::string out = cfg.out_dir() + "/emb.qnckpt";
  save_checkpoint(out, cfg, vocab, emb_ps, rng.state());
  std::printf("wrote %s\n", out.c_str());
  return kOk;
}

int cmd_pretrain(const Config& cfg, bool no_emb_pretrain) {
  std::string corpus_path = cfg.data_dir() + "/corpus.jsonl";
  require_file(corpus_path, "run gen-corpus first");

  Vocabulary vocab({"<unk>", "<pad>"});
  std::optional<LoadedCheckpoint> emb_ck;
  if (no_emb_pretrain) {
    Corpus scan = load_corpus(corpus_path);
    vocab = build_vocabulary(scan);
  } else {
    std::string emb_path = cfg.out_dir() + "/emb.qnckpt";
    require_file(emb_path, "run pretrain-emb first or pass --no-emb-pretrain");
    emb_ck = load_checkpoint(emb_path);
    vocab = emb_ck->vocab;
  }

  Corpus corpus = load_indexed_corpus(corpus_path, vocab);
  QuesNetModel m(cfg.model, cfg.ablation, vocab.size(), cfg.pretrain.seed);
  if (emb_ck) emb_ck->install(m.params());

  PretrainResult res =
      pretrain_run(m, corpus.questions, cfg, vocab, cfg.out_dir());
  std::string final_path = cfg.out_dir() + "/pretrain.qnckpt";
  fs::copy_file(res.checkpoints.back(), final_path,
                fs::copy_options::overwrite_existing);
  std::printf("pretrain: %zu steps, last l_low %.6f l_high %.6f\n", res.steps,
              res.last.l_low, res.last.l_high);
  std::printf("wrote %s\n", final_path.c_str());
  return kOk;
}

int cmd_finetune(const Config& cfg, const Common& common,
                 const std::string& task_str, std::string ckpt_path) {
  Task task = task_from_name(task_str);
  std::string corpus_path = cfg.data_dir() + "/corpus.jsonl";
  require_file(corpus_path, "run gen-corpus first");
  if (ckpt_path.empty()) ckpt_path = cfg.out_dir() + "/pretrain.qnckpt";
  require_file(ckpt_path, "run pretrain first or pass --checkpoint");

  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  Corpus corpus = load_indexed_corpus(corpus_path, ck.vocab);

  // Backbone dims come from the checkpoint; ablation follows it too unless
  // the flags say otherwise.
  AblationConfig ab = ck.config.ablation;
  apply_ablation_flags(common, ab);
  QuesNetModel m(ck.config.model, ab, ck.vocab.size(), cfg.finetune.seed);
  ck.install(m.params());

  FinetuneOutcome out =
      task == Task::Knowledge  ? finetune_knowledge(m, corpus, cfg.finetune)
      : task == Task::Difficulty ? finetune_difficulty(m, corpus, cfg.finetune)
                                 : finetune_score(m, corpus, cfg.finetune);

  Config snapshot = cfg;
  snapshot.model = ck.config.model;
  snapshot.ablation = ab;
  snapshot.finetune.threshold = out.threshold;
  fs::create_directories(cfg.out_dir());
  std::string tuned = cfg.out_dir() + "/" + task_str + ".qnckpt";
  save_checkpoint(tuned, snapshot, ck.vocab, m.params(),
                  Rng(cfg.finetune.seed).state());
  std::string report_path = cfg.out_dir() + "/" + task_str + "_report.txt";
  out.report.save(report_path);

  std::printf("%s", out.report.to_text().c_str());
  std::printf("best epoch %zu of %zu (valid %.6f)\n", out.best_epoch,
              out.epochs_run, out.best_valid);
  std::printf("wrote %s and %s\n", tuned.c_str(), report_path.c_str());
  return kOk;
}

int cmd_eval(const Config& cfg, const std::string& task_str,
             std::string ckpt_path) {
  Task task = task_from_name(task_str);
  std::string corpus_path = cfg.data_dir() + "/corpus.jsonl";
  require_file(corpus_path, "run gen-corpus first");
  if (ckpt_path.empty()) ckpt_path = cfg.out_dir() + "/" + task_str + ".qnckpt";
  require_file(ckpt_path, "run finetune first or pass --checkpoint");

  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  Corpus corpus = load_indexed_corpus(corpus_path, ck.vocab);
  MetricReport report = eval_task(task, corpus, ckpt_path);

  fs::create_directories(cfg.out_dir());
  std::string report_path = cfg.out_dir() + "/" + task_str + "_eval.txt";
  report.save(report_path);
  std::printf("%s", report.to_text().c_str());
  std::printf("wrote %s\n", report_path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QuesNet pipeline: corpus generation, two-stage pre-training, "
               "fine-tuning, and evaluation"};
  app.require_subcommand(1);

  std::string gen_spec, gen_out;
  std::uint64_t gen_seed = 1;
  CLI::App* gen = app.add_subcommand("gen-corpus", "Write a synthetic corpus");
  gen->add_option("--spec", gen_spec, "Generator spec file (JSON)");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--seed", gen_seed, "Generator seed");

  Common emb_c, pre_c, ft_c, ev_c;
  CLI::App* emb = app.add_subcommand(
      "pretrain-emb", "Train the word/image/meta embedding stage");
  add_common(emb, emb_c);

  bool no_emb = false;
  CLI::App* pre = app.add_subcommand(
      "pretrain", "Run hierarchical pre-training over the corpus");
  add_common(pre, pre_c);
  pre->add_flag("--no-emb-pretrain", no_emb,
                "Start from random embeddings instead of emb.qnckpt");

  std::string ft_task, ft_ckpt;
  CLI::App* ft = app.add_subcommand("finetune", "Fine-tune a task head");
  add_common(ft, ft_c);
  ft->add_option("--task", ft_task, "knowledge, difficulty, or score")
      ->required();
  ft->add_option("--checkpoint", ft_ckpt, "Backbone checkpoint to start from");

  std::string ev_task, ev_ckpt;
  CLI::App* ev = app.add_subcommand("eval", "Re-score a fine-tuned checkpoint");
  add_common(ev, ev_c);
  ev->add_option("--task", ev_task, "knowledge, difficulty, or score")
      ->required();
  ev->add_option("--checkpoint", ev_ckpt, "Fine-tuned checkpoint to evaluate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      std::string out = gen_out;
      if (out.empty()) {
        Config defaults;
        out = defaults.data_dir();
      }
      return cmd_gen_corpus(gen_spec, out, gen_seed);
    }
    if (emb->parsed()) return cmd_pretrain_emb(effective_config(emb_c));
    if (pre->parsed()) return cmd_pretrain(effective_config(pre_c), no_emb);
    if (ft->parsed())
      return cmd_finetune(effective_config(ft_c), ft_c, ft_task, ft_ckpt);
    if (ev->parsed()) return cmd_eval(effective_config(ev_c), ev_task, ev_ckpt);
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMissingArtifact;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericalError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kOk;
}
