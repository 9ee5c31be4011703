#pragma once

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"

namespace quesnet {

using json = nlohmann::ordered_json;

struct ModelConfig {
  std::size_t n_e = 128;   // unified embedding size
  std::size_t d_h = 256;   // LSTM hidden size per direction
  std::size_t layers = 4;  // Bi-LSTM depth
  std::size_t heads = 4;
  std::size_t n_pe = 64;   // positional encoding width
  std::size_t k_meta = 8;  // meta categories
  std::size_t img_h = 32, img_w = 32;
  std::vector<std::size_t> conv_maps = {16, 32, 32, 64};
  std::size_t meta_hidden = 256;
  std::size_t disc_hidden = 256;
  double dropout = 0.2;
};

struct AblationConfig {
  bool enable_text = true;
  bool enable_image = true;
  bool enable_meta = true;
  bool enable_low = true;
  bool enable_high = true;
};

struct W2vConfig {
  std::size_t window = 2;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
};

struct AeConfig {
  std::size_t epochs = 50;
  double lr = 1e-3;
};

struct PretrainConfig {
  double lr = 1e-3;
  std::size_t batch = 16;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  bool sum_positions = false;  // true restores per-question loss sums
  W2vConfig w2v;
  AeConfig ae;
};

struct FinetuneConfig {
  double lr = 1e-3;
  std::size_t batch = 16;
  std::size_t epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  std::size_t hidden = 64;
  bool freeze_backbone = false;
  double threshold = 0.5;
};

struct PathsConfig {
  std::string data_dir;
  std::string out_dir;
};

struct Config {
  ModelConfig model;
  AblationConfig ablation;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  PathsConfig paths;

  json to_json() const {
    json j;
    j["model"] = {{"n_e", model.n_e},
                  {"d_h", model.d_h},
                  {"layers", model.layers},
                  {"heads", model.heads},
                  {"n_pe", model.n_pe},
                  {"k_meta", model.k_meta},
                  {"img_h", model.img_h},
                  {"img_w", model.img_w},
                  {"conv_maps", model.conv_maps},
                  {"meta_hidden", model.meta_hidden},
                  {"disc_hidden", model.disc_hidden},
                  {"dropout", model.dropout}};
    j["ablation"] = {{"enable_text", ablation.enable_text},
                     {"enable_image", ablation.enable_image},
                     {"enable_meta", ablation.enable_meta},
                     {"enable_low", ablation.enable_low},
                     {"enable_high", ablation.enable_high}};
    j["pretrain"] = {{"lr", pretrain.lr},
                     {"batch", pretrain.batch},
                     {"epochs", pretrain.epochs},
                     {"seed", pretrain.seed},
                     {"sum_positions", pretrain.sum_positions},
                     {"w2v",
                      {{"window", pretrain.w2v.window},
                       {"negatives", pretrain.w2v.negatives},
                       {"epochs", pretrain.w2v.epochs},
                       {"lr", pretrain.w2v.lr}}},
                     {"ae",
                      {{"epochs", pretrain.ae.epochs},
                       {"lr", pretrain.ae.lr}}}};
    j["finetune"] = {{"lr", finetune.lr},
                     {"batch", finetune.batch},
                     {"epochs", finetune.epochs},
                     {"patience", finetune.patience},
                     {"seed", finetune.seed},
                     {"hidden", finetune.hidden},
                     {"freeze_backbone", finetune.freeze_backbone},
                     {"threshold", finetune.threshold}};
    j["paths"] = {{"data_dir", paths.data_dir}, {"out_dir", paths.out_dir}};
    return j;
  }

  static Config from_json(const json& j) {
    Config c;
    try {
      auto get = [](const json& obj, const char* key, auto& out) {
        if (obj.contains(key)) out = obj.at(key).template get<std::decay_t<decltype(out)>>();
      };
      if (j.contains("model")) {
        const json& m = j.at("model");
        get(m, "n_e", c.model.n_e);
        get(m, "d_h", c.model.d_h);
        get(m, "layers", c.model.layers);
        get(m, "heads", c.model.heads);
        get(m, "n_pe", c.model.n_pe);
        get(m, "k_meta", c.model.k_meta);
        get(m, "img_h", c.model.img_h);
        get(m, "img_w", c.model.img_w);
        get(m, "conv_maps", c.model.conv_maps);
        get(m, "meta_hidden", c.model.meta_hidden);
        get(m, "disc_hidden", c.model.disc_hidden);
        get(m, "dropout", c.model.dropout);
      }
      if (j.contains("ablation")) {
        const json& a = j.at("ablation");
        get(a, "enable_text", c.ablation.enable_text);
        get(a, "enable_image", c.ablation.enable_image);
        get(a, "enable_meta", c.ablation.enable_meta);
        get(a, "enable_low", c.ablation.enable_low);
        get(a, "enable_high", c.ablation.enable_high);
      }
      if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        get(p, "lr", c.pretrain.lr);
        get(p, "batch", c.pretrain.batch);
        get(p, "epochs", c.pretrain.epochs);
        get(p, "seed", c.pretrain.seed);
        get(p, "sum_positions", c.pretrain.sum_positions);
        if (p.contains("w2v")) {
          const json& w = p.at("w2v");
          get(w, "window", c.pretrain.w2v.window);
          get(w, "negatives", c.pretrain.w2v.negatives);
          get(w, "epochs", c.pretrain.w2v.epochs);
          get(w, "lr", c.pretrain.w2v.lr);
        }
        if (p.contains("ae")) {
          const json& a = p.at("ae");
          get(a, "epochs", c.pretrain.ae.epochs);
          get(a, "lr", c.pretrain.ae.lr);
        }
      }
      if (j.contains("finetune")) {
        const json& f = j.at("finetune");
        get(f, "lr", c.finetune.lr);
        get(f, "batch", c.finetune.batch);
        get(f, "epochs", c.finetune.epochs);
        get(f, "patience", c.finetune.patience);
        get(f, "seed", c.finetune.seed);
        get(f, "hidden", c.finetune.hidden);
        get(f, "freeze_backbone", c.finetune.freeze_backbone);
        get(f, "threshold", c.finetune.threshold);
      }
      if (j.contains("paths")) {
        const json& p = j.at("paths");
        get(p, "data_dir", c.paths.data_dir);
        get(p, "out_dir", c.paths.out_dir);
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config: " + path + ": " + e.what());
    }
    Config c = from_json(j);
    c.validate();
    return c;
  }

  // Dot-path override, e.g. "model.d_h=64". The value is parsed with the
  // type of the field it replaces.
  void set(const std::string& keyval) {
    auto eq = keyval.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must be key=value, got \"" + keyval + "\"");
    std::string key = keyval.substr(0, eq);
    std::string value = keyval.substr(eq + 1);

    json j = to_json();
    json* cur = &j;
    std::size_t pos = 0;
    while (true) {
      auto dot = key.find('.', pos);
      std::string part = key.substr(pos, dot - pos);
      if (!cur->contains(part))
        throw ConfigError("unknown config key \"" + key + "\"");
      cur = &(*cur)[part];
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    try {
      if (cur->is_boolean()) {
        if (value == "true" || value == "1")
          *cur = true;
        else if (value == "false" || value == "0")
          *cur = false;
        else
          throw ConfigError("expected boolean for \"" + key + "\", got \"" +
                            value + "\"");
      } else if (cur->is_number_unsigned() || cur->is_number_integer()) {
        *cur = json::parse(value);
        if (!cur->is_number())
          throw ConfigError("expected number for \"" + key + "\"");
      } else if (cur->is_number_float()) {
        *cur = std::stod(value);
      } else if (cur->is_string()) {
        *cur = value;
      } else if (cur->is_array()) {
        *cur = json::parse(value);
        if (!cur->is_array())
          throw ConfigError("expected array for \"" + key + "\"");
      } else {
        throw ConfigError("key \"" + key + "\" is not settable");
      }
    } catch (const json::exception&) {
      throw ConfigError("cannot parse value \"" + value + "\" for \"" + key +
                        "\"");
    } catch (const std::invalid_argument&) {
      throw ConfigError("cannot parse value \"" + value + "\" for \"" + key +
                        "\"");
    }
    *this = from_json(j);
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0)
        throw ConfigError(std::string("config: ") + name +
                          " must be positive");
    };
    positive(model.n_e, "model.n_e");
    positive(model.d_h, "model.d_h");
    positive(model.layers, "model.layers");
    positive(model.heads, "model.heads");
    positive(model.n_pe, "model.n_pe");
    positive(model.k_meta, "model.k_meta");
    positive(model.img_h, "model.img_h");
    positive(model.img_w, "model.img_w");
    positive(model.meta_hidden, "model.meta_hidden");
    positive(model.disc_hidden, "model.disc_hidden");
    if (model.dropout < 0.0 || model.dropout >= 1.0)
      throw ConfigError("config: model.dropout must lie in [0, 1)");
    if (model.conv_maps.empty())
      throw ConfigError("config: model.conv_maps must not be empty");
    for (auto m : model.conv_maps) positive(m, "model.conv_maps entries");
    std::size_t shrink = std::size_t(1) << model.conv_maps.size();
    if (model.img_h % shrink != 0 || model.img_w % shrink != 0)
      throw ConfigError(
          "config: image dims must be divisible by 2^|conv_maps| = " +
          std::to_string(shrink));
    if ((2 * model.d_h + model.n_pe) % model.heads != 0)
      throw ConfigError(
          "config: model.heads must divide 2*d_h + n_pe = " +
          std::to_string(2 * model.d_h + model.n_pe));
    if (pretrain.lr <= 0.0 || finetune.lr <= 0.0 || pretrain.w2v.lr <= 0.0 ||
        pretrain.ae.lr <= 0.0)
      throw ConfigError("config: learning rates must be positive");
    positive(pretrain.batch, "pretrain.batch");
    positive(finetune.batch, "finetune.batch");
    positive(finetune.patience, "finetune.patience");
    if (finetune.threshold <= 0.0 || finetune.threshold >= 1.0)
      throw ConfigError("config: finetune.threshold must lie in (0, 1)");
  }

  // Effective data directory: explicit setting, else QUESNET_DATA_DIR,
  // else the current directory.
  std::string data_dir() const {
    if (!paths.data_dir.empty()) return paths.data_dir;
    if (const char* env = std::getenv("QUESNET_DATA_DIR")) return env;
    return ".";
  }

  std::string out_dir() const {
    if (!paths.out_dir.empty()) return paths.out_dir;
    return data_dir();
  }
};

}  // namespace quesnet
