#pragma once

// key=value run configuration: one entry per line, '#' starts a comment.
// Layering is defaults < file < command-line flags.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spreadout/encoder.hpp"
#include "spreadout/error.hpp"
#include "spreadout/losses.hpp"
#include "spreadout/trainer.hpp"

namespace spreadout {

struct ConfigKey {
  const char* name;
  const char* default_value;  // nullptr: required
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"dataset", nullptr, "training dataset file"},
      {"checkpoint", "encoder.soen", "output checkpoint file"},
      {"csv", "epochs.csv", "output per-epoch CSV"},
      {"loss", "triplet", "contrastive | triplet | triplet_swap | n_pair"},
      {"margin", "0.5", "triplet margin"},
      {"eps_plus", "0.7", "contrastive margin for matching pairs"},
      {"eps_minus", "1.4", "contrastive margin for non-matching pairs"},
      {"gor_replaces_negative", "true", "contrastive + alpha > 0: drop the non-matching hinge"},
      {"alpha", "1", "regularizer weight"},
      {"lr0", "0.1", "initial learning rate"},
      {"momentum", "0.9", "SGD momentum"},
      {"decay", "0.96", "per-epoch learning-rate factor"},
      {"epochs", "20", "number of epochs"},
      {"batch_size", "128", "triplets / pairs per step"},
      {"samples_per_epoch", "50000", "triplets / pairs drawn per epoch"},
      {"seed", "1", "initialization and sampling seed"},
      {"hidden_dims", "128", "comma-separated hidden layer widths (may be empty)"},
      {"output_dim", "64", "descriptor dimension d"},
  };
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys())
      if (k.default_value) values_[k.name] = k.default_value;
  }

  static bool is_known(const std::string& key) {
    for (const auto& k : config_keys())
      if (key == k.name) return true;
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!is_known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Parses key=value lines and applies them on top of the current values.
  void merge_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string stripped = trim(line);
      if (stripped.empty()) continue;
      const auto eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      const std::string key = trim(stripped.substr(0, eq));
      if (!is_known(key))
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
      values_[key] = trim(stripped.substr(eq + 1));
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path);
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }

  void require_complete() const {
    for (const auto& k : config_keys()) get(k.name);
  }

  double get_real(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    return x;
  }

  std::uint64_t get_uint(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
      x = v.empty() || v[0] == '-' ? 0 : std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty())
      throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
    return x;
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
  }

  TrainConfig train_config() const {
    TrainConfig cfg;
    cfg.loss = parse_loss_kind(get("loss"));
    cfg.loss_params.margin = get_real("margin");
    cfg.loss_params.eps_plus = get_real("eps_plus");
    cfg.loss_params.eps_minus = get_real("eps_minus");
    cfg.loss_params.gor_replaces_negative = get_bool("gor_replaces_negative");
    cfg.alpha = get_real("alpha");
    cfg.lr0 = get_real("lr0");
    cfg.momentum = get_real("momentum");
    cfg.decay = get_real("decay");
    cfg.epochs = get_uint("epochs");
    cfg.batch_size = get_uint("batch_size");
    cfg.samples_per_epoch = get_uint("samples_per_epoch");
    cfg.seed = get_uint("seed");
    if (cfg.loss == LossKind::contrastive && !(cfg.loss_params.gor_replaces_negative && cfg.alpha > 0.0) &&
        cfg.loss_params.eps_minus < cfg.loss_params.eps_plus)
      throw ConfigError("eps_minus must be >= eps_plus");
    cfg.validate();
    return cfg;
  }

  EncoderSpec encoder_spec(std::size_t input_dim) const {
    EncoderSpec spec;
    spec.input_dim = input_dim;
    spec.hidden_dims.clear();
    for (const std::string& tok : split_list(get("hidden_dims"))) {
      RunConfig tmp;
      tmp.values_["hidden_dims"] = tok;
      spec.hidden_dims.push_back(tmp.get_uint("hidden_dims"));
    }
    spec.output_dim = get_uint("output_dim");
    spec.validate();
    return spec;
  }

  static LossKind parse_loss_kind(const std::string& s) {
    if (s == "contrastive") return LossKind::contrastive;
    if (s == "triplet") return LossKind::triplet;
    if (s == "triplet_swap" || s == "triplet+swap") return LossKind::triplet_swap;
    if (s == "n_pair" || s == "n-pair") return LossKind::n_pair;
    throw ConfigError("unknown loss '" + s + "' (expected contrastive | triplet | triplet_swap | n_pair)");
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
      cur = trim(cur);
      if (!cur.empty()) out.push_back(cur);
    }
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace spreadout
