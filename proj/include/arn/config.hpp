#pragma once

// Flat "key = value" run configuration. Keys are the field names of the
// configuration records; unknown or repeated keys are errors.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "arn/core.hpp"
#include "arn/data.hpp"
#include "arn/evaluator.hpp"

namespace arn {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossWeights weights;
  SynthConfig synth;
  /// When set, data comes from an exported directory tree instead of the generator.
  std::string data_dir;
  Protocol protocol = Protocol::CrossCamera;
  /// Unset means "the number of distinct source identities".
  bool num_classes_explicit = false;
  /// Unset means "same as seed".
  std::optional<std::uint64_t> data_seed;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : v) {
    if (ch == ',' || ch == 'x' || ch == 'X' || ch == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline Shape3 to_shape(const std::string& key, const std::string& v) {
  const auto parts = split_list(v);
  if (parts.size() != 3) throw ConfigError(key + ": expected HxWxC, got '" + v + "'");
  return {static_cast<int>(to_int(key, parts[0])), static_cast<int>(to_int(key, parts[1])),
          static_cast<int>(to_int(key, parts[2]))};
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    // Model
    t["image_shape"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.model.image_shape = to_shape(k, v);
      c.synth.image_shape = c.model.image_shape;
    };
    t["feature_map_shape"] = [](RunConfig& c, const auto& k, const auto& v) { c.model.feature_map_shape = to_shape(k, v); };
    t["latent_dim"] = [](RunConfig& c, const auto& k, const auto& v) { c.model.latent_dim = static_cast<int>(to_int(k, v)); };
    t["num_classes"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.model.num_classes = static_cast<int>(to_int(k, v));
      c.num_classes_explicit = true;
    };
    t["encoder_channels"] = [](RunConfig& c, const auto& k, const auto& v) {
      const auto parts = split_list(v);
      if (parts.size() != 3) throw ConfigError(k + ": expected three integers");
      for (std::size_t i = 0; i < 3; ++i) c.model.encoder_channels[i] = static_cast<int>(to_int(k, parts[i]));
    };
    t["dropout_rate"] = [](RunConfig& c, const auto& k, const auto& v) { c.model.dropout_rate = to_double(k, v); };
    t["private_init_from_shared"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.model.private_init_from_shared = to_bool(k, v);
    };
    // Training
    t["epochs"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.epochs = static_cast<int>(to_int(k, v)); };
    t["batch_size"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.batch_size = static_cast<int>(to_int(k, v)); };
    t["identities_per_batch"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.train.identities_per_batch = static_cast<int>(to_int(k, v));
    };
    t["images_per_identity"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.train.images_per_identity = static_cast<int>(to_int(k, v));
    };
    t["lr_backbone"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.lr_backbone = to_double(k, v); };
    t["lr_encoders"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.lr_encoders = to_double(k, v); };
    t["lr_classifier"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.lr_classifier = to_double(k, v); };
    t["momentum"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.momentum = to_double(k, v); };
    t["backbone_warmup_epochs"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.train.backbone_warmup_epochs = static_cast<int>(to_int(k, v));
    };
    t["backbone_train_after_warmup"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.train.backbone_train_after_warmup = to_bool(k, v);
    };
    t["seed"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.train.seed = static_cast<std::uint64_t>(to_int(k, v));
      c.synth.seed = c.data_seed.value_or(c.train.seed);
    };
    t["use_class"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.ablation.use_class = to_bool(k, v); };
    t["use_ctrs"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.ablation.use_ctrs = to_bool(k, v); };
    t["use_private"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.ablation.use_private = to_bool(k, v); };
    t["use_rec"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.ablation.use_rec = to_bool(k, v); };
    t["use_diff"] = [](RunConfig& c, const auto& k, const auto& v) { c.train.ablation.use_diff = to_bool(k, v); };
    // Loss weights
    t["alpha"] = [](RunConfig& c, const auto& k, const auto& v) { c.weights.alpha = to_double(k, v); };
    t["beta"] = [](RunConfig& c, const auto& k, const auto& v) { c.weights.beta = to_double(k, v); };
    t["gamma"] = [](RunConfig& c, const auto& k, const auto& v) { c.weights.gamma = to_double(k, v); };
    t["margin"] = [](RunConfig& c, const auto& k, const auto& v) { c.weights.margin = to_double(k, v); };
    t["normalize_diff"] = [](RunConfig& c, const auto& k, const auto& v) { c.weights.normalize_diff = to_bool(k, v); };
    t["diff_form"] = [](RunConfig& c, const auto& k, const auto& v) {
      if (v == "sample_pairs") c.weights.diff_form = DiffForm::SamplePairs;
      else if (v == "feature_cross") c.weights.diff_form = DiffForm::FeatureCross;
      else throw ConfigError(k + ": expected sample_pairs or feature_cross, got '" + v + "'");
    };
    // Synthetic data
    t["num_source_ids"] = [](RunConfig& c, const auto& k, const auto& v) { c.synth.num_source_ids = static_cast<int>(to_int(k, v)); };
    t["num_target_ids"] = [](RunConfig& c, const auto& k, const auto& v) { c.synth.num_target_ids = static_cast<int>(to_int(k, v)); };
    t["images_per_id"] = [](RunConfig& c, const auto& k, const auto& v) { c.synth.images_per_id = static_cast<int>(to_int(k, v)); };
    t["style_strength"] = [](RunConfig& c, const auto& k, const auto& v) { c.synth.style_strength = to_double(k, v); };
    t["noise_std"] = [](RunConfig& c, const auto& k, const auto& v) { c.synth.noise_std = to_double(k, v); };
    t["data_seed"] = [](RunConfig& c, const auto& k, const auto& v) {
      c.data_seed = static_cast<std::uint64_t>(to_int(k, v));
      c.synth.seed = *c.data_seed;
    };
    // Data source and evaluation
    t["data_dir"] = [](RunConfig& c, const auto&, const auto& v) { c.data_dir = v; };
    t["protocol"] = [](RunConfig& c, const auto&, const auto& v) { c.protocol = parse_protocol(v); };
    return t;
  }();
  return table;
}

}  // namespace config_detail

/// Parses configuration text. Lines are "key = value"; '#' starts a comment.
inline RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  cfg.model.num_classes = cfg.synth.num_source_ids;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  const auto& table = config_detail::setters();
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = config_detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(t).substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "' (line " + std::to_string(lineno) + ")");
    if (seen[key]++) throw ConfigError("duplicate configuration key '" + key + "'");
    it->second(cfg, key, value);
  }
  if (!cfg.num_classes_explicit) cfg.model.num_classes = cfg.synth.num_source_ids;
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

/// Canonical text form; parse_run_config(to_text(c)) reproduces c.
inline std::string to_text(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  auto shape = [](Shape3 s) { return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c); };
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "image_shape = " << shape(c.model.image_shape) << "\n"
    << "feature_map_shape = " << shape(c.model.feature_map_shape) << "\n"
    << "latent_dim = " << c.model.latent_dim << "\n"
    << "num_classes = " << c.model.num_classes << "\n"
    << "encoder_channels = " << c.model.encoder_channels[0] << "," << c.model.encoder_channels[1] << ","
    << c.model.encoder_channels[2] << "\n"
    << "dropout_rate = " << c.model.dropout_rate << "\n"
    << "private_init_from_shared = " << b(c.model.private_init_from_shared) << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "batch_size = " << c.train.batch_size << "\n"
    << "identities_per_batch = " << c.train.identities_per_batch << "\n"
    << "images_per_identity = " << c.train.images_per_identity << "\n"
    << "lr_backbone = " << c.train.lr_backbone << "\n"
    << "lr_encoders = " << c.train.lr_encoders << "\n"
    << "lr_classifier = " << c.train.lr_classifier << "\n"
    << "momentum = " << c.train.momentum << "\n"
    << "backbone_warmup_epochs = " << c.train.backbone_warmup_epochs << "\n"
    << "backbone_train_after_warmup = " << b(c.train.backbone_train_after_warmup) << "\n"
    << "data_seed = " << c.synth.seed << "\n"
    << "seed = " << c.train.seed << "\n"
    << "use_class = " << b(c.train.ablation.use_class) << "\n"
    << "use_ctrs = " << b(c.train.ablation.use_ctrs) << "\n"
    << "use_private = " << b(c.train.ablation.use_private) << "\n"
    << "use_rec = " << b(c.train.ablation.use_rec) << "\n"
    << "use_diff = " << b(c.train.ablation.use_diff) << "\n"
    << "alpha = " << c.weights.alpha << "\n"
    << "beta = " << c.weights.beta << "\n"
    << "gamma = " << c.weights.gamma << "\n"
    << "margin = " << c.weights.margin << "\n"
    << "normalize_diff = " << b(c.weights.normalize_diff) << "\n"
    << "diff_form = " << diff_form_name(c.weights.diff_form) << "\n"
    << "num_source_ids = " << c.synth.num_source_ids << "\n"
    << "num_target_ids = " << c.synth.num_target_ids << "\n"
    << "images_per_id = " << c.synth.images_per_id << "\n"
    << "style_strength = " << c.synth.style_strength << "\n"
    << "noise_std = " << c.synth.noise_std << "\n"
    << "protocol = " << protocol_name(c.protocol) << "\n";
  if (!c.data_dir.empty()) o << "data_dir = " << c.data_dir << "\n";
  return o.str();
}

/// Every invariant violation across model, training, weights and (when the
/// synthetic generator is used) data settings.
inline std::vector<std::string> validate_run_config(const RunConfig& c) {
  auto out = validate_config(c.model, c.train, c.weights);
  if (c.data_dir.empty()) {
    for (auto& v : validate_synth(c.synth)) out.push_back(std::move(v));
    if (c.model.num_classes != c.synth.num_source_ids)
      out.push_back("num_classes: must equal num_source_ids (" + std::to_string(c.synth.num_source_ids) + ")");
  }
  return out;
}

/// Generates or loads the dataset described by the configuration.
inline DatasetSplit load_data(RunConfig& c) {
  if (c.data_dir.empty()) return generate_synthetic(c.synth);
  DatasetSplit split = load_split(c.data_dir);
  std::set<int> ids;
  for (const auto& s : split.train_source) ids.insert(s.identity);
  if (!c.num_classes_explicit) c.model.num_classes = static_cast<int>(ids.size());
  return split;
}

}  // namespace arn
