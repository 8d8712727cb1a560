#include "attpool/config.hpp"

#include <fstream>

namespace attpool {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

double to_double(const ConfigEntry& e, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used != e.value.size()) throw std::invalid_argument(e.value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("value '" + e.value + "' for " + key + " is not a number",
                      e.line);
  }
}

std::size_t to_count(const ConfigEntry& e, const std::string& key) {
  const double v = to_double(e, key);
  if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
    throw ConfigError("value '" + e.value + "' for " + key +
                          " is not a non-negative integer",
                      e.line);
  return static_cast<std::size_t>(v);
}

std::uint64_t to_seed(const ConfigEntry& e, const std::string& key) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(e.value, &used);
    if (used != e.value.size()) throw std::invalid_argument(e.value);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("value '" + e.value + "' for " + key +
                          " is not an unsigned integer",
                      e.line);
  }
}

}  // namespace

PoolKind parse_pooling(const std::string& value, int line) {
  if (value == "vlad") return PoolKind::vlad;
  if (value == "bow") return PoolKind::bow;
  if (value == "gap") return PoolKind::gap;
  throw ConfigError("pooling must be vlad, bow or gap, got '" + value + "'", line);
}

AttentionMode parse_attention(const std::string& value, int line) {
  if (value == "on") return AttentionMode::on;
  if (value == "off") return AttentionMode::off;
  if (value == "uniform") return AttentionMode::uniform;
  throw ConfigError("attention must be on, off or uniform, got '" + value + "'",
                    line);
}

bool parse_on_off(const std::string& value, int line) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("expected on/off, got '" + value + "'", line);
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  ConfigMap kv;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value', got '" + stripped + "'", lineno);
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw ConfigError("missing key before '='", lineno);
    if (value.empty())
      throw ConfigError("missing value for key '" + key + "'", lineno);
    if (kv.count(key))
      throw ConfigError("duplicate key '" + key + "'", lineno);
    kv[key] = {value, lineno};
  }
  return kv;
}

TrainConfig make_train_config(const ConfigMap& kv) {
  TrainConfig cfg;
  for (const auto& [key, e] : kv) {
    if (key == "pooling")
      cfg.pooling = parse_pooling(e.value, e.line);
    else if (key == "attention")
      cfg.attention = parse_attention(e.value, e.line);
    else if (key == "lambda")
      cfg.lambda = to_double(e, key);
    else if (key == "alpha")
      cfg.alpha = to_double(e, key);
    else if (key == "codewords")
      cfg.codewords = to_count(e, key);
    else if (key == "feature_dim")
      cfg.feature_dim = to_count(e, key);
    else if (key == "backbone_width")
      cfg.backbone_width = to_count(e, key);
    else if (key == "batch_size")
      cfg.batch_size = to_count(e, key);
    else if (key == "weight_decay")
      cfg.weight_decay = to_double(e, key);
    else if (key == "adam_eps")
      cfg.adam_eps = to_double(e, key);
    else if (key == "adam_beta1")
      cfg.adam_beta1 = to_double(e, key);
    else if (key == "adam_beta2")
      cfg.adam_beta2 = to_double(e, key);
    else if (key == "stage1_epochs")
      cfg.stage1_epochs = to_count(e, key);
    else if (key == "stage1_lr")
      cfg.stage1_lr = to_double(e, key);
    else if (key == "stage2_epochs")
      cfg.stage2_epochs = to_count(e, key);
    else if (key == "stage2_lr_classifier")
      cfg.stage2_lr_classifier = to_double(e, key);
    else if (key == "stage2_lr_shared")
      cfg.stage2_lr_shared = to_double(e, key);
    else if (key == "lr_decay")
      cfg.lr_decay = to_double(e, key);
    else if (key == "lr_decay_every")
      cfg.lr_decay_every = to_count(e, key);
    else if (key == "seed")
      cfg.seed = to_seed(e, key);
    else if (key == "flip_average")
      cfg.flip_average = parse_on_off(e.value, e.line);
    else if (key == "kmeans_max_descriptors")
      cfg.kmeans_max_descriptors = to_count(e, key);
    else
      throw ConfigError("unknown key '" + key + "'", e.line);
  }
  try {
    cfg.validate();
  } catch (const ValueError& err) {
    throw ConfigError(err.what());
  }
  return cfg;
}

SyntheticSpec make_synth_spec(const ConfigMap& kv) {
  SyntheticSpec spec;
  for (const auto& [key, e] : kv) {
    if (key == "variant") {
      if (e.value != "featuremap" && e.value != "image")
        throw ConfigError("variant must be featuremap or image, got '" +
                              e.value + "'",
                          e.line);
      spec.variant = e.value;
    } else if (key == "classes")
      spec.classes = to_count(e, key);
    else if (key == "train_per_class")
      spec.train_per_class = to_count(e, key);
    else if (key == "test_per_class")
      spec.test_per_class = to_count(e, key);
    else if (key == "grid_w")
      spec.grid_w = to_count(e, key);
    else if (key == "grid_h")
      spec.grid_h = to_count(e, key);
    else if (key == "dim")
      spec.dim = to_count(e, key);
    else if (key == "cell")
      spec.cell = to_count(e, key);
    else if (key == "signal_strength")
      spec.signal_strength = to_double(e, key);
    else if (key == "signal_fraction")
      spec.signal_fraction = to_double(e, key);
    else if (key == "distractor_pool")
      spec.distractor_pool = to_count(e, key);
    else if (key == "distractor_fraction")
      spec.distractor_fraction = to_double(e, key);
    else if (key == "noise_sigma")
      spec.noise_sigma = to_double(e, key);
    else if (key == "seed")
      spec.seed = to_seed(e, key);
    else
      throw ConfigError("unknown key '" + key + "'", e.line);
  }
  try {
    spec.validate();
  } catch (const ValueError& err) {
    throw ConfigError(err.what());
  }
  return spec;
}

}  // namespace attpool
