#ifndef ATTPOOL_CONFIG_HPP
#define ATTPOOL_CONFIG_HPP

#include <map>
#include <string>

#include "attpool/data.hpp"
#include "attpool/model.hpp"

namespace attpool {

struct ConfigEntry {
  std::string value;
  int line = 0;  // 1-based source line, 0 for CLI overrides
};

using ConfigMap = std::map<std::string, ConfigEntry>;

// Plain-text `key = value` files; '#' starts a comment, blank lines are
// skipped. Duplicate keys and lines without '=' are config errors carrying
// the offending line number.
ConfigMap parse_config_file(const std::string& path);

// Unknown keys are rejected with the line they came from.
TrainConfig make_train_config(const ConfigMap& kv);
SyntheticSpec make_synth_spec(const ConfigMap& kv);

PoolKind parse_pooling(const std::string& value, int line = 0);
AttentionMode parse_attention(const std::string& value, int line = 0);
bool parse_on_off(const std::string& value, int line = 0);

}  // namespace attpool

#endif
