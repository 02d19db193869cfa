#pragma once

// Flat key=value configuration files:
//
//   # comment
//   lr = 0.001
//   batch_size = 32
//   arch = roboka
//
// Later assignments override earlier ones; command-line flags override the
// file.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "roboka/train.hpp"

namespace roboka {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);

// Applies recognised keys to cfg; throws ConfigError on unknown keys or
// unparsable values. Recognised: lr beta1 beta2 eps batch_size epochs
// patience clip_norm seed tau grid_lo grid_hi grid_intervals kan_base
// unimodal_head arch objective cv_lr folds.
void apply_key_values(const KeyValues& kv, TrainConfig& cfg);

// Learning rates to compare during cross-validation ("cv_lr = 1e-3, 3e-3");
// empty when not set.
std::vector<double> cv_learning_rates(const KeyValues& kv);

// Every setting that influences training, as key=value pairs.
KeyValues snapshot(const TrainConfig& cfg);

}  // namespace roboka
