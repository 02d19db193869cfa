#include "roboka/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "roboka/errors.hpp"

namespace roboka {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_key_values(ss.str());
}

void apply_key_values(const KeyValues& kv, TrainConfig& cfg) {
  for (const auto& [key, v] : kv) {
    if (key == "lr") cfg.lr = to_double(key, v);
    else if (key == "beta1") cfg.beta1 = to_double(key, v);
    else if (key == "beta2") cfg.beta2 = to_double(key, v);
    else if (key == "eps") cfg.eps = to_double(key, v);
    else if (key == "batch_size") cfg.batch_size = to_int<int>(key, v);
    else if (key == "epochs") cfg.epochs = to_int<int>(key, v);
    else if (key == "patience") cfg.patience = to_int<int>(key, v);
    else if (key == "clip_norm") cfg.clip_norm = to_double(key, v);
    else if (key == "seed") cfg.seed = to_int<std::uint64_t>(key, v);
    else if (key == "tau") cfg.model.tau = to_double(key, v);
    else if (key == "grid_lo") cfg.model.grid.lo = to_double(key, v);
    else if (key == "grid_hi") cfg.model.grid.hi = to_double(key, v);
    else if (key == "grid_intervals") cfg.model.grid.intervals = to_int<int>(key, v);
    else if (key == "kan_base") cfg.model.kan_base = to_bool(key, v);
    else if (key == "unimodal_head") cfg.model.unimodal_head = parse_classifier_head(v);
    else if (key == "arch") cfg.model.arch = parse_arch(v);
    else if (key == "objective") cfg.model.objective = parse_objective(v);
    else if (key == "cv_lr" || key == "folds") continue;  // consumed by the train command
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (!(cfg.model.tau > 0)) throw ConfigError("tau must be positive");
}

std::vector<double> cv_learning_rates(const KeyValues& kv) {
  std::vector<double> out;
  auto it = kv.find("cv_lr");
  if (it == kv.end()) return out;
  std::istringstream in(it->second);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double("cv_lr", item));
  }
  return out;
}

KeyValues snapshot(const TrainConfig& cfg) {
  return {
      {"arch", std::string(to_string(cfg.model.arch))},
      {"objective", std::string(to_string(cfg.model.objective))},
      {"lr", fmt(cfg.lr)},
      {"beta1", fmt(cfg.beta1)},
      {"beta2", fmt(cfg.beta2)},
      {"eps", fmt(cfg.eps)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"epochs", std::to_string(cfg.epochs)},
      {"patience", std::to_string(cfg.patience)},
      {"clip_norm", fmt(cfg.clip_norm)},
      {"seed", std::to_string(cfg.seed)},
      {"tau", fmt(cfg.model.tau)},
      {"grid_lo", fmt(cfg.model.grid.lo)},
      {"grid_hi", fmt(cfg.model.grid.hi)},
      {"grid_intervals", std::to_string(cfg.model.grid.intervals)},
      {"kan_base", cfg.model.kan_base ? "true" : "false"},
      {"unimodal_head", std::string(to_string(cfg.model.unimodal_head))},
  };
}

}  // namespace roboka
