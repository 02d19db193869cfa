#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "roboka/data.hpp"
#include "roboka/errors.hpp"

namespace roboka {

namespace {

using nlohmann::json;

bool is_dncr(const CallRecord& r) { return r.engine == kDncrEngine; }

const std::string& axis_value(const CallRecord& r, Protocol p) {
  return p == Protocol::T1 ? r.engine : r.emotion;
}

// Choose whole groups so the held-out share is as close to 20% of n as
// possible: walk groups from largest to smallest (ties by name) and take a
// group whenever it moves the running total closer to the target. At least
// one group always stays on the training side.
std::vector<std::string> pick_holdout_groups(const std::map<std::string, int>& sizes, int n) {
  std::vector<std::pair<std::string, int>> groups(sizes.begin(), sizes.end());
  std::stable_sort(groups.begin(), groups.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const double target = kHoldoutFraction * n;
  std::vector<std::string> chosen;
  double total = 0;
  for (const auto& [name, size] : groups) {
    if (chosen.size() + 1 >= groups.size()) break;
    if (std::abs(total + size - target) < std::abs(total - target)) {
      chosen.push_back(name);
      total += size;
    }
  }
  if (chosen.empty()) chosen.push_back(groups.back().first);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

// Whole transcript groups, label-stratified, until each class reaches its
// share of round(0.2 n).
std::set<std::string> pick_t3_test(const std::vector<const CallRecord*>& pool, std::mt19937_64& rng) {
  std::map<std::string, std::array<int, 2>> groups;  // transcript -> per-label counts
  for (const auto* r : pool) ++groups[r->transcript_id][r->label];

  const int n = static_cast<int>(pool.size());
  const int total = static_cast<int>(std::lround(kHoldoutFraction * n));
  std::array<int, 2> per_label{};
  for (const auto* r : pool) ++per_label[r->label];
  // Largest-remainder apportionment of `total` across the two labels.
  std::array<double, 2> exact{};
  std::array<int, 2> target{};
  for (int c = 0; c < 2; ++c) {
    exact[c] = n ? double(total) * per_label[c] / n : 0.0;
    target[c] = static_cast<int>(std::floor(exact[c]));
  }
  if (target[0] + target[1] < total) {
    const int c = (exact[0] - target[0]) >= (exact[1] - target[1]) ? 0 : 1;
    ++target[c];
  }

  std::vector<std::string> order;
  for (const auto& [name, _] : groups) order.push_back(name);
  std::shuffle(order.begin(), order.end(), rng);

  std::set<std::string> chosen;
  std::array<int, 2> have{};
  for (const auto& name : order) {
    const auto& cnt = groups[name];
    if (have[0] + cnt[0] <= target[0] && have[1] + cnt[1] <= target[1]) {
      chosen.insert(name);
      have[0] += cnt[0];
      have[1] += cnt[1];
    }
  }
  return chosen;
}

// Label-stratified round-robin over a seeded shuffle: fold sizes differ by
// at most one.
std::map<std::string, int> assign_folds(std::vector<const CallRecord*> train, int folds,
                                        std::mt19937_64& rng) {
  std::shuffle(train.begin(), train.end(), rng);
  std::stable_partition(train.begin(), train.end(), [](const CallRecord* r) { return r->label == 0; });
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < train.size(); ++i)
    out[train[i]->id] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return out;
}

}  // namespace

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::T1: return "T1";
    case Protocol::T2: return "T2";
    case Protocol::T3: return "T3";
    case Protocol::T4: return "T4";
  }
  return "?";
}

Protocol parse_protocol(std::string_view name) {
  for (Protocol p : {Protocol::T1, Protocol::T2, Protocol::T3, Protocol::T4})
    if (to_string(p) == name) return p;
  throw ConfigError("unknown protocol '" + std::string(name) + "' (expected T1, T2, T3 or T4)");
}

SplitPlan make_split(const Dataset& records, Protocol protocol, std::uint64_t seed, int folds) {
  if (records.empty()) throw SplitError("cannot split an empty dataset");
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");

  SplitPlan plan;
  plan.protocol = protocol;
  plan.seed = seed;
  plan.folds = folds;
  std::mt19937_64 rng(seed);

  std::vector<const CallRecord*> in_domain;
  for (const auto& r : records)
    if (!is_dncr(r)) in_domain.push_back(&r);
  if (in_domain.empty()) throw SplitError("dataset has no in-domain (non-dncr) records");

  std::vector<const CallRecord*> train, test;
  switch (protocol) {
    case Protocol::T1:
    case Protocol::T2: {
      std::map<std::string, int> sizes;
      for (const auto* r : in_domain) ++sizes[axis_value(*r, protocol)];
      if (sizes.size() < 2)
        throw SplitError(std::string(protocol == Protocol::T1 ? "engine" : "emotion") +
                         " holdout needs at least two distinct groups");
      plan.holdout_groups = pick_holdout_groups(sizes, static_cast<int>(in_domain.size()));
      const std::set<std::string> held(plan.holdout_groups.begin(), plan.holdout_groups.end());
      for (const auto* r : in_domain) (held.count(axis_value(*r, protocol)) ? test : train).push_back(r);
      break;
    }
    case Protocol::T3: {
      const auto held = pick_t3_test(in_domain, rng);
      for (const auto* r : in_domain) (held.count(r->transcript_id) ? test : train).push_back(r);
      break;
    }
    case Protocol::T4: {
      plan.holdout_groups = {std::string(kDncrEngine)};
      train = in_domain;
      for (const auto& r : records)
        if (is_dncr(r) && r.label == 1) test.push_back(&r);
      if (test.empty()) throw SplitError("T4 needs unwanted records with engine 'dncr'");
      break;
    }
  }

  if (train.size() < static_cast<std::size_t>(folds))
    throw SplitError("training side has " + std::to_string(train.size()) +
                     " records, fewer than " + std::to_string(folds) + " folds");
  if (test.empty()) throw SplitError("split produced an empty test set");

  for (const auto* r : train) plan.train_ids.push_back(r->id);
  for (const auto* r : test) plan.test_ids.push_back(r->id);
  plan.fold_of = assign_folds(train, folds, rng);
  return plan;
}

std::string split_to_json(const SplitPlan& plan) {
  json j;
  j["protocol"] = to_string(plan.protocol);
  j["seed"] = plan.seed;
  j["folds"] = plan.folds;
  j["holdout_groups"] = plan.holdout_groups;
  j["train_ids"] = plan.train_ids;
  j["test_ids"] = plan.test_ids;
  json folds = json::object();
  for (const auto& [id, f] : plan.fold_of) folds[id] = f;
  j["fold_assignments"] = std::move(folds);
  return j.dump(2);
}

SplitPlan split_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    SplitPlan plan;
    plan.protocol = parse_protocol(j.at("protocol").get<std::string>());
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.folds = j.at("folds").get<int>();
    plan.holdout_groups = j.at("holdout_groups").get<std::vector<std::string>>();
    plan.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    plan.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    for (const auto& [id, f] : j.at("fold_assignments").items()) plan.fold_of[id] = f.get<int>();
    for (const auto& id : plan.train_ids)
      if (!plan.fold_of.count(id)) throw SplitError("train id '" + id + "' has no fold assignment");
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw SplitError(std::string("malformed split file: ") + e.what());
  }
}

void save_split(const SplitPlan& plan, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << split_to_json(plan) << '\n';
}

SplitPlan load_split(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open split file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return split_from_json(ss.str());
}

}  // namespace roboka
