// roboka: command-line entry point.
//
//   roboka synth     --out DIR --n INT --coupling F --noise F --seed INT
//   roboka split     --data DIR --protocol T1|T2|T3|T4 --seed INT --out FILE
//   roboka train     --data DIR --split FILE --arch TAG --objective TAG --config FILE --out DIR
//   roboka eval      --model CKPT --data DIR --split FILE
//   roboka gradcheck --arch TAG --seed INT
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// check failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "roboka/config.hpp"
#include "roboka/data.hpp"
#include "roboka/errors.hpp"
#include "roboka/gradcheck.hpp"
#include "roboka/model.hpp"
#include "roboka/parallel.hpp"
#include "roboka/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace roboka;

namespace {

#ifndef ROBOKA_BUILD_ID
#define ROBOKA_BUILD_ID "roboka-dev"
#endif

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!text.empty() && text.back() != '\n') f << '\n';
}

void write_manifest(const fs::path& path, const std::string& command, const KeyValues& config,
                    std::uint64_t seed, const std::string& data_hash, const json& outputs,
                    int threads) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  m["dataset_hash"] = data_hash;
  m["build"] = ROBOKA_BUILD_ID;
  m["outputs"] = outputs;
  m["threads"] = threads;
  write_text(path, m.dump(2));
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int n = 100;
  double coupling = 0.7;
  double noise = 0.5;
  std::uint64_t seed = 0;
  int d_audio = 16, d_text = 16, t_min = 8, t_max = 24, dncr = 0;
  double dropout = 0.0;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.n_per_class = a.n;
  cfg.coupling = a.coupling;
  cfg.noise = a.noise;
  cfg.seed = a.seed;
  cfg.d_audio = a.d_audio;
  cfg.d_text = a.d_text;
  cfg.t_min = a.t_min;
  cfg.t_max = a.t_max;
  cfg.modality_dropout = a.dropout;
  cfg.n_dncr = a.dncr;
  const Dataset ds = synth_dataset(cfg);
  write_dataset(ds, a.out);
  const std::string hash = dataset_hash(ds);
  KeyValues kv = {{"n", std::to_string(a.n)},           {"coupling", std::to_string(a.coupling)},
                  {"noise", std::to_string(a.noise)},   {"d_audio", std::to_string(a.d_audio)},
                  {"d_text", std::to_string(a.d_text)}, {"t_min", std::to_string(a.t_min)},
                  {"t_max", std::to_string(a.t_max)},   {"dropout", std::to_string(a.dropout)},
                  {"dncr", std::to_string(a.dncr)}};
  write_manifest(fs::path(a.out) / "run_manifest.json", "synth", kv, a.seed, hash,
                 {{"dataset", a.out}}, 1);
  std::cout << json{{"records", ds.size()}, {"dataset_hash", hash}}.dump() << '\n';
  return 0;
}

struct SplitArgs {
  std::string data, protocol, out;
  std::uint64_t seed = 0;
  int folds = kDefaultFolds;
};

int run_split(const SplitArgs& a) {
  const Protocol protocol = parse_protocol(a.protocol);
  const Dataset ds = load_dataset(a.data);
  const SplitPlan plan = make_split(ds, protocol, a.seed, a.folds);
  save_split(plan, a.out);
  write_manifest(a.out + ".run.json", "split",
                 {{"protocol", a.protocol}, {"folds", std::to_string(a.folds)}}, a.seed,
                 dataset_hash(ds), {{"split", a.out}}, 1);
  std::cout << json{{"protocol", a.protocol},
                    {"train", plan.train_ids.size()},
                    {"test", plan.test_ids.size()},
                    {"holdout_groups", plan.holdout_groups}}
                   .dump()
            << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, split, arch, objective, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  int threads = default_threads();
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  KeyValues kv;
  if (!a.config.empty()) kv = read_key_values(a.config);
  apply_key_values(kv, cfg);
  if (!a.arch.empty()) cfg.model.arch = parse_arch(a.arch);
  if (!a.objective.empty()) cfg.model.objective = parse_objective(a.objective);
  else if (!kv.count("objective")) cfg.model.objective = default_objective(cfg.model.arch);
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.threads = a.threads;
  validate_combination(cfg.model.arch, cfg.model.objective);

  const Dataset ds = load_dataset(a.data, a.threads);
  const SplitPlan plan = load_split(a.split);
  std::vector<TrainConfig> candidates;
  const auto lrs = cv_learning_rates(kv);
  if (lrs.empty()) candidates.push_back(cfg);
  for (double lr : lrs) {
    candidates.push_back(cfg);
    candidates.back().lr = lr;
  }

  const CrossValidation cv = cross_validate(candidates, ds, plan);
  TrainConfig final_cfg = cv.candidates[cv.selected].config;
  final_cfg.epochs = cv.selected_epochs;
  const auto train = select(ds, plan.train_ids);
  const TrainResult tr = train_model(final_cfg, train);

  const fs::path out(a.out);
  fs::create_directories(out);
  save_checkpoint(tr.params, out / "model.rbka");
  write_text(out / "train_log.csv", training_log_csv(tr.log));
  write_text(out / "cv.json", cross_validation_to_json(cv));
  const auto test = select(ds, plan.test_ids);
  const MetricsReport report = evaluate(tr.params, test, plan.protocol, a.threads);
  write_text(out / "metrics.json", metrics_to_json(report, plan.protocol));

  KeyValues snap = snapshot(final_cfg);
  snap["split"] = a.split;
  snap["protocol"] = std::string(to_string(plan.protocol));
  write_manifest(out / "run_manifest.json", "train", snap, cfg.seed, dataset_hash(ds),
                 {{"checkpoint", (out / "model.rbka").string()},
                  {"training_log", (out / "train_log.csv").string()},
                  {"cross_validation", (out / "cv.json").string()},
                  {"metrics", (out / "metrics.json").string()}},
                 a.threads);
  std::cout << metrics_to_json(report, plan.protocol) << '\n';
  return 0;
}

struct EvalArgs {
  std::string model, data, split;
  int threads = default_threads();
};

int run_eval(const EvalArgs& a) {
  const ModelParams params = load_checkpoint(a.model);
  const Dataset ds = load_dataset(a.data, a.threads);
  const SplitPlan plan = load_split(a.split);
  const auto test = select(ds, plan.test_ids);
  const MetricsReport report = evaluate(params, test, plan.protocol, a.threads);
  std::cout << metrics_to_json(report, plan.protocol) << '\n';
  return 0;
}

struct GradcheckArgs {
  std::string arch = "roboka";
  std::uint64_t seed = 0;
  int instances = 20;
};

int run_gradcheck(const GradcheckArgs& a) {
  std::vector<ArchTag> tags;
  if (a.arch == "all") tags.assign(kAllArchTags.begin(), kAllArchTags.end());
  else tags.push_back(parse_arch(a.arch));

  GradcheckOptions opts;
  opts.instances = a.instances;
  bool ok = true;
  for (ArchTag tag : tags) {
    const GradcheckReport rep = gradcheck(tag, a.seed, opts);
    for (const auto& g : rep.groups)
      std::cout << to_string(tag) << "  " << g.name << "  checked=" << g.checked
                << " nonsmooth=" << g.nonsmooth << " failures=" << g.failures
                << " max_rel_err=" << g.max_rel_err << '\n';
    std::cout << (rep.passed ? "PASS " : "FAIL ") << to_string(tag)
              << " max_rel_err=" << rep.max_rel_err << '\n';
    ok = ok && rep.passed;
  }
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal KAN fusion for unwanted-call detection"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic paired-embedding dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--n", synth.n, "Records per class");
  s->add_option("--coupling", synth.coupling, "Cross-modal latent coupling in [0, 1]");
  s->add_option("--noise", synth.noise, "Noise scale");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--d-audio", synth.d_audio, "Audio embedding width");
  s->add_option("--d-text", synth.d_text, "Text embedding width");
  s->add_option("--t-min", synth.t_min, "Minimum sequence length");
  s->add_option("--t-max", synth.t_max, "Maximum sequence length");
  s->add_option("--dropout", synth.dropout, "Per-modality probability of carrying no class signal");
  s->add_option("--dncr", synth.dncr, "Number of out-of-domain unwanted (dncr) records");

  SplitArgs split;
  auto* sp = app.add_subcommand("split", "Build a protocol split (JSON)");
  sp->add_option("--data", split.data, "Dataset directory")->required();
  sp->add_option("--protocol", split.protocol, "T1, T2, T3 or T4")->required();
  sp->add_option("--seed", split.seed, "Random seed");
  sp->add_option("--out", split.out, "Output split file")->required();
  sp->add_option("--folds", split.folds, "Cross-validation folds");

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Cross-validate, fit and evaluate a model");
  tr->add_option("--data", train.data, "Dataset directory")->required();
  tr->add_option("--split", train.split, "Split file")->required();
  tr->add_option("--arch", train.arch, "Architecture tag");
  tr->add_option("--objective", train.objective, "bce_only, sum_c_bce or uncertainty");
  tr->add_option("--config", train.config, "key=value config file");
  tr->add_option("--out", train.out, "Output directory")->required();
  tr->add_option("--seed", train.seed, "Random seed (overrides config)");
  tr->add_option("--epochs", train.epochs, "Epoch budget (overrides config)");
  tr->add_option("--threads", train.threads, "Worker threads");

  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split's test side");
  ev->add_option("--model", eval.model, "Checkpoint file")->required();
  ev->add_option("--data", eval.data, "Dataset directory")->required();
  ev->add_option("--split", eval.split, "Split file")->required();
  ev->add_option("--threads", eval.threads, "Worker threads");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  g->add_option("--arch", gc.arch, "Architecture tag or 'all'");
  g->add_option("--seed", gc.seed, "Random seed");
  g->add_option("--instances", gc.instances, "Random instances per architecture");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*s) return run_synth(synth);
    if (*sp) return run_split(split);
    if (*tr) return run_train(train);
    if (*ev) return run_eval(eval);
    if (*g) return run_gradcheck(gc);
  } catch (const roboka::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
