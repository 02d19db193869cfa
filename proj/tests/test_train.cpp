#include <doctest.h>

#include <random>
#include <set>

#include <json.hpp>

#include "oracles.hpp"
#include "roboka/config.hpp"
#include "roboka/train.hpp"

using namespace roboka;

namespace {

SynthConfig synth(int n, double coupling, double noise, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_per_class = n;
  cfg.d_audio = 8;
  cfg.d_text = 8;
  cfg.t_min = 8;
  cfg.t_max = 12;
  cfg.coupling = coupling;
  cfg.noise = noise;
  cfg.seed = seed;
  return cfg;
}

std::vector<const CallRecord*> all(const Dataset& ds) {
  std::vector<const CallRecord*> out;
  for (const auto& r : ds) out.push_back(&r);
  return out;
}

TrainConfig quick(ArchTag arch, int epochs) {
  TrainConfig cfg;
  cfg.model.arch = arch;
  cfg.model.objective = default_objective(arch);
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.seed = 3;
  return cfg;
}

double accuracy(const ModelParams& p, const std::vector<const CallRecord*>& recs) {
  const auto pred = predict(p, recs);
  int ok = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) ok += pred[i] == recs[i]->label;
  return double(ok) / double(recs.size());
}

}  // namespace

TEST_CASE("metrics on the worked example") {
  const auto m = metrics_from_counts(8, 3, 7, 2);
  CHECK(m.unwanted_recall == doctest::Approx(80.0));
  CHECK(*m.macro_recall == doctest::Approx(75.0));
  const auto ref = oracle::metrics(8, 3, 7, 2);
  CHECK(*m.macro_f1 == ref.macro_f1);
  // F1_pos = 16/21, F1_neg = 14/19
  CHECK(*m.macro_f1 == doctest::Approx(50.0 * (16.0 / 21.0 + 14.0 / 19.0)).epsilon(1e-14));
  CHECK(m.total() == 20);
}

TEST_CASE("metrics match the confusion-matrix oracle") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<long> count(0, 30);
  for (int n = 0; n < 1000; ++n) {
    const long tp = count(rng), fp = count(rng), tn = count(rng), fn = count(rng);
    const auto m = metrics_from_counts(tp, fp, tn, fn);
    const auto ref = oracle::metrics(tp, fp, tn, fn);
    CHECK(*m.macro_recall == ref.macro_recall);
    CHECK(*m.macro_f1 == ref.macro_f1);
    CHECK(m.unwanted_recall == ref.unwanted_recall);
  }
}

TEST_CASE("metric edge cases") {
  const auto perfect = metrics_from_counts(10, 0, 10, 0);
  CHECK(*perfect.macro_recall == 100.0);
  CHECK(*perfect.macro_f1 == 100.0);
  CHECK(perfect.unwanted_recall == 100.0);

  const auto t4 = metrics_from_counts(0, 0, 0, 9, true);
  CHECK(t4.unwanted_recall == 0.0);
  CHECK_FALSE(t4.macro_f1.has_value());
  CHECK_FALSE(t4.macro_recall.has_value());
  const auto j = nlohmann::json::parse(metrics_to_json(t4, Protocol::T4));
  CHECK(j["macro_f1"].is_null());
  CHECK(j["macro_recall"].is_null());
  CHECK(j["unwanted_recall"] == 0.0);
  CHECK(j["protocol"] == "T4");

  const auto one_class = metrics_from_counts(0, 0, 5, 0);
  CHECK(one_class.unwanted_recall == 0.0);
  CHECK(*one_class.macro_recall == 50.0);

  const std::vector<int> labels = {1, 1, 0, 0, 1}, pred = {1, 0, 0, 1, 1};
  const auto m = metrics_from_predictions(labels, pred);
  CHECK(m.tp == 2);
  CHECK(m.fn == 1);
  CHECK(m.tn == 1);
  CHECK(m.fp == 1);
  CHECK_THROWS_AS(metrics_from_predictions(labels, std::vector<int>{1}), ShapeError);
  CHECK_THROWS_AS(metrics_from_counts(-1, 0, 0, 0), InputError);
}

TEST_CASE("epochs = 0 returns the initialization") {
  const auto ds = synth_dataset(synth(6, 0.7, 0.5, 1));
  const auto recs = all(ds);
  auto cfg = quick(ArchTag::roboka, 0);
  const auto r = train_model(cfg, recs);
  ModelConfig m = cfg.model;
  m.d_audio = m.d_text = 8;
  std::mt19937_64 master(cfg.seed);
  CHECK(serialize_checkpoint(r.params) == serialize_checkpoint(init_model(m, master())));
  CHECK(r.log.empty());
}

TEST_CASE("configuration errors") {
  const auto ds = synth_dataset(synth(4, 0.7, 0.5, 1));
  const auto recs = all(ds);
  auto cfg = quick(ArchTag::roboka, 1);
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train_model(cfg, recs), ConfigError);
  cfg = quick(ArchTag::unimodal_audio, 1);
  cfg.model.objective = Objective::sum_c_bce;
  CHECK_THROWS_AS(train_model(cfg, recs), ConfigError);
  cfg = quick(ArchTag::concat, 1);
  cfg.lr = 0;
  CHECK_THROWS_AS(train_model(cfg, recs), ConfigError);
  CHECK_THROWS_AS(train_model(quick(ArchTag::concat, 1), {}), InputError);
  CHECK_THROWS_AS(evaluate(ModelParams(), {}, Protocol::T3), InputError);
}

TEST_CASE("training is deterministic and thread-independent") {
  const auto ds = synth_dataset(synth(12, 0.7, 0.5, 2));
  const auto recs = all(ds);
  auto cfg = quick(ArchTag::roboka, 2);
  cfg.batch_size = 8;
  const auto a = train_model(cfg, recs);
  const auto b = train_model(cfg, recs);
  cfg.threads = 3;
  const auto c = train_model(cfg, recs);
  CHECK(serialize_checkpoint(a.params) == serialize_checkpoint(b.params));
  CHECK(serialize_checkpoint(a.params) == serialize_checkpoint(c.params));
  CHECK(training_log_csv(a.log) == training_log_csv(c.log));
}

TEST_CASE("training log telemetry") {
  const auto ds = synth_dataset(synth(10, 0.7, 0.5, 3));
  const auto recs = all(ds);
  auto cfg = quick(ArchTag::roboka, 3);
  cfg.batch_size = 7;
  const auto r = train_model(cfg, recs);
  // 20 records in batches of 7: 7, 7, 6
  CHECK(r.log.size() == 9);
  for (const auto& s : r.log) {
    CHECK(s.w_c > 0);
    CHECK(std::isfinite(s.w_c));
    CHECK(s.total == doctest::Approx(s.w_c * s.l_c + s.w_bce * s.l_bce +
                                     std::log(1 / std::sqrt(2 * s.w_c)) +
                                     std::log(1 / std::sqrt(2 * s.w_bce))));
  }
  const std::string csv = training_log_csv(r.log);
  CHECK(csv.rfind("step,l_c,l_bce,w_c,w_bce,total\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);
}

TEST_CASE("separable data is fit") {
  const auto ds = synth_dataset(synth(50, 0.9, 0.1, 4));
  const auto recs = all(ds);
  auto cfg = quick(ArchTag::roboka, 30);
  const auto r = train_model(cfg, recs);
  CHECK(accuracy(r.params, recs) >= 0.99);

  const auto clean = synth_dataset(synth(30, 0.7, 0.0, 5));
  const auto crecs = all(clean);
  const auto u = train_model(quick(ArchTag::unimodal_audio, 30), crecs);
  CHECK(accuracy(u.params, crecs) == 1.0);
}

TEST_CASE("cross-validation validates every record once") {
  const auto ds = synth_dataset(synth(25, 0.7, 0.5, 6));
  SplitPlan plan;
  plan.folds = 5;
  for (const auto& r : ds) plan.train_ids.push_back(r.id);
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < ds.size(); ++i) plan.fold_of[ds[i].id] = int(i % 5);

  std::vector<TrainConfig> cands = {quick(ArchTag::concat, 2), quick(ArchTag::concat, 2)};
  cands[1].lr = 3e-3;
  const auto cv = cross_validate(cands, ds, plan);
  REQUIRE(cv.candidates.size() == 2);
  for (const auto& c : cv.candidates) {
    std::size_t validated = 0;
    double sum = 0, sq = 0;
    for (const auto& f : c.folds) {
      validated += f.val_size;
      CHECK(f.train_size + f.val_size == 50);
      CHECK(f.metrics.total() == long(f.val_size));
      const auto ref = oracle::metrics(f.metrics.tp, f.metrics.fp, f.metrics.tn, f.metrics.fn);
      sum += ref.macro_f1;
      sq += ref.macro_f1 * ref.macro_f1;
    }
    CHECK(validated == 50);
    const double mean = sum / 5;
    CHECK(c.mean_macro_f1 == doctest::Approx(mean).epsilon(1e-12));
    CHECK(c.std_macro_f1 == doctest::Approx(std::sqrt(std::max(0.0, sq / 5 - mean * mean))).epsilon(1e-9));
  }
  const std::size_t best = cv.candidates[1].mean_macro_f1 > cv.candidates[0].mean_macro_f1 ? 1 : 0;
  CHECK(cv.selected == best);
  CHECK(cv.selected_epochs >= 1);
  CHECK(cv.selected_epochs <= 2);
  const auto j = nlohmann::json::parse(cross_validation_to_json(cv));
  CHECK(j["candidates"].size() == 2);
  CHECK(j["candidates"][0]["folds"].size() == 5);
}

TEST_CASE("cross-validation survives a single-class fold") {
  const auto ds = synth_dataset(synth(10, 0.7, 0.5, 7));
  SplitPlan plan;
  plan.folds = 2;
  for (const auto& r : ds) {
    plan.train_ids.push_back(r.id);
    plan.fold_of[r.id] = r.label;  // each fold holds one class
  }
  const std::vector<TrainConfig> cands = {quick(ArchTag::concat, 1)};
  const auto cv = cross_validate(cands, ds, plan);
  for (const auto& f : cv.candidates[0].folds) {
    CHECK(f.metrics.macro_f1.has_value());
    CHECK(std::isfinite(*f.metrics.macro_f1));
  }
  plan.folds = 50;
  CHECK_THROWS_AS(cross_validate(cands, ds, plan), SplitError);
}

TEST_CASE("evaluate checks embedding widths") {
  const auto ds = synth_dataset(synth(4, 0.7, 0.5, 8));
  auto other = synth(4, 0.7, 0.5, 8);
  other.d_audio = 5;
  const auto ds2 = synth_dataset(other);
  const auto r = train_model(quick(ArchTag::concat, 1), all(ds));
  CHECK_THROWS_WITH_AS(evaluate(r.params, all(ds2), Protocol::T3), doctest::Contains("audio 5"), DataError);
}

TEST_CASE("key=value configuration") {
  const auto kv = parse_key_values("# comment\nlr = 0.01\n\nbatch_size=4  # trailing\narch = late_mlp\ncv_lr = 1e-3, 3e-3\n");
  TrainConfig cfg;
  apply_key_values(kv, cfg);
  CHECK(cfg.lr == 0.01);
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.model.arch == ArchTag::late_mlp);
  CHECK(cv_learning_rates(kv) == std::vector<double>{1e-3, 3e-3});

  TrainConfig round;
  apply_key_values(snapshot(cfg), round);
  CHECK(snapshot(round) == snapshot(cfg));

  CHECK_THROWS_AS(apply_key_values(parse_key_values("learning_rate = 1"), cfg), ConfigError);
  CHECK_THROWS_AS(apply_key_values(parse_key_values("epochs = ten"), cfg), ConfigError);
  CHECK_THROWS_AS(apply_key_values(parse_key_values("tau = 0"), cfg), ConfigError);
  CHECK_THROWS_AS(parse_key_values("just words"), ConfigError);
  CHECK_THROWS_AS(read_key_values("/nonexistent/roboka.cfg"), ConfigError);
}
