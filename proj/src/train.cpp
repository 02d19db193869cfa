#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "roboka/errors.hpp"
#include "roboka/parallel.hpp"
#include "roboka/train.hpp"

namespace roboka {

namespace {

LabeledInput as_input(const CallRecord& r, const ModelConfig& cfg) {
  LabeledInput li;
  if (uses_audio(cfg.arch)) li.input.audio = &r.audio;
  if (uses_text(cfg.arch)) li.input.text = &r.text;
  li.label = r.label;
  return li;
}

void check_config(const TrainConfig& cfg) {
  if (!(cfg.lr > 0)) throw ConfigError("lr must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.patience < 1) throw ConfigError("patience must be positive");
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(cfg.clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  validate_combination(cfg.model.arch, cfg.model.objective);
  if (needs_contrastive(cfg.model.objective) && cfg.batch_size < 2)
    throw ConfigError("contrastive objectives need batch_size >= 2 (in-batch negatives)");
}

class Adam {
 public:
  Adam(const TrainConfig& cfg, const ModelParams& like)
      : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(ModelParams& params, ModelParams& grad) {
    ++t_;
    auto p = param_views(params);
    auto g = param_views(grad);
    auto m = param_views(m_);
    auto v = param_views(v_);

    double sq = 0;
    for (const auto& gi : g) sq += Eigen::Map<const Eigen::VectorXd>(gi.data, gi.size).squaredNorm();
    const double norm = std::sqrt(sq);
    const double scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t k = 0; k < p.size(); ++k) {
      Eigen::Map<Eigen::VectorXd> pk(p[k].data, p[k].size), mk(m[k].data, m[k].size),
          vk(v[k].data, v[k].size);
      const Eigen::VectorXd gk = scale * Eigen::Map<const Eigen::VectorXd>(g[k].data, g[k].size);
      mk = cfg_.beta1 * mk + (1.0 - cfg_.beta1) * gk;
      vk = cfg_.beta2 * vk + (1.0 - cfg_.beta2) * gk.cwiseAbs2();
      pk.array() -= cfg_.lr * (mk.array() / bc1) / ((vk.array() / bc2).sqrt() + cfg_.eps);
    }
    params.log_sigma = params.log_sigma.cwiseMax(-cfg_.log_sigma_bound).cwiseMin(cfg_.log_sigma_bound);
  }

 private:
  const TrainConfig& cfg_;
  ModelParams m_, v_;
  long t_ = 0;
};

}  // namespace

TrainResult train_model(const TrainConfig& cfg, RecordRefs train, RecordRefs val) {
  check_config(cfg);
  if (train.empty()) throw InputError("training set is empty");

  ModelConfig mcfg = cfg.model;
  mcfg.d_audio = static_cast<int>(train.front()->audio.cols());
  mcfg.d_text = static_cast<int>(train.front()->text.cols());

  std::mt19937_64 master(cfg.seed);
  const std::uint64_t init_seed = master();
  std::mt19937_64 shuffle_rng(master());

  TrainResult result;
  result.params = init_model(mcfg, init_seed);
  if (cfg.epochs == 0) return result;

  std::vector<LabeledInput> inputs;
  inputs.reserve(train.size());
  for (const auto* r : train) inputs.push_back(as_input(*r, mcfg));

  const std::size_t min_batch = needs_contrastive(mcfg.objective) ? 2 : 1;
  Adam adam(cfg, result.params);
  ModelParams grad = result.params.zeros_like();
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<LabeledInput> batch;

  std::optional<ModelParams> best;
  int since_best = 0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      if (stop - start < min_batch) continue;
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(inputs[order[i]]);
      const BatchLoss loss = batch_loss(result.params, batch, &grad, cfg.threads);
      if (!std::isfinite(loss.total)) throw NumericalCheckError("training loss became non-finite");
      adam.step(result.params, grad);
      result.log.push_back({++step, loss.l_c, loss.l_bce, loss.weight_c, loss.weight_bce, loss.total});
    }
    result.epochs_run = epoch;

    if (val.empty()) {
      result.best_epoch = epoch;
      continue;
    }
    const double f1 = *evaluate(result.params, val, Protocol::T3, cfg.threads).macro_f1;
    if (!result.best_val_f1 || f1 > *result.best_val_f1) {
      result.best_val_f1 = f1;
      result.best_epoch = epoch;
      best = result.params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (best) result.params = std::move(*best);
  return result;
}

std::vector<int> predict(const ModelParams& params, RecordRefs records, int threads) {
  std::vector<int> out(records.size());
  parallel_for(static_cast<int>(records.size()), threads, [&](int i) {
    const LabeledInput li = as_input(*records[i], params.config());
    out[i] = params.logit(li.input) >= 0.0 ? 1 : 0;
  });
  return out;
}

MetricsReport evaluate(const ModelParams& params, RecordRefs test, Protocol protocol, int threads) {
  if (test.empty()) throw InputError("cannot evaluate on an empty test set");
  const ModelConfig& cfg = params.config();
  const auto& first = *test.front();
  if ((uses_audio(cfg.arch) && first.audio.cols() != cfg.d_audio) ||
      (uses_text(cfg.arch) && first.text.cols() != cfg.d_text))
    throw DataError("embedding widths (audio " + std::to_string(first.audio.cols()) + ", text " +
                    std::to_string(first.text.cols()) + ") do not match the model (audio " +
                    std::to_string(cfg.d_audio) + ", text " + std::to_string(cfg.d_text) + ")");
  const std::vector<int> pred = predict(params, test, threads);
  std::vector<int> labels;
  labels.reserve(test.size());
  for (const auto* r : test) labels.push_back(r->label);
  return metrics_from_predictions(labels, pred, protocol == Protocol::T4);
}

std::string training_log_csv(std::span<const StepLog> log) {
  std::ostringstream out;
  out.precision(17);
  out << "step,l_c,l_bce,w_c,w_bce,total\n";
  for (const auto& s : log)
    out << s.step << ',' << s.l_c << ',' << s.l_bce << ',' << s.w_c << ',' << s.w_bce << ','
        << s.total << '\n';
  return out.str();
}

CrossValidation cross_validate(std::span<const TrainConfig> candidates, const Dataset& records,
                               const SplitPlan& plan) {
  if (candidates.empty()) throw ConfigError("cross-validation needs at least one candidate");
  const auto train = select(records, plan.train_ids);
  if (static_cast<std::size_t>(plan.folds) > train.size())
    throw SplitError("more folds (" + std::to_string(plan.folds) + ") than training records (" +
                     std::to_string(train.size()) + ")");

  CrossValidation cv;
  for (const auto& base : candidates) {
    CandidateResult cand;
    cand.config = base;
    for (int f = 0; f < plan.folds; ++f) {
      std::vector<const CallRecord*> fit, held;
      for (const auto* r : train) (plan.fold_of.at(r->id) == f ? held : fit).push_back(r);
      if (held.empty() || fit.empty()) throw SplitError("fold " + std::to_string(f) + " is empty");
      TrainConfig cfg = base;
      cfg.seed = base.seed + static_cast<std::uint64_t>(f);
      const TrainResult tr = train_model(cfg, fit, held);
      FoldReport rep;
      rep.fold = f;
      rep.train_size = fit.size();
      rep.val_size = held.size();
      rep.best_epoch = tr.best_epoch;
      rep.metrics = evaluate(tr.params, held, Protocol::T3, cfg.threads);
      cand.folds.push_back(rep);
    }
    double sum = 0;
    for (const auto& fr : cand.folds) sum += *fr.metrics.macro_f1;
    cand.mean_macro_f1 = sum / double(cand.folds.size());
    double var = 0;
    for (const auto& fr : cand.folds) var += std::pow(*fr.metrics.macro_f1 - cand.mean_macro_f1, 2);
    cand.std_macro_f1 = std::sqrt(var / double(cand.folds.size()));
    cv.candidates.push_back(std::move(cand));
  }

  for (std::size_t c = 1; c < cv.candidates.size(); ++c)
    if (cv.candidates[c].mean_macro_f1 > cv.candidates[cv.selected].mean_macro_f1) cv.selected = c;

  const auto& sel = cv.candidates[cv.selected];
  double epochs = 0;
  for (const auto& fr : sel.folds) epochs += fr.best_epoch;
  cv.selected_epochs = std::max(1, static_cast<int>(std::lround(epochs / double(sel.folds.size()))));
  return cv;
}

std::string cross_validation_to_json(const CrossValidation& cv) {
  using nlohmann::json;
  json j;
  j["selected"] = cv.selected;
  j["selected_epochs"] = cv.selected_epochs;
  json cands = json::array();
  for (const auto& c : cv.candidates) {
    json jc;
    jc["lr"] = c.config.lr;
    jc["mean_macro_f1"] = c.mean_macro_f1;
    jc["std_macro_f1"] = c.std_macro_f1;
    json folds = json::array();
    for (const auto& f : c.folds) {
      folds.push_back({{"fold", f.fold},
                       {"train_size", f.train_size},
                       {"val_size", f.val_size},
                       {"best_epoch", f.best_epoch},
                       {"metrics", json::parse(metrics_to_json(f.metrics))}});
    }
    jc["folds"] = std::move(folds);
    cands.push_back(std::move(jc));
  }
  j["candidates"] = std::move(cands);
  return j.dump(2);
}

}  // namespace roboka
