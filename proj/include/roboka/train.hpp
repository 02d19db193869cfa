#pragma once

// Optimization, model selection by k-fold cross-validation, and evaluation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roboka/data.hpp"
#include "roboka/model.hpp"

namespace roboka {

// ---------------------------------------------------------------------------
// Metrics. Class 1 (unwanted) is the positive class. Empty denominators give
// 0 for recall / precision, and F1 is 0 when precision + recall is 0.

struct MetricsReport {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  // Percentages. Macro metrics are absent under positive-only testing (T4).
  std::optional<double> macro_recall;
  std::optional<double> macro_f1;
  double unwanted_recall = 0;

  long total() const { return tp + fp + tn + fn; }
};

MetricsReport metrics_from_counts(long tp, long fp, long tn, long fn, bool recall_only = false);
MetricsReport metrics_from_predictions(std::span<const int> labels, std::span<const int> predicted,
                                       bool recall_only = false);
std::string metrics_to_json(const MetricsReport& report, std::optional<Protocol> protocol = {});

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  ModelConfig model{};  // d_audio / d_text are taken from the data
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 32;
  int epochs = 50;
  int patience = 10;   // early stop on validation macro-F1
  double clip_norm = 5.0;
  double log_sigma_bound = 10.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct StepLog {
  long step = 0;
  double l_c = 0, l_bce = 0, w_c = 0, w_bce = 0, total = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<StepLog> log;
  int epochs_run = 0;
  int best_epoch = 0;  // epochs trained by the returned parameters
  std::optional<double> best_val_f1;
};

using RecordRefs = std::span<const CallRecord* const>;

// Adam on every parameter (log sigma included) with global-norm gradient
// clipping. With a validation set the parameters from the epoch with the best
// validation macro-F1 are returned and training stops after `patience`
// epochs without improvement.
TrainResult train_model(const TrainConfig& cfg, RecordRefs train, RecordRefs val = {});

// 1 when the logit is >= 0 (sigma(logit) >= 0.5).
std::vector<int> predict(const ModelParams& params, RecordRefs records, int threads = 1);

// Throws InputError on an empty test set.
MetricsReport evaluate(const ModelParams& params, RecordRefs test, Protocol protocol,
                       int threads = 1);

std::string training_log_csv(std::span<const StepLog> log);

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldReport {
  int fold = 0;
  std::size_t train_size = 0, val_size = 0;
  int best_epoch = 0;
  MetricsReport metrics;
};

struct CandidateResult {
  TrainConfig config;
  std::vector<FoldReport> folds;
  double mean_macro_f1 = 0;
  double std_macro_f1 = 0;  // population standard deviation over folds
};

struct CrossValidation {
  std::vector<CandidateResult> candidates;
  std::size_t selected = 0;  // best mean validation macro-F1, first on ties
  // Epoch budget for the final fit: mean best epoch of the selected candidate.
  int selected_epochs = 0;
};

// Trains one model per fold of `plan` for each candidate configuration (fold
// f uses seed = candidate.seed + f) and selects by mean validation macro-F1.
CrossValidation cross_validate(std::span<const TrainConfig> candidates, const Dataset& records,
                               const SplitPlan& plan);

std::string cross_validation_to_json(const CrossValidation& cv);

}  // namespace roboka
