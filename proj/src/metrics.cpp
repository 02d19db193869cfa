#include <json.hpp>

#include "roboka/errors.hpp"
#include "roboka/train.hpp"

namespace roboka {

namespace {

double ratio(long num, long den) { return den == 0 ? 0.0 : double(num) / double(den); }

double f1(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

}  // namespace

MetricsReport metrics_from_counts(long tp, long fp, long tn, long fn, bool recall_only) {
  if (tp < 0 || fp < 0 || tn < 0 || fn < 0) throw InputError("confusion counts must be >= 0");
  MetricsReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  const double recall_pos = ratio(tp, tp + fn);
  r.unwanted_recall = 100.0 * recall_pos;
  if (recall_only) return r;

  const double recall_neg = ratio(tn, tn + fp);
  const double prec_pos = ratio(tp, tp + fp);
  const double prec_neg = ratio(tn, tn + fn);
  r.macro_recall = 100.0 * 0.5 * (recall_pos + recall_neg);
  r.macro_f1 = 100.0 * 0.5 * (f1(prec_pos, recall_pos) + f1(prec_neg, recall_neg));
  return r;
}

MetricsReport metrics_from_predictions(std::span<const int> labels, std::span<const int> predicted,
                                       bool recall_only) {
  if (labels.size() != predicted.size()) throw ShapeError("labels and predictions differ in length");
  long tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) (predicted[i] == 1 ? tp : fn)++;
    else (predicted[i] == 1 ? fp : tn)++;
  }
  return metrics_from_counts(tp, fp, tn, fn, recall_only);
}

std::string metrics_to_json(const MetricsReport& r, std::optional<Protocol> protocol) {
  nlohmann::json j;
  if (protocol) j["protocol"] = to_string(*protocol);
  j["n"] = r.total();
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["tn"] = r.tn;
  j["fn"] = r.fn;
  j["macro_recall"] = r.macro_recall ? nlohmann::json(*r.macro_recall) : nlohmann::json(nullptr);
  j["macro_f1"] = r.macro_f1 ? nlohmann::json(*r.macro_f1) : nlohmann::json(nullptr);
  j["unwanted_recall"] = r.unwanted_recall;
  return j.dump(2);
}

}  // namespace roboka
