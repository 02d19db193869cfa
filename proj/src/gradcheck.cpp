#include "roboka/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace roboka {

double relative_error(double analytic, double numeric, double abs_floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

struct Instance {
  std::vector<EmbeddingSequence> audio, text;
  std::vector<LabeledInput> batch;
};

Instance random_instance(const ModelConfig& cfg, int n, std::mt19937_64& rng) {
  Instance inst;
  std::uniform_int_distribution<int> len(5, 12);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::bernoulli_distribution coin(0.5);
  auto seq = [&](int d) {
    EmbeddingSequence s(len(rng), d);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = normal(rng);
    return s;
  };
  inst.audio.reserve(n);
  inst.text.reserve(n);
  for (int i = 0; i < n; ++i) {
    inst.audio.push_back(seq(cfg.d_audio));
    inst.text.push_back(seq(cfg.d_text));
  }
  for (int i = 0; i < n; ++i) {
    LabeledInput li;
    if (uses_audio(cfg.arch)) li.input.audio = &inst.audio[i];
    if (uses_text(cfg.arch)) li.input.text = &inst.text[i];
    li.label = coin(rng) ? 1 : 0;
    inst.batch.push_back(li);
  }
  return inst;
}

}  // namespace

GradcheckReport gradcheck(ArchTag arch, std::uint64_t seed, const GradcheckOptions& opts) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.objective = default_objective(arch);
  cfg.d_audio = opts.d_emb;
  cfg.d_text = opts.d_emb;

  GradcheckReport report;
  report.arch = arch;
  report.instances = opts.instances;
  std::map<std::string, GroupCheck> groups;
  std::vector<std::string> order;

  for (int inst_id = 0; inst_id < opts.instances; ++inst_id) {
    std::mt19937_64 rng(seed * 7919 + static_cast<std::uint64_t>(inst_id));
    ModelParams params = init_model(cfg, rng());
    if (cfg.objective == Objective::uncertainty) {
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      params.log_sigma = {u(rng), u(rng)};
    }
    // Zero biases would put zero-padded frames exactly on a ReLU kink.
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (auto& v : param_views(params))
      if (v.name.ends_with(".bias"))
        for (Eigen::Index i = 0; i < v.size; ++i) v.data[i] += jitter(rng);
    const Instance inst = random_instance(cfg, opts.batch, rng);

    ModelParams grad = params.zeros_like();
    const double f0 = batch_loss(params, inst.batch, &grad).total;
    auto pv = param_views(params);
    auto gv = param_views(grad);

    for (std::size_t k = 0; k < pv.size(); ++k) {
      if (!groups.count(pv[k].name)) order.push_back(pv[k].name);
      GroupCheck& gc = groups[pv[k].name];
      gc.name = pv[k].name;

      const Eigen::Map<Eigen::VectorXd> g(gv[k].data, gv[k].size);
      std::vector<Eigen::Index> entries;
      Eigen::Index largest = 0;
      g.cwiseAbs().maxCoeff(&largest);
      entries.push_back(largest);
      std::uniform_int_distribution<Eigen::Index> pick(0, pv[k].size - 1);
      for (int e = 0; e < opts.entries_per_group; ++e) entries.push_back(pick(rng));

      for (Eigen::Index idx : entries) {
        double& w = pv[k].data[idx];
        const double saved = w;
        const double analytic = g[idx];
        // A kink inside (w - h, w + h) spoils the central difference; shrink
        // the step before calling the entry non-smooth.
        double err = 0, fwd = 0, bwd = 0;
        for (double step = opts.step; step >= opts.step * 1e-2; step *= 0.1) {
          w = saved + step;
          const double fp = batch_loss(params, inst.batch, nullptr).total;
          w = saved - step;
          const double fm = batch_loss(params, inst.batch, nullptr).total;
          w = saved;
          err = relative_error(analytic, (fp - fm) / (2 * step), opts.abs_floor);
          fwd = (fp - f0) / step;
          bwd = (f0 - fm) / step;
          if (err < opts.tolerance) break;
        }
        if (err >= opts.tolerance &&
            std::abs(fwd - bwd) > 1e-3 * std::max(std::abs(fwd), std::abs(bwd)) + 1e-6) {
          ++gc.nonsmooth;
          continue;
        }
        ++gc.checked;
        if (err >= opts.tolerance) ++gc.failures;
        gc.max_rel_err = std::max(gc.max_rel_err, err);
      }
    }
  }

  report.passed = true;
  for (const auto& name : order) {
    const GroupCheck& gc = groups[name];
    // A few kinks are expected; a group that is mostly non-smooth is not verified.
    if (gc.failures > 0 || gc.nonsmooth * 4 > gc.checked) report.passed = false;
    report.max_rel_err = std::max(report.max_rel_err, gc.max_rel_err);
    report.groups.push_back(gc);
  }
  return report;
}

}  // namespace roboka
