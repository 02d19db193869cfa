#include "roboka/model.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "roboka/errors.hpp"
#include "roboka/parallel.hpp"

namespace roboka {

namespace {

struct ArchName {
  ArchTag tag;
  std::string_view name;
};

constexpr std::array kArchNames = {
    ArchName{ArchTag::roboka, "roboka"},
    ArchName{ArchTag::concat, "concat"},
    ArchName{ArchTag::late_mlp, "late_mlp"},
    ArchName{ArchTag::xattn, "xattn"},
    ArchName{ArchTag::unimodal_audio, "unimodal_audio"},
    ArchName{ArchTag::unimodal_text, "unimodal_text"},
    ArchName{ArchTag::ablation_a_kan, "ablation_a_kan"},
    ArchName{ArchTag::ablation_t_kan, "ablation_t_kan"},
    ArchName{ArchTag::ablation_at_kan_concat, "ablation_at_kan_concat"},
    ArchName{ArchTag::ablation_at_mlp_sum, "ablation_at_mlp_sum"},
    ArchName{ArchTag::ablation_at_kan_sum, "ablation_at_kan_sum"},
    ArchName{ArchTag::ablation_at_mlp_uncertainty, "ablation_at_mlp_uncertainty"},
    ArchName{ArchTag::ablation_full, "ablation_full"},
};

KanLayer<double> kan(int d_in, int d_out, const ModelConfig& cfg) {
  return KanLayer<double>(d_in, d_out, cfg.grid, cfg.kan_base);
}

MlpLayer<double> mlp(int d_in, int d_out, Activation act) { return MlpLayer<double>(d_in, d_out, act); }

Vector dense_forward(const DenseLayer& layer, const Vector& x) {
  return std::visit([&](const auto& l) { return l.forward(x); }, layer);
}

Vector dense_backward(const DenseLayer& layer, const Vector& x, const Vector& upstream,
                      DenseLayer& grad) {
  return std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        return l.backward(x, upstream, std::get<L>(grad));
      },
      layer);
}

DenseLayer dense_zeros_like(const DenseLayer& layer) {
  return std::visit([](const auto& l) -> DenseLayer { return l.zeros_like(); }, layer);
}

}  // namespace

std::string_view to_string(ArchTag tag) {
  for (const auto& a : kArchNames)
    if (a.tag == tag) return a.name;
  return "?";
}

ArchTag parse_arch(std::string_view name) {
  for (const auto& a : kArchNames)
    if (a.name == name) return a.tag;
  throw ConfigError("unknown architecture tag '" + std::string(name) + "'");
}

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::bce_only: return "bce_only";
    case Objective::sum_c_bce: return "sum_c_bce";
    case Objective::uncertainty: return "uncertainty";
  }
  return "?";
}

Objective parse_objective(std::string_view name) {
  for (Objective o : {Objective::bce_only, Objective::sum_c_bce, Objective::uncertainty})
    if (to_string(o) == name) return o;
  throw ConfigError("unknown objective '" + std::string(name) + "'");
}

std::string_view to_string(ClassifierHead head) {
  return head == ClassifierHead::mlp ? "mlp" : "linear";
}

ClassifierHead parse_classifier_head(std::string_view name) {
  if (name == "mlp") return ClassifierHead::mlp;
  if (name == "linear") return ClassifierHead::linear;
  throw ConfigError("unknown classifier head '" + std::string(name) + "'");
}

bool uses_audio(ArchTag tag) {
  return tag != ArchTag::unimodal_text && tag != ArchTag::ablation_t_kan;
}

bool uses_text(ArchTag tag) {
  return tag != ArchTag::unimodal_audio && tag != ArchTag::ablation_a_kan;
}

bool is_ablation(ArchTag tag) {
  switch (tag) {
    case ArchTag::ablation_a_kan:
    case ArchTag::ablation_t_kan:
    case ArchTag::ablation_at_kan_concat:
    case ArchTag::ablation_at_mlp_sum:
    case ArchTag::ablation_at_kan_sum:
    case ArchTag::ablation_at_mlp_uncertainty:
    case ArchTag::ablation_full:
      return true;
    default:
      return false;
  }
}

bool needs_contrastive(Objective objective) { return objective != Objective::bce_only; }

Objective default_objective(ArchTag tag) {
  switch (tag) {
    case ArchTag::roboka:
    case ArchTag::ablation_full:
    case ArchTag::ablation_at_mlp_uncertainty:
      return Objective::uncertainty;
    case ArchTag::ablation_at_mlp_sum:
    case ArchTag::ablation_at_kan_sum:
      return Objective::sum_c_bce;
    default:
      return Objective::bce_only;
  }
}

void validate_combination(ArchTag tag, Objective objective) {
  if (needs_contrastive(objective) && !(uses_audio(tag) && uses_text(tag)))
    throw ConfigError("architecture '" + std::string(to_string(tag)) +
                      "' uses a single modality and cannot train with contrastive objective '" +
                      std::string(to_string(objective)) + "'");
  if (is_ablation(tag) && objective != default_objective(tag))
    throw ConfigError("ablation '" + std::string(to_string(tag)) + "' is defined with objective '" +
                      std::string(to_string(default_objective(tag))) + "', got '" +
                      std::string(to_string(objective)) + "'");
}

// ---------------------------------------------------------------------------
// AttentionBlock

AttentionBlock::AttentionBlock(int dim)
    : wq_(Matrix::Zero(dim, dim)),
      wk_(Matrix::Zero(dim, dim)),
      wv_(Matrix::Zero(dim, dim)),
      wo_(Matrix::Zero(dim, dim)) {}

AttentionBlock AttentionBlock::zeros_like() const { return AttentionBlock(dim()); }

Vector AttentionBlock::forward(const Vector& a, const Vector& b, Cache* cache) const {
  if (a.size() != dim() || b.size() != dim()) throw ShapeError("attention token has wrong width");
  Cache local;
  Cache& c = cache ? *cache : local;
  c.tokens.resize(2, dim());
  c.tokens.row(0) = a.transpose();
  c.tokens.row(1) = b.transpose();
  c.q.noalias() = c.tokens * wq_.transpose();
  c.k.noalias() = c.tokens * wk_.transpose();
  c.v.noalias() = c.tokens * wv_.transpose();
  const Matrix scores = c.q * c.k.transpose() / std::sqrt(double(dim()));
  c.attn.resize(2, 2);
  for (int i = 0; i < 2; ++i) {
    const double m = scores.row(i).maxCoeff();
    const Eigen::RowVector2d e = (scores.row(i).array() - m).exp();
    c.attn.row(i) = e / e.sum();
  }
  c.context.noalias() = c.attn * c.v;
  const Matrix out = c.tokens + c.context * wo_.transpose();
  return out.colwise().mean().transpose();
}

std::pair<Vector, Vector> AttentionBlock::backward(const Cache& c, const Vector& upstream,
                                                   AttentionBlock& grad) const {
  if (upstream.size() != dim()) throw ShapeError("attention upstream has wrong width");
  Matrix d_out(2, dim());
  d_out.row(0) = 0.5 * upstream.transpose();
  d_out.row(1) = d_out.row(0);

  Matrix d_tokens = d_out;  // residual path
  grad.wo_.noalias() += d_out.transpose() * c.context;
  const Matrix d_context = d_out * wo_;
  const Matrix d_attn = d_context * c.v.transpose();
  const Matrix d_v = c.attn.transpose() * d_context;

  Matrix d_scores(2, 2);
  for (int i = 0; i < 2; ++i) {
    const double dot = c.attn.row(i).dot(d_attn.row(i));
    d_scores.row(i) = c.attn.row(i).array() * (d_attn.row(i).array() - dot);
  }
  d_scores /= std::sqrt(double(dim()));
  const Matrix d_q = d_scores * c.k;
  const Matrix d_k = d_scores.transpose() * c.q;

  grad.wq_.noalias() += d_q.transpose() * c.tokens;
  grad.wk_.noalias() += d_k.transpose() * c.tokens;
  grad.wv_.noalias() += d_v.transpose() * c.tokens;
  d_tokens.noalias() += d_q * wq_ + d_k * wk_ + d_v * wv_;
  return {d_tokens.row(0).transpose(), d_tokens.row(1).transpose()};
}

// ---------------------------------------------------------------------------
// ModelParams

ModelParams::ModelParams(const ModelConfig& cfg) : config_(cfg) {
  const ArchTag tag = cfg.arch;
  if (uses_audio(tag)) head_audio.emplace(cfg.d_audio);
  if (uses_text(tag)) head_text.emplace(cfg.d_text);

  auto both_proj = [&](const DenseLayer& layer) {
    proj_audio = layer;
    proj_text = layer;
  };

  switch (tag) {
    case ArchTag::roboka:
    case ArchTag::ablation_full:
    case ArchTag::ablation_at_kan_sum:
      both_proj(kan(kFeatureDim, kProjectionDim, cfg));
      fusion.emplace_back(kan(2 * kProjectionDim, kFusionDim, cfg));
      fusion.emplace_back(kan(kFusionDim, 1, cfg));
      break;
    case ArchTag::late_mlp:
    case ArchTag::ablation_at_mlp_sum:
    case ArchTag::ablation_at_mlp_uncertainty:
      both_proj(mlp(kFeatureDim, kProjectionDim, Activation::relu));
      fusion.emplace_back(mlp(2 * kProjectionDim, kFusionDim, Activation::relu));
      fusion.emplace_back(mlp(kFusionDim, 1, Activation::identity));
      break;
    case ArchTag::concat:
      fusion.emplace_back(mlp(2 * kFeatureDim, 1, Activation::identity));
      break;
    case ArchTag::xattn:
      attention.emplace(kFeatureDim);
      fusion.emplace_back(mlp(kFeatureDim, 1, Activation::identity));
      break;
    case ArchTag::unimodal_audio:
    case ArchTag::unimodal_text:
      if (cfg.unimodal_head == ClassifierHead::mlp)
        fusion.emplace_back(mlp(kFeatureDim, kFusionDim, Activation::relu));
      fusion.emplace_back(
          mlp(cfg.unimodal_head == ClassifierHead::mlp ? kFusionDim : kFeatureDim, 1,
              Activation::identity));
      break;
    case ArchTag::ablation_a_kan:
      proj_audio = kan(kFeatureDim, kProjectionDim, cfg);
      fusion.emplace_back(kan(kProjectionDim, 1, cfg));
      break;
    case ArchTag::ablation_t_kan:
      proj_text = kan(kFeatureDim, kProjectionDim, cfg);
      fusion.emplace_back(kan(kProjectionDim, 1, cfg));
      break;
    case ArchTag::ablation_at_kan_concat:
      both_proj(kan(kFeatureDim, kProjectionDim, cfg));
      fusion.emplace_back(kan(2 * kProjectionDim, 1, cfg));
      break;
  }
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  z.config_ = config_;
  if (head_audio) z.head_audio = head_audio->zeros_like();
  if (head_text) z.head_text = head_text->zeros_like();
  if (proj_audio) z.proj_audio = dense_zeros_like(*proj_audio);
  if (proj_text) z.proj_text = dense_zeros_like(*proj_text);
  if (attention) z.attention = attention->zeros_like();
  for (const auto& l : fusion) z.fusion.push_back(dense_zeros_like(l));
  z.log_sigma.setZero();
  return z;
}

std::size_t ModelParams::num_params() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

std::vector<ParamView> param_views(ModelParams& params) {
  std::vector<ParamView> out;
  params.visit([&out](const std::string& name, auto& m) {
    out.push_back({name, m.data(), m.size(), m.rows(), m.cols()});
  });
  return out;
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
  auto mine = param_views(*this);
  auto theirs = param_views(const_cast<ModelParams&>(other));
  if (mine.size() != theirs.size()) throw ShapeError("add_scaled on differently shaped models");
  for (std::size_t k = 0; k < mine.size(); ++k) {
    if (mine[k].size != theirs[k].size) throw ShapeError("add_scaled tensor size mismatch");
    Eigen::Map<Eigen::VectorXd>(mine[k].data, mine[k].size) +=
        scale * Eigen::Map<const Eigen::VectorXd>(theirs[k].data, theirs[k].size);
  }
}

ForwardResult ModelParams::forward(const ModelInput& in, ForwardCache* cache) const {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  const std::string arch(to_string(config_.arch));

  if (head_audio) {
    if (!in.audio) throw ConfigError("architecture '" + arch + "' needs an audio sequence");
    c.u_s = head_audio->forward(*in.audio, &c.head_audio);
    c.r_s = proj_audio ? dense_forward(*proj_audio, c.u_s) : c.u_s;
  }
  if (head_text) {
    if (!in.text) throw ConfigError("architecture '" + arch + "' needs a text sequence");
    c.u_t = head_text->forward(*in.text, &c.head_text);
    c.r_t = proj_text ? dense_forward(*proj_text, c.u_t) : c.u_t;
  }

  Vector z;
  if (attention) {
    z = attention->forward(c.r_s, c.r_t, &c.attention);
  } else if (head_audio && head_text) {
    z.resize(c.r_s.size() + c.r_t.size());
    z << c.r_s, c.r_t;
  } else {
    z = head_audio ? c.r_s : c.r_t;
  }

  c.fusion_inputs.clear();
  for (const auto& layer : fusion) {
    c.fusion_inputs.push_back(z);
    z = dense_forward(layer, z);
  }
  c.logit = z[0];
  return {c.logit, c.u_s, c.u_t};
}

void ModelParams::backward(const ForwardCache& c, double d_logit, const Vector* d_u_s,
                           const Vector* d_u_t, ModelParams& grad) const {
  Vector g = Vector::Constant(1, d_logit);
  for (std::size_t k = fusion.size(); k-- > 0;)
    g = dense_backward(fusion[k], c.fusion_inputs[k], g, grad.fusion[k]);

  Vector g_rs, g_rt;
  if (attention) {
    std::tie(g_rs, g_rt) = attention->backward(c.attention, g, *grad.attention);
  } else if (head_audio && head_text) {
    g_rs = g.head(c.r_s.size());
    g_rt = g.tail(c.r_t.size());
  } else if (head_audio) {
    g_rs = g;
  } else {
    g_rt = g;
  }

  if (head_audio) {
    Vector g_us = proj_audio ? dense_backward(*proj_audio, c.u_s, g_rs, *grad.proj_audio) : g_rs;
    if (d_u_s) g_us += *d_u_s;
    head_audio->backward(c.head_audio, g_us, *grad.head_audio);
  }
  if (head_text) {
    Vector g_ut = proj_text ? dense_backward(*proj_text, c.u_t, g_rt, *grad.proj_text) : g_rt;
    if (d_u_t) g_ut += *d_u_t;
    head_text->backward(c.head_text, g_ut, *grad.head_text);
  }
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_combination(cfg.arch, cfg.objective);
  ModelParams p(cfg);
  std::mt19937_64 rng(seed);
  if (p.head_audio) p.head_audio->init_random(rng);
  if (p.head_text) p.head_text->init_random(rng);
  auto init_dense = [&rng](DenseLayer& l) { std::visit([&rng](auto& x) { x.init_random(rng); }, l); };
  if (p.proj_audio) init_dense(*p.proj_audio);
  if (p.proj_text) init_dense(*p.proj_text);
  if (p.attention) p.attention->init_random(rng);
  for (auto& l : p.fusion) init_dense(l);
  return p;
}

ForwardResult roboka_forward(const ModelParams& p, const EmbeddingSequence& h_s,
                             const EmbeddingSequence& h_t) {
  const ArchTag tag = p.config().arch;
  if (tag != ArchTag::roboka && tag != ArchTag::ablation_full)
    throw ConfigError("roboka_forward called on architecture '" + std::string(to_string(tag)) + "'");
  return p.forward({&h_s, &h_t});
}

double baseline_forward(const ModelParams& p, const ModelInput& in) {
  switch (p.config().arch) {
    case ArchTag::concat:
    case ArchTag::late_mlp:
    case ArchTag::xattn:
    case ArchTag::unimodal_audio:
    case ArchTag::unimodal_text:
      return p.forward(in).logit;
    default:
      throw ConfigError("baseline_forward called on architecture '" +
                        std::string(to_string(p.config().arch)) + "'");
  }
}

double ablation_forward(const ModelParams& p, const ModelInput& in) {
  if (!is_ablation(p.config().arch))
    throw ConfigError("ablation_forward called on architecture '" +
                      std::string(to_string(p.config().arch)) + "'");
  return p.forward(in).logit;
}

// ---------------------------------------------------------------------------
// Batch objective

namespace {
// Fixed gradient shard count; reduction order never depends on thread count.
constexpr int kGradShards = 4;
}  // namespace

BatchLoss batch_loss(const ModelParams& params, std::span<const LabeledInput> batch,
                     ModelParams* grad, int threads) {
  const int n = static_cast<int>(batch.size());
  if (n == 0) throw InputError("batch_loss on an empty batch");
  const ModelConfig& cfg = params.config();

  std::vector<ForwardCache> caches(n);
  parallel_for(n, threads, [&](int i) { params.forward(batch[i].input, &caches[i]); });

  BatchLoss out;
  out.logits.resize(n);
  std::vector<double> d_logit(n);
  for (int i = 0; i < n; ++i) {
    out.logits[i] = caches[i].logit;
    const auto b = bce(caches[i].logit, batch[i].label);
    out.l_bce += b.loss;
    d_logit[i] = b.grad_logit / n;
  }
  out.l_bce /= n;

  const bool contrastive = needs_contrastive(cfg.objective);
  InfoNceResult<double> nce;
  if (contrastive) {
    Matrix u_s(n, kFeatureDim), u_t(n, kFeatureDim);
    for (int i = 0; i < n; ++i) {
      u_s.row(i) = caches[i].u_s.transpose();
      u_t.row(i) = caches[i].u_t.transpose();
    }
    nce = infonce<double>(u_s, u_t, {cfg.tau});
    out.l_c = nce.loss;
  }

  Eigen::Vector2d d_log_sigma = Eigen::Vector2d::Zero();
  switch (cfg.objective) {
    case Objective::bce_only:
      out.total = out.l_bce;
      out.weight_c = 0;
      out.weight_bce = 1;
      break;
    case Objective::sum_c_bce:
      out.total = out.l_c + out.l_bce;
      out.weight_c = 1;
      out.weight_bce = 1;
      break;
    case Objective::uncertainty: {
      const auto comb = combined_loss(out.l_c, out.l_bce, params.uncertainty());
      out.total = comb.loss;
      out.weight_c = comb.weight_c;
      out.weight_bce = comb.weight_bce;
      d_log_sigma = {comb.grad_log_sigma_c, comb.grad_log_sigma_bce};
      break;
    }
  }

  if (!grad) return out;

  const int shards = std::min(kGradShards, n);
  std::vector<ModelParams> partial(shards);
  parallel_for(shards, threads, [&](int s) {
    partial[s] = params.zeros_like();
    const int lo = s * n / shards, hi = (s + 1) * n / shards;
    for (int i = lo; i < hi; ++i) {
      Vector du_s, du_t;
      if (contrastive) {
        du_s = out.weight_c * nce.grad_s.row(i).transpose();
        du_t = out.weight_c * nce.grad_t.row(i).transpose();
      }
      params.backward(caches[i], out.weight_bce * d_logit[i], contrastive ? &du_s : nullptr,
                      contrastive ? &du_t : nullptr, partial[s]);
    }
  });
  *grad = std::move(partial[0]);
  for (int s = 1; s < shards; ++s) grad->add_scaled(partial[s], 1.0);
  grad->log_sigma = d_log_sigma;
  return out;
}

}  // namespace roboka
