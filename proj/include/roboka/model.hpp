#pragma once

// Full architectures assembled from the CNN heads, dense (KAN / MLP) layers
// and an optional cross-modal attention block.
//
// Every architecture is the same dataflow with different pieces present:
//
//   h_s -> head_audio -> u_s -> [proj_audio] -> r_s --+
//                                                     +-> combine -> fuse1 -> ... -> logit
//   h_t -> head_text  -> u_t -> [proj_text]  -> r_t --+
//
// where combine is concatenation, a 2-token attention block averaged over
// tokens, or the identity when only one modality is used.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "roboka/downstream.hpp"
#include "roboka/kan.hpp"
#include "roboka/losses.hpp"
#include "roboka/spline.hpp"

namespace roboka {

// Feature widths of the CNN output, the modality projections and the fusion
// hidden layer.
inline constexpr int kFeatureDim = 128;
inline constexpr int kProjectionDim = 128;
inline constexpr int kFusionDim = 128;

using Vector = Vec<double>;
using Matrix = Mat<double>;
using EmbeddingSequence = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ArchTag {
  roboka,
  concat,
  late_mlp,
  xattn,
  unimodal_audio,
  unimodal_text,
  ablation_a_kan,
  ablation_t_kan,
  ablation_at_kan_concat,
  ablation_at_mlp_sum,
  ablation_at_kan_sum,
  ablation_at_mlp_uncertainty,
  ablation_full,
};

enum class Objective { bce_only, sum_c_bce, uncertainty };

// Classifier used by the unimodal baselines.
enum class ClassifierHead { mlp, linear };

inline constexpr std::array kAllArchTags = {
    ArchTag::roboka,
    ArchTag::concat,
    ArchTag::late_mlp,
    ArchTag::xattn,
    ArchTag::unimodal_audio,
    ArchTag::unimodal_text,
    ArchTag::ablation_a_kan,
    ArchTag::ablation_t_kan,
    ArchTag::ablation_at_kan_concat,
    ArchTag::ablation_at_mlp_sum,
    ArchTag::ablation_at_kan_sum,
    ArchTag::ablation_at_mlp_uncertainty,
    ArchTag::ablation_full,
};

std::string_view to_string(ArchTag tag);
std::string_view to_string(Objective objective);
std::string_view to_string(ClassifierHead head);
ArchTag parse_arch(std::string_view name);
Objective parse_objective(std::string_view name);
ClassifierHead parse_classifier_head(std::string_view name);

bool uses_audio(ArchTag tag);
bool uses_text(ArchTag tag);
bool is_ablation(ArchTag tag);
bool needs_contrastive(Objective objective);
// The objective an architecture trains with unless told otherwise. Ablation
// rows fix their objective.
Objective default_objective(ArchTag tag);
// Throws ConfigError when the pair cannot be trained.
void validate_combination(ArchTag tag, Objective objective);

struct ModelConfig {
  ArchTag arch = ArchTag::roboka;
  Objective objective = Objective::uncertainty;
  int d_audio = 768;
  int d_text = 768;
  GridConfig grid{};
  bool kan_base = false;
  ClassifierHead unimodal_head = ClassifierHead::mlp;
  double tau = 0.1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using DenseLayer = std::variant<KanLayer<double>, MlpLayer<double>>;

// Single-head scaled dot-product self-attention over the two tokens
// (u_s, u_t) with a residual connection, averaged over tokens.
class AttentionBlock {
 public:
  struct Cache {
    Matrix tokens;  // 2 x d
    Matrix q, k, v, attn, context;
  };

  AttentionBlock() = default;
  explicit AttentionBlock(int dim);

  int dim() const { return static_cast<int>(wq_.rows()); }
  Matrix& wq() { return wq_; }
  Matrix& wk() { return wk_; }
  Matrix& wv() { return wv_; }
  Matrix& wo() { return wo_; }

  template <typename Gen>
  void init_random(Gen& rng) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(dim())));
    for (Matrix* w : {&wq_, &wk_, &wv_, &wo_})
      for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = normal(rng);
  }

  AttentionBlock zeros_like() const;

  template <typename F>
  void visit(std::string_view prefix, F&& f) {
    const std::string p(prefix);
    f(p + ".wq", wq_);
    f(p + ".wk", wk_);
    f(p + ".wv", wv_);
    f(p + ".wo", wo_);
  }
  template <typename F>
  void visit(std::string_view prefix, F&& f) const {
    const std::string p(prefix);
    f(p + ".wq", wq_);
    f(p + ".wk", wk_);
    f(p + ".wv", wv_);
    f(p + ".wo", wo_);
  }

  // Returns mean over tokens of X + softmax(Q K^T / sqrt(d)) V Wo^T.
  Vector forward(const Vector& a, const Vector& b, Cache* cache = nullptr) const;
  // Returns gradients with respect to the two input tokens.
  std::pair<Vector, Vector> backward(const Cache& cache, const Vector& upstream,
                                     AttentionBlock& grad) const;

 private:
  Matrix wq_, wk_, wv_, wo_;
};

// One call's inputs. Either sequence may be null for unimodal architectures.
struct ModelInput {
  const EmbeddingSequence* audio = nullptr;
  const EmbeddingSequence* text = nullptr;
};

struct ForwardCache {
  CnnHead<double>::Cache head_audio, head_text;
  Vector u_s, u_t;
  Vector r_s, r_t;
  AttentionBlock::Cache attention;
  std::vector<Vector> fusion_inputs;
  double logit = 0;
};

struct ForwardResult {
  double logit = 0;
  Vector u_s;  // empty when the modality is unused
  Vector u_t;
};

class ModelParams {
 public:
  ModelParams() = default;
  // Zero-initialized parameters laid out for cfg.
  explicit ModelParams(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }

  std::optional<CnnHead<double>> head_audio, head_text;
  std::optional<DenseLayer> proj_audio, proj_text;
  std::optional<AttentionBlock> attention;
  std::vector<DenseLayer> fusion;
  // (log sigma_C, log sigma_BCE)
  Eigen::Vector2d log_sigma = Eigen::Vector2d::Zero();

  UncertaintyParams<double> uncertainty() const { return {log_sigma[0], log_sigma[1]}; }

  ModelParams zeros_like() const;

  // Visits every learnable tensor in a fixed declared order as
  // f(name, Eigen::Matrix or Vector&).
  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  std::size_t num_params() const;

  ForwardResult forward(const ModelInput& in, ForwardCache* cache = nullptr) const;
  double logit(const ModelInput& in) const { return forward(in).logit; }

  // Back-propagates d logit plus optional direct gradients on u_s / u_t
  // (from the contrastive term) into grad.
  void backward(const ForwardCache& cache, double d_logit, const Vector* d_u_s,
                const Vector* d_u_t, ModelParams& grad) const;

  // this += scale * other, tensor by tensor.
  void add_scaled(const ModelParams& other, double scale);

 private:
  ModelConfig config_{};
};

// Random initialization for cfg; identical (cfg, seed) give identical
// parameters.
ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

// Named views of the model for the architecture-specific entry points.
ForwardResult roboka_forward(const ModelParams& p, const EmbeddingSequence& h_s,
                             const EmbeddingSequence& h_t);
double baseline_forward(const ModelParams& p, const ModelInput& in);
double ablation_forward(const ModelParams& p, const ModelInput& in);

// ---------------------------------------------------------------------------
// Batch objective

struct LabeledInput {
  ModelInput input;
  int label = 0;
};

struct BatchLoss {
  double total = 0;
  double l_c = 0;
  double l_bce = 0;
  double weight_c = 0;
  double weight_bce = 0;
  std::vector<double> logits;
};

// Total training objective of the model's configured Objective over one
// minibatch: mean BCE, symmetric InfoNCE on (u_s, u_t) and their
// combination. When grad is non-null it receives dL/dparams (it must be
// shaped like params, e.g. params.zeros_like(), and is overwritten).
//
// Results are bitwise independent of `threads`: examples are forwarded
// independently and gradients are reduced over a fixed shard layout.
BatchLoss batch_loss(const ModelParams& params, std::span<const LabeledInput> batch,
                     ModelParams* grad, int threads = 1);

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "RBKA" | u16 version | u32 header length | JSON header |
//   f64 parameter blocks (little-endian, column-major, declared order) |
//   u32 CRC32 of all preceding bytes

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Template definitions

namespace detail {
template <typename F>
void visit_dense(DenseLayer& layer, std::string_view name, F&& f) {
  std::visit([&](auto& l) { l.visit(name, f); }, layer);
}
template <typename F>
void visit_dense(const DenseLayer& layer, std::string_view name, F&& f) {
  std::visit([&](const auto& l) { l.visit(name, f); }, layer);
}
}  // namespace detail

template <typename F>
void ModelParams::visit(F&& f) {
  if (head_audio) head_audio->visit("head_audio", f);
  if (head_text) head_text->visit("head_text", f);
  if (proj_audio) detail::visit_dense(*proj_audio, "proj_audio", f);
  if (proj_text) detail::visit_dense(*proj_text, "proj_text", f);
  if (attention) attention->visit("xattn", f);
  for (std::size_t i = 0; i < fusion.size(); ++i)
    detail::visit_dense(fusion[i], "fuse" + std::to_string(i + 1), f);
  f(std::string("log_sigma"), log_sigma);
}

template <typename F>
void ModelParams::visit(F&& f) const {
  if (head_audio) head_audio->visit("head_audio", f);
  if (head_text) head_text->visit("head_text", f);
  if (proj_audio) detail::visit_dense(*proj_audio, "proj_audio", f);
  if (proj_text) detail::visit_dense(*proj_text, "proj_text", f);
  if (attention) attention->visit("xattn", f);
  for (std::size_t i = 0; i < fusion.size(); ++i)
    detail::visit_dense(fusion[i], "fuse" + std::to_string(i + 1), f);
  f(std::string("log_sigma"), log_sigma);
}

// Flat list of (name, pointer, size) views over a model's tensors.
struct ParamView {
  std::string name;
  double* data;
  Eigen::Index size;
  Eigen::Index rows;
  Eigen::Index cols;
};
std::vector<ParamView> param_views(ModelParams& params);

}  // namespace roboka
