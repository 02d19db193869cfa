#include <cmath>
#include <cstdio>
#include <random>

#include "roboka/data.hpp"
#include "roboka/errors.hpp"

namespace roboka {

namespace {

std::string padded(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05d", prefix, i);
  return buf;
}

Eigen::VectorXd gaussian_vector(int n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

Eigen::MatrixXd gaussian_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Per-modality generative parameters.
struct Modality {
  std::array<Eigen::VectorXd, 2> center;  // class means
  Eigen::VectorXd midpoint;               // used when the modality is dropped
  Eigen::MatrixXd latent_map;             // d x latent_dim
  Eigen::VectorXd ood_shift;              // extra offset of dncr records

  Modality(int d, int latent_dim, std::mt19937_64& rng) {
    center[0] = gaussian_vector(d, 1.0, rng);
    center[1] = gaussian_vector(d, 1.0, rng);
    midpoint = 0.5 * (center[0] + center[1]);
    latent_map = gaussian_matrix(d, latent_dim, 1.0 / std::sqrt(double(latent_dim)), rng);
    ood_shift = gaussian_vector(d, 0.5, rng);
  }

  EmbeddingSequence sample(const Eigen::VectorXd& mean, const Eigen::VectorXd& latent, int frames,
                           double noise, std::mt19937_64& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::VectorXd base = mean + noise * (latent_map * latent);
    EmbeddingSequence out(frames, base.size());
    for (int t = 0; t < frames; ++t)
      for (Eigen::Index c = 0; c < base.size(); ++c)
        out(t, c) = static_cast<float>(base[c] + 0.5 * noise * normal(rng));
    return out;
  }
};

}  // namespace

// Each record draws a shared latent z and private latents z_s, z_t; the
// modality latents are coupling * z + sqrt(1 - coupling^2) * z_private, so
// their correlation is coupling^2 and vanishes at coupling = 0. Frames are
// the class center (or the class midpoint for a dropped modality) plus
// noise * (latent_map * latent + 0.5 * white noise).
Dataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.n_per_class < 1) throw InputError("n must be ≥ 1");
  if (cfg.d_audio < 1 || cfg.d_text < 1) throw InputError("embedding widths must be >= 1");
  if (cfg.t_min < 1 || cfg.t_max < cfg.t_min) throw InputError("need 1 <= t_min <= t_max");
  if (!(cfg.coupling >= 0.0 && cfg.coupling <= 1.0)) throw InputError("coupling must be in [0, 1]");
  if (!(cfg.noise >= 0.0)) throw InputError("noise must be >= 0");
  if (!(cfg.modality_dropout >= 0.0 && cfg.modality_dropout <= 1.0))
    throw InputError("modality dropout must be in [0, 1]");
  if (cfg.n_dncr < 0) throw InputError("dncr count must be >= 0");
  if (cfg.latent_dim < 1) throw InputError("latent dimension must be >= 1");

  std::mt19937_64 master(cfg.seed);
  std::mt19937_64 param_rng(master());
  std::mt19937_64 record_rng(master());
  const Modality audio(cfg.d_audio, cfg.latent_dim, param_rng);
  const Modality text(cfg.d_text, cfg.latent_dim, param_rng);

  std::uniform_int_distribution<int> frames(cfg.t_min, cfg.t_max);
  std::uniform_int_distribution<int> speaker_pick(0, kSynthSpeakers - 1);
  std::uniform_int_distribution<int> emotion_pick(0, static_cast<int>(kSynthEmotions.size()) - 1);
  std::bernoulli_distribution drop(cfg.modality_dropout);
  const double private_weight = std::sqrt(1.0 - cfg.coupling * cfg.coupling);

  auto latents = [&](std::mt19937_64& rng) {
    const Eigen::VectorXd shared = gaussian_vector(cfg.latent_dim, 1.0, rng);
    const Eigen::VectorXd ls = cfg.coupling * shared + private_weight * gaussian_vector(cfg.latent_dim, 1.0, rng);
    const Eigen::VectorXd lt = cfg.coupling * shared + private_weight * gaussian_vector(cfg.latent_dim, 1.0, rng);
    return std::pair{ls, lt};
  };

  Dataset out;
  out.reserve(2 * static_cast<std::size_t>(cfg.n_per_class) + static_cast<std::size_t>(cfg.n_dncr));
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < cfg.n_per_class; ++i) {
      CallRecord r;
      r.id = padded(label ? "unwanted_" : "legit_", i);
      r.label = label;
      const int speaker = speaker_pick(record_rng);
      r.speaker = padded("spk", speaker);
      r.engine = kSynthEngines[static_cast<std::size_t>(speaker) % kSynthEngines.size()];
      r.emotion = kSynthEmotions[static_cast<std::size_t>(emotion_pick(record_rng))];
      // Two voicings per transcript.
      r.transcript_id = padded(label ? "script_u" : "script_l", i / 2);

      const auto [ls, lt] = latents(record_rng);
      const bool drop_audio = drop(record_rng);
      const bool drop_text = drop(record_rng);
      r.audio = audio.sample(drop_audio ? audio.midpoint : audio.center[label], ls,
                             frames(record_rng), cfg.noise, record_rng);
      r.text = text.sample(drop_text ? text.midpoint : text.center[label], lt, frames(record_rng),
                           cfg.noise, record_rng);
      out.push_back(std::move(r));
    }
  }

  // Out-of-domain unwanted calls: shifted centers and stronger noise.
  for (int i = 0; i < cfg.n_dncr; ++i) {
    CallRecord r;
    r.id = padded("dncr_", i);
    r.label = 1;
    r.speaker = padded("dncr_spk", i % 7);
    r.engine = std::string(kDncrEngine);
    r.emotion = "unlabeled";
    r.transcript_id = padded("dncr_script", i);
    const auto [ls, lt] = latents(record_rng);
    r.audio = audio.sample(audio.center[1] + audio.ood_shift, ls, frames(record_rng),
                           1.5 * cfg.noise, record_rng);
    r.text = text.sample(text.center[1] + text.ood_shift, lt, frames(record_rng), 1.5 * cfg.noise,
                         record_rng);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace roboka
