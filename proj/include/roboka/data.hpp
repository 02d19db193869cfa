#pragma once

// Call records, the on-disk dataset format, leakage-free protocol splits and
// a synthetic paired-embedding generator.
//
// On-disk layout of a dataset directory:
//   manifest.jsonl           one JSON object per record:
//                            {id, label, speaker, engine, emotion, transcript_id,
//                             audio_path, audio_shape: [T, d], text_path, text_shape}
//   <audio_path>, <text_path> raw row-major little-endian float32, T*d values
// Paths are relative to the dataset directory.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "roboka/model.hpp"

namespace roboka {

inline constexpr std::string_view kDncrEngine = "dncr";

struct CallRecord {
  std::string id;
  EmbeddingSequence audio;
  EmbeddingSequence text;
  int label = 0;  // 1 = unwanted, 0 = legitimate
  std::string speaker;
  std::string engine;
  std::string emotion;
  std::string transcript_id;
};

using Dataset = std::vector<CallRecord>;

// Throws DataError (naming the record) on a missing blob, a shape / byte
// length mismatch, an unknown label, a duplicate id, or inconsistent
// embedding widths.
Dataset load_dataset(const std::filesystem::path& dir, int threads = 1);
void write_dataset(const Dataset& records, const std::filesystem::path& dir);

// SHA-256 (hex) over ids, labels, group keys, shapes and every float bit.
std::string dataset_hash(const Dataset& records);

// ---------------------------------------------------------------------------
// Protocols

enum class Protocol { T1, T2, T3, T4 };

std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view name);

inline constexpr int kDefaultFolds = 5;
inline constexpr double kHoldoutFraction = 0.2;

struct SplitPlan {
  Protocol protocol = Protocol::T3;
  std::uint64_t seed = 0;
  int folds = kDefaultFolds;
  // T1: held-out engines, T2: held-out emotions, T4: {"dncr"}; empty for T3.
  std::vector<std::string> holdout_groups;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::map<std::string, int> fold_of;  // train id -> 0..folds-1
};

// Deterministic in (records, protocol, seed). Records whose engine is "dncr"
// only ever appear on the T4 test side.
SplitPlan make_split(const Dataset& records, Protocol protocol, std::uint64_t seed,
                     int folds = kDefaultFolds);

std::string split_to_json(const SplitPlan& plan);
SplitPlan split_from_json(std::string_view text);
void save_split(const SplitPlan& plan, const std::filesystem::path& path);
SplitPlan load_split(const std::filesystem::path& path);

// Records selected by id, in the order of `ids`. Throws DataError on an
// unknown id.
std::vector<const CallRecord*> select(const Dataset& records, std::span<const std::string> ids);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  int n_per_class = 100;
  int d_audio = 16;
  int d_text = 16;
  int t_min = 8;
  int t_max = 24;
  double coupling = 0.7;  // correlation weight of the shared audio/text latent
  double noise = 0.5;
  // Probability that a modality of a record carries no class signal (its
  // frames sit at the midpoint of the two class centers).
  double modality_dropout = 0.0;
  int n_dncr = 0;  // extra out-of-domain unwanted records, engine "dncr"
  int latent_dim = 4;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string> kSynthEngines = {"bark", "openai_tts", "speecht5", "xtts"};
inline const std::vector<std::string> kSynthEmotions = {
    "surprised", "angry", "sad", "joyful", "anxious", "hopeful", "confident", "disappointed"};
inline constexpr int kSynthSpeakers = 14;

Dataset synth_dataset(const SynthConfig& cfg);

}  // namespace roboka
