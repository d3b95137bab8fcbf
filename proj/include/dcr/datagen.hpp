// Synthetic multimodal emotion samples with controllable benign/severe
// modality conflicts, plus the on-disk dataset container.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcr/rng.hpp"
#include "dcr/tensor.hpp"

namespace dcr {

enum class Modality : int { Text = 0, Audio = 1, Visual = 2 };
enum class Polarity : int { Negative = 0, Neutral = 1, Positive = 2 };
enum class ConflictClass : int { None = 0, Benign = 1, Severe = 2 };

constexpr int kNumModalities = 3;
const char* modality_name(Modality m);
const char* conflict_name(ConflictClass c);

struct EmotionLabel {
  int class_index = 0;
};

struct ModalitySignal {
  Modality modality = Modality::Text;
  Tensor sequence;  // (L_raw, d_raw), constant
  double snr = 1.0;
};

struct Sample {
  std::string id;
  std::array<ModalitySignal, kNumModalities> signals;
  std::array<EmotionLabel, kNumModalities> unimodal_labels;
  EmotionLabel multimodal_label;
  ConflictClass conflict_class = ConflictClass::None;
  std::optional<Modality> conflict_modality;
};

struct DatasetManifest {
  int num_classes = 3;
  // class index -> polarity; default 3-class table is (neg, neu, pos)
  std::vector<Polarity> class_polarity = {Polarity::Negative, Polarity::Neutral,
                                          Polarity::Positive};
  std::array<int, kNumModalities> seq_len = {16, 16, 16};
  std::array<int, kNumModalities> raw_dim = {12, 10, 8};
  double mix_clean = 0.5;
  double mix_benign = 0.3;
  double mix_severe = 0.2;
  double snr = 4.0;
  uint64_t seed = 1;

  void validate() const;
  Polarity polarity_of(int class_index) const;
  int neutral_class() const;  // lowest-index neutral class
  std::string canonical_text() const;
  static DatasetManifest from_text(const std::string& text);

  // Noiseless class trajectory for (class, modality), (L_raw, d_raw).
  // Deterministic in (seed, class, modality).
  std::vector<double> prototype_trajectory(int class_index, Modality m) const;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;
  std::vector<int> train_idx, valid_idx, test_idx;
};

// Emits a clean sample for the given label; all unimodal labels agree.
Sample generate_clean_sample(const DatasetManifest& manifest, int class_index,
                             const std::string& id, Rng& rng);

// Mutates a clean sample into a conflicted one; multimodal label unchanged.
Sample inject_conflict(const Sample& sample, const DatasetManifest& manifest,
                       ConflictClass kind, Modality target, Rng& rng);

ConflictClass classify_conflict(
    const std::array<EmotionLabel, kNumModalities>& unimodal_labels,
    const EmotionLabel& multimodal_label, const DatasetManifest& manifest);

// Deterministic generation: exact conflict-mix counts, per-class balance
// held uniform over classes, 60/20/20 split by seeded shuffle.
Dataset generate_dataset(const DatasetManifest& manifest, int n, uint64_t seed);

uint64_t fnv1a64(const void* data, size_t len);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace dcr
