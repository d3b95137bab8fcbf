// Modality encoders: two temporal conv layers plus one self-attention block
// for the trainable affective view, and a frozen conv stack for the general
// view. All modalities share output shape (L, d).

#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "dcr/datagen.hpp"
#include "dcr/rng.hpp"
#include "dcr/tensor.hpp"

namespace dcr {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct ModalityEncoder {
  Tensor conv1_k, conv1_b;
  Tensor conv2_k, conv2_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln_gain, ln_bias;
  Tensor head_w, head_b;  // per-timestep classification head, d -> C

  static ModalityEncoder init(int raw_dim, int feat_dim, int num_classes,
                              Rng& rng, bool trainable);
  NamedParams named_params(const std::string& prefix) const;
  std::vector<Tensor> trainable_params() const;
};

struct EncoderParams {
  int feat_dim = 32;
  int num_classes = 3;
  std::array<ModalityEncoder, kNumModalities> mods;

  static EncoderParams init(const DatasetManifest& manifest, int feat_dim,
                            Rng& rng, bool trainable = true);
  NamedParams named_params() const;
  std::vector<Tensor> trainable_params() const;
};

enum class GeneralProvenance { SeededRandom = 0, Reconstruction = 1 };

// Frozen projection stack producing the objective general view H^g.
struct GeneralEncoderParams {
  int feat_dim = 32;
  GeneralProvenance provenance = GeneralProvenance::SeededRandom;
  struct Stack {
    Tensor conv1_k, conv1_b, conv2_k, conv2_b;
  };
  std::array<Stack, kNumModalities> mods;

  static GeneralEncoderParams init_random(const DatasetManifest& manifest,
                                          int feat_dim, uint64_t seed);
  NamedParams named_params() const;
};

// Forward pass of the affective encoder: (L_raw, d_raw) -> (L, d).
Tensor encode_affective(const ModalitySignal& signal, const ModalityEncoder& enc);
// Frozen general view: (L_raw, d_raw) -> (L, d); never carries gradients.
Tensor encode_general(const ModalitySignal& signal,
                      const GeneralEncoderParams& params);

// Per-timestep class scores (L, C).
Tensor temporal_logits(const Tensor& features, const ModalityEncoder& enc);
// Utterance-level logits: mean over timesteps of the per-timestep scores.
Tensor pooled_logits(const Tensor& features, const ModalityEncoder& enc);

// Encodes all three modalities and asserts the alignment contract (equal L).
std::array<Tensor, kNumModalities> encode_all(const Sample& sample,
                                              const EncoderParams& params);

// Conv autoencoder used to pretrain the general view.
struct GeneralAutoencoder {
  GeneralEncoderParams encoder;
  struct Decoder {
    Tensor conv1_k, conv1_b, conv2_k, conv2_b;  // d -> d -> d_raw
  };
  std::array<Decoder, kNumModalities> decoders;
};

// Trains a conv autoencoder on the train split's clean samples and freezes
// the encoder half; the desk-scale analog of a pretrained general-purpose
// backbone. With train_encoder = false, only the decoder fits against the
// seeded-random frozen encoder (the ablation control).
GeneralAutoencoder pretrain_general(const Dataset& ds, int feat_dim,
                                    int epochs, double lr, uint64_t seed,
                                    bool train_encoder = true);

// Mean squared reconstruction error over the given samples.
double reconstruction_error(const Dataset& ds, const GeneralAutoencoder& ae,
                            const std::vector<int>& sample_indices);

}  // namespace dcr
