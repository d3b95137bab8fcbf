// Path I: confidence-weighted reverse distillation from the non-verbal
// teachers into the textual student, cross-attention fusion, and the
// multi-tier training objective over the four experts.

#pragma once

#include <array>
#include <ostream>
#include <vector>

#include "dcr/datagen.hpp"
#include "dcr/encoders.hpp"
#include "dcr/tensor.hpp"

namespace dcr {

struct FusionParams {
  bool concat_fusion = false;  // ablation: pooled concatenation + affine head
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor head_w, head_b;

  static FusionParams init(int feat_dim, int num_classes, Rng& rng,
                           bool concat_fusion = false);
  NamedParams named_params() const;
  std::vector<Tensor> trainable_params() const;
};

struct AfdConfig {
  double gamma = 1.0;
  double lambda = 0.5;
  int epochs = 30;
  double lr = 1e-4;
  int batch = 32;
  int patience = 10;
  int feat_dim = 32;
  uint64_t seed = 42;
  bool freeze_teachers = false;  // exclude A/V branches from the optimizer
  bool concat_fusion = false;
};

struct AfdLossBreakdown {
  double l_m = 0.0;
  double l_u = 0.0;
  double l_kl = 0.0;
  double gamma = 0.0;
  double lambda = 0.0;
  Tensor total;  // scalar node, breakdown invariant: l_m + g*l_u + l*l_kl
};

struct ExpertBundle {
  EncoderParams encoders;
  FusionParams fusion;
  NamedParams named_params() const;
};

// Per-sample inference output of the frozen bundle: p_M, p_T, p_A, p_V.
struct ExpertPredictions {
  std::array<std::vector<double>, 4> dists;
};

// Per-timestep class evidence of a teacher branch, detached from the tape;
// coincides with the per-timestep head logits at this architecture scale.
Tensor class_activation_map(const Tensor& teacher_features,
                            const ModalityEncoder& enc);

// Row-wise softmax of the activation map: one distribution per timestep.
Tensor teacher_distribution(const Tensor& activation_map);

// Softmax over time of the ground-truth class column: saliency weights.
Tensor temporal_confidence(const Tensor& activation_map, int label);

struct TeacherSignal {
  Tensor distribution;  // (L, C) constant
  Tensor weights;       // (L,) constant
};

// Sum over teachers and timesteps of w_t * KL(teacher_row || student_row);
// gradient reaches only the student rows.
Tensor distillation_loss(const std::vector<TeacherSignal>& teachers,
                         const Tensor& student_distribution);

// Cross-attention fusion: text queries attend over the concatenated
// audio+visual timeline; pooled result + pooled text -> class logits.
Tensor fuse(const std::array<Tensor, kNumModalities>& features,
            const FusionParams& fusion);

AfdLossBreakdown afd_loss(const std::vector<const Sample*>& batch,
                          const EncoderParams& encoders,
                          const FusionParams& fusion, double gamma,
                          double lambda);

// Trains encoders + fusion; returns the snapshot at best validation WF1.
// Per-epoch CSV rows (epoch,L_M,L_U,L_KL,total,valid_wf1) go to `log` when
// non-null.
ExpertBundle train_afd(const Dataset& ds, const AfdConfig& config,
                       std::ostream* log = nullptr);

ExpertPredictions expert_predictions(const ExpertBundle& bundle,
                                     const Sample& sample);

}  // namespace dcr
