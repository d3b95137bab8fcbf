// Path II: contextual-bandit arbitration over the frozen expert bundle.
// Dual-view state, modality-dropout augmentation, cognitive calibration,
// policy/value heads, calibration-aware reward, A2C objective.

#pragma once

#include <array>
#include <ostream>
#include <vector>

#include "dcr/afd.hpp"
#include "dcr/datagen.hpp"
#include "dcr/encoders.hpp"

namespace dcr {

enum class ActionSpaceMode { Atomic = 0, Expanded = 1 };

// Atomic actions 0..3 = {M, T, A, V}; expanded adds 4..6 = {AT, VT, AV}.
int action_count(ActionSpaceMode mode);
const char* action_name(int action, ActionSpaceMode mode);

struct DualViewState {
  std::array<Tensor, kNumModalities> affective;  // H^a: (d,) mean-pooled
  std::array<Tensor, kNumModalities> general;    // H^g: (L, d) frozen view
};

struct AdaConfig {
  double alpha = 0.5;   // value-loss weight
  double beta = 0.01;   // entropy weight
  double p1 = 0.2;      // mask-one-modality probability
  double p2 = 0.05;     // mask-two-modalities probability
  double sigma = 0.01;  // feature noise std
  int epochs = 30;
  double lr = 1e-4;
  int batch = 32;
  int patience = 10;
  int feat_dim = 32;
  int hidden = 32;
  uint64_t seed = 42;
  ActionSpaceMode mode = ActionSpaceMode::Atomic;
  // ablation switches
  bool use_general = true;
  bool use_affective = true;
  bool calibration_reward = true;  // false: plain +/-1 reward
  bool value_head = true;          // false: delta = r, no value loss
  bool augmentation = true;

  void validate() const;
};

struct AgentParams {
  // shared calibration projections (query from H^a, key/value from H^g)
  Tensor cal_wq, cal_bq, cal_wk, cal_bk, cal_wv, cal_bv;
  std::array<Tensor, kNumModalities> identity;  // modality identity embeddings
  // one transformer encoder block over the three calibrated tokens
  Tensor enc_wq, enc_bq, enc_wk, enc_bk, enc_wv, enc_bv, enc_wo, enc_bo;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  // 2-layer policy and value heads
  Tensor pol_w1, pol_b1, pol_w2, pol_b2;
  Tensor val_w1, val_b1, val_w2, val_b2;

  static AgentParams init(int feat_dim, int hidden, int num_actions, Rng& rng);
  NamedParams named_params() const;
  std::vector<Tensor> trainable_params() const;
};

struct PolicyOutput {
  Tensor probs;     // distribution over actions
  Tensor value;     // scalar state-value estimate
  int chosen = 0;   // sampled (training) or argmax (evaluation)
  Tensor log_prob;  // log probs[chosen]
};

struct RewardRecord {
  double r = 0.0;
  bool correct = false;
  double confidence_used = 0.0;
  double delta = 0.0;  // r - v
};

struct AdaLossBreakdown {
  double l_pg = 0.0;
  double l_val = 0.0;
  double entropy = 0.0;
  Tensor total;
};

// Masks one or two modalities with probabilities (p1, p2) and adds Gaussian
// noise to surviving features. Training-time only.
DualViewState augment_state(const DualViewState& state, const AdaConfig& config,
                            Rng& rng);

// Bias rectification: H^a queries H^g; honors the ablation
// switches (general-only / affective-only variants).
Tensor cognitive_calibration(const Tensor& h_a, const Tensor& h_g,
                             const AgentParams& params, const AdaConfig& config);

// Identity embeddings + one transformer block over three tokens; H_M is the
// token mean.
Tensor encode_state(const std::array<Tensor, kNumModalities>& calibrated,
                    const AgentParams& params);

PolicyOutput policy_forward(const Tensor& h_m, const AgentParams& params,
                            int num_actions, bool training, Rng* rng);

RewardRecord calibration_reward(const std::vector<double>& pred_dist, int label);

// One episode's contribution terms, accumulated into the batched objective.
struct EpisodeTerms {
  Tensor log_prob;
  double delta = 0.0;  // treated as constant in the policy term
  Tensor probs;
  Tensor value;
  double reward = 0.0;
};

AdaLossBreakdown ada_loss(const std::vector<EpisodeTerms>& episodes,
                          double alpha, double beta, bool value_head);

std::vector<double> select_pathway_prediction(int action,
                                              const ExpertPredictions& experts,
                                              ActionSpaceMode mode);

// Frozen, precomputed per-sample context for bandit episodes.
struct EpisodeContext {
  DualViewState state;
  ExpertPredictions experts;
  int label = 0;
  ConflictClass conflict = ConflictClass::None;
};

EpisodeContext build_episode_context(const ExpertBundle& experts,
                                     const GeneralEncoderParams& general,
                                     const Sample& sample);

// Detached copy of a trained bundle; train_ada requires a frozen bundle.
ExpertBundle freeze_bundle(const ExpertBundle& bundle);

struct AdaAgent {
  AgentParams params;
  AdaConfig config;
};

// Per-epoch CSV rows (epoch,mean_reward,entropy,value_loss,valid_acc,
// freq_a0,...,freq_aN) go to `log` when non-null.
AdaAgent train_ada(const ExpertBundle& experts,
                   const GeneralEncoderParams& general, const Dataset& ds,
                   const AdaConfig& config, std::ostream* log = nullptr);

int greedy_action(const AdaAgent& agent, const EpisodeContext& ctx);

// Full action distribution of the trained policy for one context (no
// sampling); used for action-selection analysis.
std::vector<double> policy_distribution(const AdaAgent& agent,
                                        const EpisodeContext& ctx);

}  // namespace dcr
