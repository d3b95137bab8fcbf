// Staggered two-stage optimization: train the experts, freeze them, train
// the arbitration agent over the frozen bundle. Plus run configuration,
// checkpoints, and the ablation matrix.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcr/ada.hpp"
#include "dcr/afd.hpp"
#include "dcr/metrics.hpp"

namespace dcr {

struct RunConfig {
  std::string dataset_path;
  std::string out_dir;
  AfdConfig afd;
  AdaConfig ada;
  int general_epochs = 3;
  double general_lr = 1e-3;
  bool general_random = false;  // seeded-random frozen view (ablation)
  std::vector<uint64_t> seeds = {41, 42, 43};

  void validate() const;
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::string& path);
};

enum class Stage : int { Afd = 0, Ada = 1 };

struct Checkpoint {
  Stage stage = Stage::Afd;
  std::string config_text;
  NamedParams params;  // detached tensors
  std::vector<std::string> metric_history;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
// Copies checkpoint values into same-named target tensors; unknown or
// missing names or shape mismatches raise IntegrityError/ArgumentError.
void bind_params(NamedParams& target, const Checkpoint& ckpt);

// Content hash over a parameter set's names, shapes, and raw values.
uint64_t params_hash(const NamedParams& params);

struct SeedResult {
  uint64_t seed = 0;
  MetricsReport dcr;
  std::array<MetricsReport, 4> single_path;  // always-{M,T,A,V}
  MetricsReport fusion_baseline;
  std::map<std::string, SubsetAccuracy> dcr_subsets;
  std::map<std::string, SubsetAccuracy> baseline_subsets;
  ActionDistribution actions;
  uint64_t expert_hash_before_stage2 = 0;
  uint64_t expert_hash_after_stage2 = 0;
};

struct RunResult {
  std::vector<SeedResult> per_seed;
  // mean and std of headline metrics across seeds
  std::map<std::string, std::pair<double, double>> aggregate;
};

// Full staggered two-stage pipeline for every configured seed. Writes checkpoints
// and per-epoch CSV logs under config.out_dir when it is non-empty.
RunResult run_sequential(const RunConfig& config);

// Writes result tables: per-seed CSV plus a machine-readable summary.
void write_run_result(const RunResult& result, const std::string& out_dir);

// Ablation variants over identical seeds.
// Known names: full, afd_only, ada_only, neither, concat, no_general,
// no_affective, no_calibration_reward, no_value_head, no_augmentation,
// expanded.
struct AblationRow {
  std::string variant;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_wf1 = 0.0;
  double std_wf1 = 0.0;
};

std::vector<AblationRow> ablation_runner(const RunConfig& config,
                                         const std::vector<std::string>& variants);

}  // namespace dcr
