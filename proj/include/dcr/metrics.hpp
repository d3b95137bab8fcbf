// Classification metrics and the analysis tables built from model outputs.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcr/datagen.hpp"

namespace dcr {

struct MetricsReport {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double mae = 0.0;
  std::optional<double> corr;  // absent when either scalar vector is constant
  // (negative vs non-negative, negative vs positive); the second excludes
  // neutral samples.
  std::optional<double> f1_neg_vs_rest;
  std::optional<double> f1_neg_vs_pos;
};

// predictions/labels are class indices; scalar targets (for MAE/Corr) come
// from the manifest's polarity table mapped to {-1, 0, +1}.
MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& labels,
                              const DatasetManifest& manifest);

struct SubsetAccuracy {
  int count = 0;
  std::optional<double> accuracy;  // absent for empty subsets
};

// Accuracy partitioned by conflict class; keys: all, none, benign, severe.
std::map<std::string, SubsetAccuracy> conflict_subset_eval(
    const std::vector<int>& predictions, const std::vector<int>& labels,
    const std::vector<ConflictClass>& conflicts);

struct ActionDistribution {
  // subset name -> frequency per action (sums to 1); empty subsets omitted.
  std::map<std::string, std::vector<double>> freq;
  std::map<std::string, int> count;
};

ActionDistribution action_distribution(const std::vector<int>& actions,
                                       const std::vector<ConflictClass>& conflicts,
                                       int num_actions);

// Expected selection rate under a stochastic policy: per-subset mean of the
// per-sample action probability vectors.
ActionDistribution action_distribution(
    const std::vector<std::vector<double>>& action_probs,
    const std::vector<ConflictClass>& conflicts);

// For each threshold, the fraction of samples whose top-k probability mass
// reaches it; non-increasing in the threshold.
std::vector<double> topk_confidence_curve(
    const std::vector<std::vector<double>>& distributions, int k,
    const std::vector<double>& thresholds);

}  // namespace dcr
