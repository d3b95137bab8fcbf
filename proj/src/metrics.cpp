#include "dcr/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace dcr {

namespace {

// F1 of the positive class of a binary problem given (tp, fp, fn).
std::optional<double> binary_f1(int tp, int fp, int fn) {
  const double denom = 2.0 * tp + fp + fn;
  if (denom == 0.0) return std::nullopt;
  return 2.0 * tp / denom;
}

double polarity_score(Polarity p) {
  switch (p) {
    case Polarity::Negative: return -1.0;
    case Polarity::Neutral: return 0.0;
    case Polarity::Positive: return 1.0;
  }
  return 0.0;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& labels,
                              const DatasetManifest& manifest) {
  if (predictions.size() != labels.size())
    throw ArgumentError("compute_metrics: length mismatch");
  if (predictions.empty()) throw ArgumentError("compute_metrics: empty input");
  const int c = manifest.num_classes;
  const int n = static_cast<int>(predictions.size());

  MetricsReport rep;
  int correct = 0;
  std::vector<int> tp(static_cast<size_t>(c), 0), fp(static_cast<size_t>(c), 0),
      fn(static_cast<size_t>(c), 0), support(static_cast<size_t>(c), 0);
  double abs_err = 0.0;
  std::vector<double> sy, sp;
  sy.reserve(static_cast<size_t>(n));
  sp.reserve(static_cast<size_t>(n));
  int bin_tp = 0, bin_fp = 0, bin_fn = 0;       // negative vs non-negative
  int pn_tp = 0, pn_fp = 0, pn_fn = 0;          // negative vs positive

  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)], p = predictions[static_cast<size_t>(i)];
    if (y < 0 || y >= c || p < 0 || p >= c)
      throw ArgumentError("compute_metrics: class index out of range");
    if (p == y) ++correct;
    support[static_cast<size_t>(y)]++;
    if (p == y) tp[static_cast<size_t>(y)]++;
    else {
      fp[static_cast<size_t>(p)]++;
      fn[static_cast<size_t>(y)]++;
    }
    const double vy = polarity_score(manifest.polarity_of(y));
    const double vp = polarity_score(manifest.polarity_of(p));
    abs_err += std::fabs(vy - vp);
    sy.push_back(vy);
    sp.push_back(vp);

    const bool y_neg = manifest.polarity_of(y) == Polarity::Negative;
    const bool p_neg = manifest.polarity_of(p) == Polarity::Negative;
    if (y_neg && p_neg) ++bin_tp;
    else if (!y_neg && p_neg) ++bin_fp;
    else if (y_neg && !p_neg) ++bin_fn;
    // neutral excluded from the negative-vs-positive form
    if (manifest.polarity_of(y) != Polarity::Neutral) {
      if (y_neg && p_neg) ++pn_tp;
      else if (!y_neg && p_neg) ++pn_fp;
      else if (y_neg && !p_neg) ++pn_fn;
    }
  }

  rep.accuracy = static_cast<double>(correct) / n;
  rep.mae = abs_err / n;

  double wf1 = 0.0;
  for (int k = 0; k < c; ++k) {
    if (support[static_cast<size_t>(k)] == 0) continue;
    const auto f1 = binary_f1(tp[static_cast<size_t>(k)], fp[static_cast<size_t>(k)], fn[static_cast<size_t>(k)]);
    wf1 += static_cast<double>(support[static_cast<size_t>(k)]) / n * f1.value_or(0.0);
  }
  rep.weighted_f1 = wf1;

  // Pearson correlation; absent for constant vectors.
  double my = 0.0, mp = 0.0;
  for (int i = 0; i < n; ++i) {
    my += sy[static_cast<size_t>(i)];
    mp += sp[static_cast<size_t>(i)];
  }
  my /= n;
  mp /= n;
  double cov = 0.0, vy = 0.0, vp = 0.0;
  for (int i = 0; i < n; ++i) {
    cov += (sy[static_cast<size_t>(i)] - my) * (sp[static_cast<size_t>(i)] - mp);
    vy += (sy[static_cast<size_t>(i)] - my) * (sy[static_cast<size_t>(i)] - my);
    vp += (sp[static_cast<size_t>(i)] - mp) * (sp[static_cast<size_t>(i)] - mp);
  }
  if (vy > 0.0 && vp > 0.0) rep.corr = cov / std::sqrt(vy * vp);

  rep.f1_neg_vs_rest = binary_f1(bin_tp, bin_fp, bin_fn);
  rep.f1_neg_vs_pos = binary_f1(pn_tp, pn_fp, pn_fn);
  return rep;
}

std::map<std::string, SubsetAccuracy> conflict_subset_eval(
    const std::vector<int>& predictions, const std::vector<int>& labels,
    const std::vector<ConflictClass>& conflicts) {
  if (predictions.size() != labels.size() || predictions.size() != conflicts.size())
    throw ArgumentError("conflict_subset_eval: length mismatch");
  std::map<std::string, std::pair<int, int>> acc;  // name -> (correct, count)
  for (size_t i = 0; i < predictions.size(); ++i) {
    const bool ok = predictions[i] == labels[i];
    for (const std::string key : {std::string("all"), std::string(conflict_name(conflicts[i]))}) {
      auto& e = acc[key];
      e.second++;
      if (ok) e.first++;
    }
  }
  std::map<std::string, SubsetAccuracy> out;
  for (const char* name : {"all", "none", "benign", "severe"}) {
    SubsetAccuracy s;
    auto it = acc.find(name);
    if (it != acc.end()) {
      s.count = it->second.second;
      s.accuracy = static_cast<double>(it->second.first) / it->second.second;
    }
    out[name] = s;
  }
  return out;
}

ActionDistribution action_distribution(const std::vector<int>& actions,
                                       const std::vector<ConflictClass>& conflicts,
                                       int num_actions) {
  if (actions.size() != conflicts.size())
    throw ArgumentError("action_distribution: length mismatch");
  ActionDistribution out;
  std::map<std::string, std::vector<int>> counts;
  for (size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] < 0 || actions[i] >= num_actions)
      throw ArgumentError("action_distribution: action out of range");
    for (const std::string key : {std::string("all"), std::string(conflict_name(conflicts[i]))}) {
      auto& v = counts[key];
      if (v.empty()) v.assign(static_cast<size_t>(num_actions), 0);
      v[static_cast<size_t>(actions[i])]++;
    }
  }
  for (const auto& [key, v] : counts) {
    int total = 0;
    for (int k : v) total += k;
    std::vector<double> f(v.size());
    for (size_t k = 0; k < v.size(); ++k) f[k] = static_cast<double>(v[k]) / total;
    out.freq[key] = f;
    out.count[key] = total;
  }
  return out;
}

ActionDistribution action_distribution(
    const std::vector<std::vector<double>>& action_probs,
    const std::vector<ConflictClass>& conflicts) {
  if (action_probs.size() != conflicts.size())
    throw ArgumentError("action_distribution: length mismatch");
  ActionDistribution out;
  std::map<std::string, std::pair<std::vector<double>, int>> sums;
  for (size_t i = 0; i < action_probs.size(); ++i) {
    const auto& p = action_probs[i];
    if (p.empty()) throw ArgumentError("action_distribution: empty distribution");
    for (const std::string key :
         {std::string("all"), std::string(conflict_name(conflicts[i]))}) {
      auto& [v, n] = sums[key];
      if (v.empty()) v.assign(p.size(), 0.0);
      if (v.size() != p.size())
        throw ArgumentError("action_distribution: ragged distributions");
      for (size_t k = 0; k < p.size(); ++k) v[k] += p[k];
      ++n;
    }
  }
  for (const auto& [key, acc] : sums) {
    std::vector<double> f(acc.first.size());
    for (size_t k = 0; k < f.size(); ++k) f[k] = acc.first[k] / acc.second;
    out.freq[key] = f;
    out.count[key] = acc.second;
  }
  return out;
}

std::vector<double> topk_confidence_curve(
    const std::vector<std::vector<double>>& distributions, int k,
    const std::vector<double>& thresholds) {
  if (distributions.empty())
    throw ArgumentError("topk_confidence_curve: empty input");
  std::vector<double> masses;
  masses.reserve(distributions.size());
  for (const auto& dist : distributions) {
    if (k < 1 || k >= static_cast<int>(dist.size()))
      throw ArgumentError("topk_confidence_curve: k must be in [1, C)");
    std::vector<double> sorted = dist;
    std::partial_sort(sorted.begin(), sorted.begin() + k, sorted.end(),
                      std::greater<double>());
    double mass = 0.0;
    for (int i = 0; i < k; ++i) mass += sorted[static_cast<size_t>(i)];
    masses.push_back(mass);
  }
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    int hit = 0;
    for (double m : masses)
      if (m >= t) ++hit;
    out.push_back(static_cast<double>(hit) / static_cast<double>(masses.size()));
  }
  return out;
}

}  // namespace dcr
