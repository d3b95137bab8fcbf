#include "dcr/afd.hpp"

#include <algorithm>
#include <cmath>

#include "dcr/metrics.hpp"

namespace dcr {

namespace {

Tensor init_weight(std::vector<int> shape, double sd, Rng& rng) {
  size_t n = 1;
  for (int e : shape) n *= static_cast<size_t>(e);
  std::vector<double> vals(n);
  for (auto& v : vals) v = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(vals), true);
}

}  // namespace

FusionParams FusionParams::init(int feat_dim, int num_classes, Rng& rng,
                                bool concat_fusion) {
  FusionParams f;
  f.concat_fusion = concat_fusion;
  const double sd = 1.0 / std::sqrt(static_cast<double>(feat_dim));
  if (!concat_fusion) {
    f.wq = init_weight({feat_dim, feat_dim}, sd, rng);
    f.bq = Tensor::zeros({feat_dim}, true);
    f.wk = init_weight({feat_dim, feat_dim}, sd, rng);
    f.bk = Tensor::zeros({feat_dim}, true);
    f.wv = init_weight({feat_dim, feat_dim}, sd, rng);
    f.bv = Tensor::zeros({feat_dim}, true);
    f.head_w = init_weight({2 * feat_dim, num_classes}, sd, rng);
  } else {
    f.head_w = init_weight({3 * feat_dim, num_classes}, sd, rng);
  }
  f.head_b = Tensor::zeros({num_classes}, true);
  return f;
}

NamedParams FusionParams::named_params() const {
  NamedParams out;
  if (!concat_fusion) {
    out = {{"fusion.wq", wq}, {"fusion.bq", bq}, {"fusion.wk", wk},
           {"fusion.bk", bk}, {"fusion.wv", wv}, {"fusion.bv", bv}};
  }
  out.push_back({"fusion.head_w", head_w});
  out.push_back({"fusion.head_b", head_b});
  return out;
}

std::vector<Tensor> FusionParams::trainable_params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

NamedParams ExpertBundle::named_params() const {
  NamedParams out = encoders.named_params();
  for (auto& kv : fusion.named_params()) out.push_back(kv);
  return out;
}

Tensor class_activation_map(const Tensor& teacher_features,
                            const ModalityEncoder& enc) {
  return temporal_logits(teacher_features, enc).detach();
}

Tensor teacher_distribution(const Tensor& activation_map) {
  return softmax(activation_map, 1);
}

Tensor temporal_confidence(const Tensor& activation_map, int label) {
  if (label < 0 || label >= activation_map.dim(1))
    throw ArgumentError("temporal_confidence: label out of range");
  return softmax(column(activation_map, label), 0);
}

Tensor distillation_loss(const std::vector<TeacherSignal>& teachers,
                         const Tensor& student_distribution) {
  const int l = student_distribution.dim(0), c = student_distribution.dim(1);
  Tensor loss = Tensor::scalar(0.0);
  for (const auto& teacher : teachers) {
    if (teacher.distribution.dim(0) != l || teacher.distribution.dim(1) != c ||
        teacher.weights.dim(0) != l)
      throw ArgumentError("distillation_loss: shape mismatch");
    // Constant weighted teacher mass w_t * P_n[t,c] and its entropy part;
    // only the -sum(WP * log Ps) term carries gradient (into the student).
    std::vector<double> wp(static_cast<size_t>(l) * c);
    double teacher_term = 0.0;
    for (int t = 0; t < l; ++t) {
      const double w = teacher.weights[static_cast<size_t>(t)];
      for (int k = 0; k < c; ++k) {
        const double p = teacher.distribution.at(t, k);
        wp[static_cast<size_t>(t) * c + k] = w * p;
        if (p > 0.0) teacher_term += w * p * std::log(p);
      }
    }
    Tensor wp_const({l, c}, std::move(wp));
    Tensor cross = sum(mul(wp_const, log_clamped(student_distribution)));
    loss = add(loss, sub(Tensor::scalar(teacher_term), cross));
  }
  return loss;
}

Tensor fuse(const std::array<Tensor, kNumModalities>& features,
            const FusionParams& fusion) {
  const Tensor& text = features[static_cast<size_t>(static_cast<int>(Modality::Text))];
  const Tensor& audio = features[static_cast<size_t>(static_cast<int>(Modality::Audio))];
  const Tensor& visual = features[static_cast<size_t>(static_cast<int>(Modality::Visual))];
  if (fusion.concat_fusion) {
    Tensor cat = concat(concat(mean_rows(text), mean_rows(audio)), mean_rows(visual));
    return affine(cat, fusion.head_w, fusion.head_b);
  }
  Tensor q = affine(text, fusion.wq, fusion.bq);
  Tensor kv_src = concat_rows(audio, visual);
  Tensor k = affine(kv_src, fusion.wk, fusion.bk);
  Tensor v = affine(kv_src, fusion.wv, fusion.bv);
  Tensor attended = scaled_dot_attention(q, k, v);
  Tensor cat = concat(mean_rows(attended), mean_rows(text));
  return affine(cat, fusion.head_w, fusion.head_b);
}

AfdLossBreakdown afd_loss(const std::vector<const Sample*>& batch,
                          const EncoderParams& encoders,
                          const FusionParams& fusion, double gamma,
                          double lambda) {
  if (batch.empty()) throw ArgumentError("afd_loss: empty batch");
  std::vector<Tensor> fused_rows;
  std::array<std::vector<Tensor>, kNumModalities> uni_rows;
  std::vector<int> labels;
  Tensor kl_acc = Tensor::scalar(0.0);
  const int ti = static_cast<int>(Modality::Text);

  for (const Sample* s : batch) {
    auto features = encode_all(*s, encoders);
    fused_rows.push_back(fuse(features, fusion));
    for (int mi = 0; mi < kNumModalities; ++mi)
      uni_rows[static_cast<size_t>(mi)].push_back(
          pooled_logits(features[static_cast<size_t>(mi)], encoders.mods[static_cast<size_t>(mi)]));
    labels.push_back(s->multimodal_label.class_index);

    std::vector<TeacherSignal> teachers;
    for (Modality n : {Modality::Audio, Modality::Visual}) {
      const int ni = static_cast<int>(n);
      Tensor cam = class_activation_map(features[static_cast<size_t>(ni)],
                                        encoders.mods[static_cast<size_t>(ni)]);
      teachers.push_back({teacher_distribution(cam),
                          temporal_confidence(cam, s->multimodal_label.class_index)});
    }
    Tensor student_p =
        softmax(temporal_logits(features[static_cast<size_t>(ti)], encoders.mods[static_cast<size_t>(ti)]), 1);
    kl_acc = add(kl_acc, distillation_loss(teachers, student_p));
  }

  Tensor l_m = cross_entropy(stack_rows(fused_rows), labels);
  Tensor l_u = Tensor::scalar(0.0);
  for (int mi = 0; mi < kNumModalities; ++mi)
    l_u = add(l_u, cross_entropy(stack_rows(uni_rows[static_cast<size_t>(mi)]), labels));
  Tensor l_kl = scale(kl_acc, 1.0 / static_cast<double>(batch.size()));

  AfdLossBreakdown out;
  out.gamma = gamma;
  out.lambda = lambda;
  out.l_m = l_m.item();
  out.l_u = l_u.item();
  out.l_kl = l_kl.item();
  out.total = add(l_m, add(scale(l_u, gamma), scale(l_kl, lambda)));
  return out;
}

namespace {

std::vector<double> snapshot(const NamedParams& params) {
  std::vector<double> out;
  for (const auto& [name, t] : params)
    out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

void restore(NamedParams& params, const std::vector<double>& snap) {
  size_t pos = 0;
  for (auto& [name, t] : params) {
    std::copy(snap.begin() + static_cast<long>(pos),
              snap.begin() + static_cast<long>(pos + t.size()), t.values().begin());
    pos += t.size();
  }
}

double validation_wf1(const Dataset& ds, const std::vector<int>& idx,
                      const EncoderParams& encoders, const FusionParams& fusion) {
  std::vector<int> preds, labels;
  for (int i : idx) {
    const Sample& s = ds.samples[static_cast<size_t>(i)];
    auto features = encode_all(s, encoders);
    Tensor logits = fuse(features, fusion);
    int best = 0;
    for (int c = 1; c < logits.dim(0); ++c)
      if (logits[static_cast<size_t>(c)] > logits[static_cast<size_t>(best)]) best = c;
    preds.push_back(best);
    labels.push_back(s.multimodal_label.class_index);
  }
  return compute_metrics(preds, labels, ds.manifest).weighted_f1;
}

}  // namespace

ExpertBundle train_afd(const Dataset& ds, const AfdConfig& config,
                       std::ostream* log) {
  if (ds.train_idx.empty() || ds.valid_idx.empty())
    throw ArgumentError("train_afd: empty split");
  Rng rng(Rng::mix(config.seed, 0xAFDULL));
  ExpertBundle bundle;
  bundle.encoders = EncoderParams::init(ds.manifest, config.feat_dim, rng, true);
  bundle.fusion = FusionParams::init(config.feat_dim, ds.manifest.num_classes,
                                     rng, config.concat_fusion);

  std::vector<Tensor> params;
  for (int mi = 0; mi < kNumModalities; ++mi) {
    if (config.freeze_teachers && mi != static_cast<int>(Modality::Text)) continue;
    for (auto& t : bundle.encoders.mods[static_cast<size_t>(mi)].trainable_params())
      params.push_back(t);
  }
  for (auto& t : bundle.fusion.trainable_params()) params.push_back(t);

  NamedParams all_named = bundle.named_params();
  std::vector<double> best_params = snapshot(all_named);
  double best_wf1 = -1.0;
  int since_best = 0;

  AdamOptimizer opt(params, config.lr);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng order_rng(Rng::mix(config.seed, 0xE70C + static_cast<uint64_t>(epoch)));
    std::vector<int> order = ds.train_idx;
    std::shuffle(order.begin(), order.end(), order_rng.engine());

    double sum_m = 0.0, sum_u = 0.0, sum_kl = 0.0, sum_total = 0.0;
    int batches = 0;
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(config.batch)) {
      std::vector<const Sample*> batch;
      const size_t end = std::min(order.size(), b + static_cast<size_t>(config.batch));
      for (size_t i = b; i < end; ++i)
        batch.push_back(&ds.samples[static_cast<size_t>(order[i])]);
      opt.zero_grad();
      AfdLossBreakdown loss = afd_loss(batch, bundle.encoders, bundle.fusion,
                                       config.gamma, config.lambda);
      loss.total.backward();
      opt.step();
      sum_m += loss.l_m;
      sum_u += loss.l_u;
      sum_kl += loss.l_kl;
      sum_total += loss.total.item();
      ++batches;
    }

    const double wf1 = validation_wf1(ds, ds.valid_idx, bundle.encoders, bundle.fusion);
    if (log)
      *log << epoch << "," << sum_m / batches << "," << sum_u / batches << ","
           << sum_kl / batches << "," << sum_total / batches << "," << wf1 << "\n";
    if (wf1 > best_wf1) {
      best_wf1 = wf1;
      best_params = snapshot(all_named);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  restore(all_named, best_params);
  return bundle;
}

ExpertPredictions expert_predictions(const ExpertBundle& bundle,
                                     const Sample& sample) {
  auto features = encode_all(sample, bundle.encoders);
  ExpertPredictions out;
  Tensor p_m = softmax(fuse(features, bundle.fusion), 0);
  out.dists[0] = p_m.values();
  for (int mi = 0; mi < kNumModalities; ++mi) {
    Tensor p = softmax(pooled_logits(features[static_cast<size_t>(mi)],
                                     bundle.encoders.mods[static_cast<size_t>(mi)]), 0);
    out.dists[static_cast<size_t>(1 + mi)] = p.values();
  }
  return out;
}

}  // namespace dcr
