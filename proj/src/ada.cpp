#include "dcr/ada.hpp"

#include <algorithm>
#include <cmath>

namespace dcr {

int action_count(ActionSpaceMode mode) {
  return mode == ActionSpaceMode::Atomic ? 4 : 7;
}

const char* action_name(int action, ActionSpaceMode mode) {
  static const char* names[] = {"a_M", "a_T", "a_A", "a_V", "a_AT", "a_VT", "a_AV"};
  if (action < 0 || action >= action_count(mode))
    throw ArgumentError("action_name: action out of range");
  return names[action];
}

void AdaConfig::validate() const {
  if (p1 < 0 || p2 < 0 || p2 > p1 || p1 + p2 > 1.0)
    throw ArgumentError("ada config: require 0 <= p2 <= p1 and p1 + p2 <= 1");
  if (sigma < 0) throw ArgumentError("ada config: sigma must be >= 0");
  if (alpha < 0 || beta < 0) throw ArgumentError("ada config: negative coefficient");
  if (epochs < 0 || batch < 1) throw ArgumentError("ada config: bad epochs/batch");
}

namespace {

Tensor init_weight(std::vector<int> shape, double sd, Rng& rng) {
  size_t n = 1;
  for (int e : shape) n *= static_cast<size_t>(e);
  std::vector<double> vals(n);
  for (auto& v : vals) v = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(vals), true);
}

}  // namespace

AgentParams AgentParams::init(int feat_dim, int hidden, int num_actions, Rng& rng) {
  AgentParams p;
  const double sd = 1.0 / std::sqrt(static_cast<double>(feat_dim));
  const double sdh = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto dxd = [&] { return init_weight({feat_dim, feat_dim}, sd, rng); };
  auto bias = [&] { return Tensor::zeros({feat_dim}, true); };
  p.cal_wq = dxd(); p.cal_bq = bias();
  p.cal_wk = dxd(); p.cal_bk = bias();
  p.cal_wv = dxd(); p.cal_bv = bias();
  for (auto& id : p.identity) id = init_weight({feat_dim}, sd, rng);
  p.enc_wq = dxd(); p.enc_bq = bias();
  p.enc_wk = dxd(); p.enc_bk = bias();
  p.enc_wv = dxd(); p.enc_bv = bias();
  p.enc_wo = dxd(); p.enc_bo = bias();
  p.ln1_g = Tensor::full({feat_dim}, 1.0, true);
  p.ln1_b = bias();
  p.ln2_g = Tensor::full({feat_dim}, 1.0, true);
  p.ln2_b = bias();
  p.ff_w1 = dxd(); p.ff_b1 = Tensor::full({feat_dim}, 0.01, true);
  p.ff_w2 = dxd(); p.ff_b2 = bias();
  p.pol_w1 = init_weight({feat_dim, hidden}, sd, rng);
  p.pol_b1 = Tensor::full({hidden}, 0.01, true);
  p.pol_w2 = init_weight({hidden, num_actions}, sdh, rng);
  p.pol_b2 = Tensor::zeros({num_actions}, true);
  p.val_w1 = init_weight({feat_dim, hidden}, sd, rng);
  p.val_b1 = Tensor::full({hidden}, 0.01, true);
  p.val_w2 = init_weight({hidden, 1}, sdh, rng);
  p.val_b2 = Tensor::zeros({1}, true);
  return p;
}

NamedParams AgentParams::named_params() const {
  NamedParams out = {
      {"agent.cal_wq", cal_wq}, {"agent.cal_bq", cal_bq},
      {"agent.cal_wk", cal_wk}, {"agent.cal_bk", cal_bk},
      {"agent.cal_wv", cal_wv}, {"agent.cal_bv", cal_bv},
      {"agent.id_t", identity[0]}, {"agent.id_a", identity[1]},
      {"agent.id_v", identity[2]},
      {"agent.enc_wq", enc_wq}, {"agent.enc_bq", enc_bq},
      {"agent.enc_wk", enc_wk}, {"agent.enc_bk", enc_bk},
      {"agent.enc_wv", enc_wv}, {"agent.enc_bv", enc_bv},
      {"agent.enc_wo", enc_wo}, {"agent.enc_bo", enc_bo},
      {"agent.ln1_g", ln1_g}, {"agent.ln1_b", ln1_b},
      {"agent.ln2_g", ln2_g}, {"agent.ln2_b", ln2_b},
      {"agent.ff_w1", ff_w1}, {"agent.ff_b1", ff_b1},
      {"agent.ff_w2", ff_w2}, {"agent.ff_b2", ff_b2},
      {"agent.pol_w1", pol_w1}, {"agent.pol_b1", pol_b1},
      {"agent.pol_w2", pol_w2}, {"agent.pol_b2", pol_b2},
      {"agent.val_w1", val_w1}, {"agent.val_b1", val_b1},
      {"agent.val_w2", val_w2}, {"agent.val_b2", val_b2},
  };
  return out;
}

std::vector<Tensor> AgentParams::trainable_params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

DualViewState augment_state(const DualViewState& state, const AdaConfig& config,
                            Rng& rng) {
  DualViewState out = state;
  std::array<bool, kNumModalities> masked = {false, false, false};
  const double u = rng.uniform();
  if (u < config.p1) {
    masked[static_cast<size_t>(rng.uniform_int(0, kNumModalities - 1))] = true;
  } else if (u < config.p1 + config.p2) {
    const int first = rng.uniform_int(0, kNumModalities - 1);
    int second = rng.uniform_int(0, kNumModalities - 2);
    if (second >= first) ++second;
    masked[static_cast<size_t>(first)] = true;
    masked[static_cast<size_t>(second)] = true;
  }
  for (int mi = 0; mi < kNumModalities; ++mi) {
    auto perturb = [&](const Tensor& t) {
      if (masked[static_cast<size_t>(mi)]) return Tensor::zeros(t.shape());
      if (config.sigma == 0.0) return t;
      std::vector<double> vals = t.values();
      for (auto& v : vals) v += rng.normal(0.0, config.sigma);
      return Tensor(t.shape(), std::move(vals));
    };
    out.affective[static_cast<size_t>(mi)] = perturb(state.affective[static_cast<size_t>(mi)]);
    out.general[static_cast<size_t>(mi)] = perturb(state.general[static_cast<size_t>(mi)]);
  }
  return out;
}

Tensor cognitive_calibration(const Tensor& h_a, const Tensor& h_g,
                             const AgentParams& params, const AdaConfig& config) {
  if (config.use_general && config.use_affective) {
    Tensor q = affine(h_a, params.cal_wq, params.cal_bq);
    Tensor q_row = stack_rows({q});
    Tensor k = affine(h_g, params.cal_wk, params.cal_bk);
    Tensor v = affine(h_g, params.cal_wv, params.cal_bv);
    return row(scaled_dot_attention(q_row, k, v), 0);
  }
  if (!config.use_general)  // affective view only
    return affine(h_a, params.cal_wv, params.cal_bv);
  // general view only: uniform pooling of the value projection
  return mean_rows(affine(h_g, params.cal_wv, params.cal_bv));
}

Tensor encode_state(const std::array<Tensor, kNumModalities>& calibrated,
                    const AgentParams& p) {
  std::vector<Tensor> tokens;
  for (int mi = 0; mi < kNumModalities; ++mi)
    tokens.push_back(add(calibrated[static_cast<size_t>(mi)], p.identity[static_cast<size_t>(mi)]));
  Tensor x = stack_rows(tokens);
  Tensor q = affine(x, p.enc_wq, p.enc_bq);
  Tensor k = affine(x, p.enc_wk, p.enc_bk);
  Tensor v = affine(x, p.enc_wv, p.enc_bv);
  Tensor attended = affine(scaled_dot_attention(q, k, v), p.enc_wo, p.enc_bo);
  Tensor h1 = layer_norm(add(x, attended), p.ln1_g, p.ln1_b);
  Tensor ff = affine(relu(affine(h1, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
  Tensor h2 = layer_norm(add(h1, ff), p.ln2_g, p.ln2_b);
  return mean_rows(h2);
}

PolicyOutput policy_forward(const Tensor& h_m, const AgentParams& p,
                            int num_actions, bool training, Rng* rng) {
  if (p.pol_w2.dim(1) != num_actions)
    throw ArgumentError("policy_forward: head sized for a different action space");
  PolicyOutput out;
  Tensor pol_hidden = relu(affine(h_m, p.pol_w1, p.pol_b1));
  out.probs = softmax(affine(pol_hidden, p.pol_w2, p.pol_b2), 0);
  Tensor val_hidden = relu(affine(h_m, p.val_w1, p.val_b1));
  out.value = pick(affine(val_hidden, p.val_w2, p.val_b2), 0);
  if (training) {
    if (!rng) throw ArgumentError("policy_forward: training mode needs an rng");
    const double u = rng->uniform();
    double acc = 0.0;
    out.chosen = num_actions - 1;
    for (int a = 0; a < num_actions; ++a) {
      acc += out.probs[static_cast<size_t>(a)];
      if (u < acc) {
        out.chosen = a;
        break;
      }
    }
  } else {
    out.chosen = 0;
    for (int a = 1; a < num_actions; ++a)
      if (out.probs[static_cast<size_t>(a)] > out.probs[static_cast<size_t>(out.chosen)])
        out.chosen = a;  // lowest index wins ties
  }
  out.log_prob = pick(log_clamped(out.probs), out.chosen);
  return out;
}

RewardRecord calibration_reward(const std::vector<double>& pred_dist, int label) {
  if (label < 0 || label >= static_cast<int>(pred_dist.size()))
    throw ArgumentError("calibration_reward: label out of range");
  int pred = 0;
  for (int c = 1; c < static_cast<int>(pred_dist.size()); ++c)
    if (pred_dist[static_cast<size_t>(c)] > pred_dist[static_cast<size_t>(pred)]) pred = c;
  RewardRecord rec;
  rec.correct = pred == label;
  rec.confidence_used =
      rec.correct ? pred_dist[static_cast<size_t>(label)] : pred_dist[static_cast<size_t>(pred)];
  rec.r = rec.correct ? rec.confidence_used : -rec.confidence_used;
  return rec;
}

AdaLossBreakdown ada_loss(const std::vector<EpisodeTerms>& episodes,
                          double alpha, double beta, bool value_head) {
  if (episodes.empty()) throw ArgumentError("ada_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(episodes.size());
  Tensor pg = Tensor::scalar(0.0);
  Tensor val = Tensor::scalar(0.0);
  Tensor ent = Tensor::scalar(0.0);
  for (const auto& ep : episodes) {
    pg = add(pg, scale(ep.log_prob, -ep.delta));
    if (value_head)
      val = add(val, square(sub(Tensor::scalar(ep.reward), ep.value)));
    ent = add(ent, entropy(ep.probs));
  }
  AdaLossBreakdown out;
  Tensor l_pg = scale(pg, inv_n);
  Tensor l_val = scale(val, inv_n);
  Tensor h = scale(ent, inv_n);
  out.l_pg = l_pg.item();
  out.l_val = l_val.item();
  out.entropy = h.item();
  out.total = add(l_pg, sub(scale(l_val, alpha), scale(h, beta)));
  return out;
}

std::vector<double> select_pathway_prediction(int action,
                                              const ExpertPredictions& experts,
                                              ActionSpaceMode mode) {
  if (action < 0 || action >= action_count(mode))
    throw ArgumentError("select_pathway_prediction: action outside configured mode");
  if (action < 4) return experts.dists[static_cast<size_t>(action)];
  // pairwise actions: renormalized elementwise geometric mean
  static const int pairs[3][2] = {{2, 1}, {3, 1}, {2, 3}};  // AT, VT, AV
  const auto& a = experts.dists[static_cast<size_t>(pairs[action - 4][0])];
  const auto& b = experts.dists[static_cast<size_t>(pairs[action - 4][1])];
  std::vector<double> out(a.size());
  double z = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    out[i] = std::sqrt(a[i] * b[i]);
    z += out[i];
  }
  if (z <= 0.0) {
    for (auto& v : out) v = 1.0 / static_cast<double>(out.size());
    return out;
  }
  for (auto& v : out) v /= z;
  return out;
}

EpisodeContext build_episode_context(const ExpertBundle& experts,
                                     const GeneralEncoderParams& general,
                                     const Sample& sample) {
  EpisodeContext ctx;
  auto features = encode_all(sample, experts.encoders);
  for (int mi = 0; mi < kNumModalities; ++mi) {
    ctx.state.affective[static_cast<size_t>(mi)] = mean_rows(features[static_cast<size_t>(mi)]).detach();
    ctx.state.general[static_cast<size_t>(mi)] =
        encode_general(sample.signals[static_cast<size_t>(mi)], general).detach();
  }
  ctx.experts = expert_predictions(experts, sample);
  ctx.label = sample.multimodal_label.class_index;
  ctx.conflict = sample.conflict_class;
  return ctx;
}

ExpertBundle freeze_bundle(const ExpertBundle& bundle) {
  ExpertBundle out = bundle;
  auto freeze_enc = [](ModalityEncoder& e) {
    for (Tensor* t : {&e.conv1_k, &e.conv1_b, &e.conv2_k, &e.conv2_b, &e.wq,
                      &e.bq, &e.wk, &e.bk, &e.wv, &e.bv, &e.wo, &e.bo,
                      &e.ln_gain, &e.ln_bias, &e.head_w, &e.head_b})
      *t = t->detach();
  };
  for (auto& m : out.encoders.mods) freeze_enc(m);
  auto& f = out.fusion;
  if (!f.concat_fusion) {
    for (Tensor* t : {&f.wq, &f.bq, &f.wk, &f.bk, &f.wv, &f.bv})
      *t = t->detach();
  }
  f.head_w = f.head_w.detach();
  f.head_b = f.head_b.detach();
  return out;
}

namespace {

bool bundle_is_frozen(const ExpertBundle& b) {
  for (const auto& [name, t] : b.named_params())
    if (t.requires_grad()) return false;
  return true;
}

struct AgentSnapshot {
  std::vector<double> values;
};

AgentSnapshot snapshot_agent(const AgentParams& p) {
  AgentSnapshot s;
  for (const auto& [name, t] : p.named_params())
    s.values.insert(s.values.end(), t.values().begin(), t.values().end());
  return s;
}

void restore_agent(AgentParams& p, const AgentSnapshot& s) {
  size_t pos = 0;
  for (auto& [name, t] : p.named_params()) {
    std::copy(s.values.begin() + static_cast<long>(pos),
              s.values.begin() + static_cast<long>(pos + t.size()),
              t.values().begin());
    pos += t.size();
  }
}

}  // namespace

namespace {

PolicyOutput eval_forward(const AdaAgent& agent, const EpisodeContext& ctx) {
  std::array<Tensor, kNumModalities> calibrated;
  for (int mi = 0; mi < kNumModalities; ++mi)
    calibrated[static_cast<size_t>(mi)] = cognitive_calibration(
        ctx.state.affective[static_cast<size_t>(mi)], ctx.state.general[static_cast<size_t>(mi)],
        agent.params, agent.config);
  Tensor h_m = encode_state(calibrated, agent.params);
  return policy_forward(h_m, agent.params, action_count(agent.config.mode),
                        false, nullptr);
}

}  // namespace

int greedy_action(const AdaAgent& agent, const EpisodeContext& ctx) {
  return eval_forward(agent, ctx).chosen;
}

std::vector<double> policy_distribution(const AdaAgent& agent,
                                        const EpisodeContext& ctx) {
  const Tensor probs = eval_forward(agent, ctx).probs;
  return {probs.values().begin(), probs.values().end()};
}

AdaAgent train_ada(const ExpertBundle& experts,
                   const GeneralEncoderParams& general, const Dataset& ds,
                   const AdaConfig& config, std::ostream* log) {
  config.validate();
  if (!bundle_is_frozen(experts))
    throw ArgumentError("train_ada: expert bundle must be frozen");
  if (ds.train_idx.empty() || ds.valid_idx.empty())
    throw ArgumentError("train_ada: empty split");

  AdaAgent agent;
  agent.config = config;
  Rng init_rng(Rng::mix(config.seed, 0xADAULL));
  const int num_actions = action_count(config.mode);
  agent.params = AgentParams::init(config.feat_dim, config.hidden, num_actions, init_rng);

  // Episodes run against frozen experts; contexts are precomputed once.
  auto build_contexts = [&](const std::vector<int>& idx) {
    std::vector<EpisodeContext> out;
    out.reserve(idx.size());
    for (int i : idx)
      out.push_back(build_episode_context(experts, general, ds.samples[static_cast<size_t>(i)]));
    return out;
  };
  std::vector<EpisodeContext> train_ctx = build_contexts(ds.train_idx);
  std::vector<EpisodeContext> valid_ctx = build_contexts(ds.valid_idx);

  auto valid_accuracy = [&] {
    int correct = 0;
    for (const auto& ctx : valid_ctx) {
      const int a = greedy_action(agent, ctx);
      const auto dist = select_pathway_prediction(a, ctx.experts, config.mode);
      int pred = 0;
      for (int c = 1; c < static_cast<int>(dist.size()); ++c)
        if (dist[static_cast<size_t>(c)] > dist[static_cast<size_t>(pred)]) pred = c;
      if (pred == ctx.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(valid_ctx.size());
  };

  AgentSnapshot best = snapshot_agent(agent.params);
  double best_acc = -1.0;
  int since_best = 0;
  AdamOptimizer opt(agent.params.trainable_params(), config.lr);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng(Rng::mix(config.seed, 0xE9A + static_cast<uint64_t>(epoch)));
    std::vector<size_t> order(train_ctx.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), epoch_rng.engine());

    double reward_sum = 0.0, entropy_sum = 0.0, val_sum = 0.0;
    std::vector<int> action_counts(static_cast<size_t>(num_actions), 0);
    int batches = 0;
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(config.batch)) {
      const size_t end = std::min(order.size(), b + static_cast<size_t>(config.batch));
      std::vector<EpisodeTerms> episodes;
      for (size_t i = b; i < end; ++i) {
        const EpisodeContext& ctx = train_ctx[order[i]];
        DualViewState state = config.augmentation
                                  ? augment_state(ctx.state, config, epoch_rng)
                                  : ctx.state;
        std::array<Tensor, kNumModalities> calibrated;
        for (int mi = 0; mi < kNumModalities; ++mi)
          calibrated[static_cast<size_t>(mi)] = cognitive_calibration(
              state.affective[static_cast<size_t>(mi)], state.general[static_cast<size_t>(mi)],
              agent.params, config);
        Tensor h_m = encode_state(calibrated, agent.params);
        PolicyOutput pol = policy_forward(h_m, agent.params, num_actions, true,
                                          &epoch_rng);
        const auto dist = select_pathway_prediction(pol.chosen, ctx.experts, config.mode);
        RewardRecord rec = calibration_reward(dist, ctx.label);
        if (!config.calibration_reward) rec.r = rec.correct ? 1.0 : -1.0;
        const double v = config.value_head ? pol.value.item() : 0.0;
        rec.delta = rec.r - v;
        episodes.push_back({pol.log_prob, rec.delta, pol.probs, pol.value, rec.r});
        reward_sum += rec.r;
        action_counts[static_cast<size_t>(pol.chosen)]++;
      }
      opt.zero_grad();
      AdaLossBreakdown loss =
          ada_loss(episodes, config.alpha, config.beta, config.value_head);
      loss.total.backward();
      opt.step();
      entropy_sum += loss.entropy;
      val_sum += loss.l_val;
      ++batches;
    }

    const double acc = valid_accuracy();
    if (log) {
      *log << epoch << "," << reward_sum / static_cast<double>(order.size()) << ","
           << entropy_sum / batches << "," << val_sum / batches << "," << acc;
      for (int a = 0; a < num_actions; ++a)
        *log << "," << static_cast<double>(action_counts[static_cast<size_t>(a)]) /
                        static_cast<double>(order.size());
      *log << "\n";
    }
    if (acc > best_acc) {
      best_acc = acc;
      best = snapshot_agent(agent.params);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  restore_agent(agent.params, best);
  return agent;
}

}  // namespace dcr
