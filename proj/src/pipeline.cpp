#include "dcr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dcr/serialize.hpp"

#include <json.hpp>

namespace dcr {

namespace {

constexpr char kCkptMagic[8] = {'D', 'C', 'R', 'C', 'K', 'P', 'T', '1'};

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open file for writing: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace

void RunConfig::validate() const {
  if (dataset_path.empty()) throw ArgumentError("run config: dataset_path is empty");
  if (seeds.empty()) throw ArgumentError("run config: seeds is empty");
  if (afd.epochs < 0 || ada.epochs < 0)
    throw ArgumentError("run config: negative epoch count");
  if (afd.lr <= 0.0 || ada.lr <= 0.0 || general_lr <= 0.0)
    throw ArgumentError("run config: learning rates must be positive");
  if (afd.batch <= 0 || ada.batch <= 0)
    throw ArgumentError("run config: batch sizes must be positive");
  if (afd.feat_dim != ada.feat_dim)
    throw ArgumentError("run config: afd and ada feature dimensions differ");
  if (general_epochs < 0) throw ArgumentError("run config: negative general_epochs");
  ada.validate();
}

std::string RunConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["dataset_path"] = dataset_path;
  kv["out_dir"] = out_dir;
  kv["general_epochs"] = std::to_string(general_epochs);
  kv["general_lr"] = fmt_double(general_lr);
  kv["general_random"] = general_random ? "1" : "0";
  std::string seed_list;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (i) seed_list += ',';
    seed_list += std::to_string(seeds[i]);
  }
  kv["seeds"] = seed_list;
  kv["afd.gamma"] = fmt_double(afd.gamma);
  kv["afd.lambda"] = fmt_double(afd.lambda);
  kv["afd.epochs"] = std::to_string(afd.epochs);
  kv["afd.lr"] = fmt_double(afd.lr);
  kv["afd.batch"] = std::to_string(afd.batch);
  kv["afd.patience"] = std::to_string(afd.patience);
  kv["afd.feat_dim"] = std::to_string(afd.feat_dim);
  kv["afd.freeze_teachers"] = afd.freeze_teachers ? "1" : "0";
  kv["afd.concat_fusion"] = afd.concat_fusion ? "1" : "0";
  kv["ada.alpha"] = fmt_double(ada.alpha);
  kv["ada.beta"] = fmt_double(ada.beta);
  kv["ada.p1"] = fmt_double(ada.p1);
  kv["ada.p2"] = fmt_double(ada.p2);
  kv["ada.sigma"] = fmt_double(ada.sigma);
  kv["ada.epochs"] = std::to_string(ada.epochs);
  kv["ada.lr"] = fmt_double(ada.lr);
  kv["ada.batch"] = std::to_string(ada.batch);
  kv["ada.patience"] = std::to_string(ada.patience);
  kv["ada.hidden"] = std::to_string(ada.hidden);
  kv["ada.mode"] = ada.mode == ActionSpaceMode::Expanded ? "expanded" : "atomic";
  kv["ada.use_general"] = ada.use_general ? "1" : "0";
  kv["ada.use_affective"] = ada.use_affective ? "1" : "0";
  kv["ada.calibration_reward"] = ada.calibration_reward ? "1" : "0";
  kv["ada.value_head"] = ada.value_head ? "1" : "0";
  kv["ada.augmentation"] = ada.augmentation ? "1" : "0";
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto as_bool = [](const std::string& v, const std::string& key) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ParseError("run config: bad boolean for '" + key + "': " + v);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("run config: missing '=' on line " + std::to_string(lineno));
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "dataset_path") cfg.dataset_path = val;
      else if (key == "out_dir") cfg.out_dir = val;
      else if (key == "general_epochs") cfg.general_epochs = std::stoi(val);
      else if (key == "general_lr") cfg.general_lr = std::stod(val);
      else if (key == "general_random") cfg.general_random = as_bool(val, key);
      else if (key == "seeds") {
        cfg.seeds.clear();
        std::istringstream ls(val);
        std::string tok;
        while (std::getline(ls, tok, ','))
          if (!tok.empty()) cfg.seeds.push_back(std::stoull(tok));
      } else if (key == "afd.gamma") cfg.afd.gamma = std::stod(val);
      else if (key == "afd.lambda") cfg.afd.lambda = std::stod(val);
      else if (key == "afd.epochs") cfg.afd.epochs = std::stoi(val);
      else if (key == "afd.lr") cfg.afd.lr = std::stod(val);
      else if (key == "afd.batch") cfg.afd.batch = std::stoi(val);
      else if (key == "afd.patience") cfg.afd.patience = std::stoi(val);
      else if (key == "afd.feat_dim") {
        cfg.afd.feat_dim = std::stoi(val);
        cfg.ada.feat_dim = cfg.afd.feat_dim;
      } else if (key == "afd.freeze_teachers") cfg.afd.freeze_teachers = as_bool(val, key);
      else if (key == "afd.concat_fusion") cfg.afd.concat_fusion = as_bool(val, key);
      else if (key == "ada.alpha") cfg.ada.alpha = std::stod(val);
      else if (key == "ada.beta") cfg.ada.beta = std::stod(val);
      else if (key == "ada.p1") cfg.ada.p1 = std::stod(val);
      else if (key == "ada.p2") cfg.ada.p2 = std::stod(val);
      else if (key == "ada.sigma") cfg.ada.sigma = std::stod(val);
      else if (key == "ada.epochs") cfg.ada.epochs = std::stoi(val);
      else if (key == "ada.lr") cfg.ada.lr = std::stod(val);
      else if (key == "ada.batch") cfg.ada.batch = std::stoi(val);
      else if (key == "ada.patience") cfg.ada.patience = std::stoi(val);
      else if (key == "ada.hidden") cfg.ada.hidden = std::stoi(val);
      else if (key == "ada.mode") {
        if (val == "atomic") cfg.ada.mode = ActionSpaceMode::Atomic;
        else if (val == "expanded") cfg.ada.mode = ActionSpaceMode::Expanded;
        else throw ParseError("run config: unknown action-space mode: " + val);
      } else if (key == "ada.use_general") cfg.ada.use_general = as_bool(val, key);
      else if (key == "ada.use_affective") cfg.ada.use_affective = as_bool(val, key);
      else if (key == "ada.calibration_reward") cfg.ada.calibration_reward = as_bool(val, key);
      else if (key == "ada.value_head") cfg.ada.value_head = as_bool(val, key);
      else if (key == "ada.augmentation") cfg.ada.augmentation = as_bool(val, key);
      else throw ParseError("run config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ParseError("run config: bad value for '" + key + "': " + val);
    } catch (const std::out_of_range&) {
      throw ParseError("run config: value out of range for '" + key + "': " + val);
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  return from_text(read_file(path));
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  detail::ByteWriter w;
  w.raw(kCkptMagic, 8);
  w.u8(static_cast<uint8_t>(ckpt.stage));
  w.str(ckpt.config_text);
  w.u32(static_cast<uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t.ndim()));
    for (int d : t.shape()) w.i32(d);
    for (double v : t.values()) w.f64(v);
  }
  w.u32(static_cast<uint32_t>(ckpt.metric_history.size()));
  for (const auto& row : ckpt.metric_history) w.str(row);
  const uint64_t h = fnv1a64(w.buf.data(), w.buf.size());
  w.u64(h);
  write_file(path, w.buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  if (data.size() < 16) throw ParseError("checkpoint too small: " + path);
  detail::ByteReader r{data};
  char magic[8];
  r.raw(magic, 8, "magic");
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw ParseError("bad checkpoint magic in " + path);
  uint64_t stored;
  std::memcpy(&stored, data.data() + data.size() - 8, 8);
  const uint64_t actual = fnv1a64(data.data(), data.size() - 8);
  if (stored != actual)
    throw IntegrityError("checkpoint content hash mismatch in " + path);
  Checkpoint ckpt;
  const uint8_t stage = r.u8("stage");
  if (stage > 1) throw ParseError("unknown checkpoint stage byte");
  ckpt.stage = static_cast<Stage>(stage);
  ckpt.config_text = r.str("config_text");
  const uint32_t nparams = r.u32("param_count");
  ckpt.params.reserve(nparams);
  for (uint32_t i = 0; i < nparams; ++i) {
    std::string name = r.str("param_name");
    const uint32_t nd = r.u32("param_ndim");
    std::vector<int> shape(nd);
    size_t total = 1;
    for (uint32_t d = 0; d < nd; ++d) {
      shape[d] = r.i32("param_dim");
      if (shape[d] <= 0) throw ParseError("non-positive dimension in parameter " + name);
      total *= static_cast<size_t>(shape[d]);
    }
    std::vector<double> values(total);
    for (size_t k = 0; k < total; ++k) values[k] = r.f64("param_value");
    ckpt.params.emplace_back(std::move(name),
                             Tensor(std::move(shape), std::move(values)));
  }
  const uint32_t nrows = r.u32("history_count");
  for (uint32_t i = 0; i < nrows; ++i)
    ckpt.metric_history.push_back(r.str("history_row"));
  return ckpt;
}

void bind_params(NamedParams& target, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> source;
  for (const auto& [name, t] : ckpt.params) {
    if (!source.emplace(name, &t).second)
      throw IntegrityError("checkpoint has duplicate parameter: " + name);
  }
  std::map<std::string, bool> used;
  for (auto& [name, t] : target) {
    auto it = source.find(name);
    if (it == source.end())
      throw IntegrityError("checkpoint is missing parameter: " + name);
    if (it->second->shape() != t.shape())
      throw IntegrityError("checkpoint shape mismatch for parameter: " + name);
    t.values() = it->second->values();
    used[name] = true;
  }
  for (const auto& [name, t] : ckpt.params) {
    if (!used.count(name))
      throw IntegrityError("checkpoint has unknown parameter: " + name);
  }
}

uint64_t params_hash(const NamedParams& params) {
  detail::ByteWriter w;
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t.ndim()));
    for (int d : t.shape()) w.i32(d);
    for (double v : t.values()) w.f64(v);
  }
  return fnv1a64(w.buf.data(), w.buf.size());
}

namespace {

GeneralEncoderParams make_general_view(const Dataset& ds, const RunConfig& config,
                                       uint64_t seed) {
  if (config.general_random)
    return GeneralEncoderParams::init_random(ds.manifest, config.afd.feat_dim, seed);
  return pretrain_general(ds, config.afd.feat_dim, config.general_epochs,
                          config.general_lr, seed, /*train_encoder=*/true)
      .encoder;
}

struct TestEvaluation {
  std::vector<int> labels;
  std::vector<ConflictClass> conflicts;
  std::vector<int> dcr_preds;
  std::array<std::vector<int>, 4> path_preds;
  std::vector<std::vector<double>> action_probs;
};

TestEvaluation evaluate_on_test(const Dataset& ds, const ExpertBundle& frozen,
                                const GeneralEncoderParams& general,
                                const AdaAgent* agent, ActionSpaceMode mode) {
  TestEvaluation ev;
  for (int idx : ds.test_idx) {
    const Sample& s = ds.samples[static_cast<size_t>(idx)];
    const EpisodeContext ctx = build_episode_context(frozen, general, s);
    ev.labels.push_back(s.multimodal_label.class_index);
    ev.conflicts.push_back(s.conflict_class);
    for (int k = 0; k < 4; ++k)
      ev.path_preds[static_cast<size_t>(k)].push_back(
          argmax(ctx.experts.dists[static_cast<size_t>(k)]));
    if (agent) {
      ev.action_probs.push_back(policy_distribution(*agent, ctx));
      const int a = argmax(ev.action_probs.back());  // greedy selection
      ev.dcr_preds.push_back(argmax(select_pathway_prediction(a, ctx.experts, mode)));
    } else {
      ev.dcr_preds.push_back(argmax(ctx.experts.dists[0]));
    }
  }
  return ev;
}

}  // namespace

RunResult run_sequential(const RunConfig& config) {
  config.validate();
  const Dataset ds = load_dataset(config.dataset_path);
  const bool persist = !config.out_dir.empty();
  if (persist) std::filesystem::create_directories(config.out_dir);
  const std::string config_text = config.to_text();

  RunResult result;
  for (uint64_t seed : config.seeds) {
    SeedResult sr;
    sr.seed = seed;

    AfdConfig afd_cfg = config.afd;
    afd_cfg.seed = seed;
    AdaConfig ada_cfg = config.ada;
    ada_cfg.seed = seed;

    const GeneralEncoderParams general = make_general_view(ds, config, seed);

    std::ofstream afd_log;
    if (persist) {
      afd_log.open(config.out_dir + "/afd_seed" + std::to_string(seed) + ".csv");
      afd_log << "epoch,L_M,L_U,L_KL,total,valid_wf1\n";
    }
    ExpertBundle bundle = train_afd(ds, afd_cfg, persist ? &afd_log : nullptr);
    ExpertBundle frozen = freeze_bundle(bundle);
    sr.expert_hash_before_stage2 = params_hash(frozen.named_params());
    if (persist) {
      Checkpoint ck;
      ck.stage = Stage::Afd;
      ck.config_text = config_text;
      ck.params = frozen.named_params();
      save_checkpoint(ck, config.out_dir + "/afd_seed" + std::to_string(seed) + ".ckpt");
    }

    std::ofstream ada_log;
    if (persist) {
      ada_log.open(config.out_dir + "/ada_seed" + std::to_string(seed) + ".csv");
      ada_log << "epoch,mean_reward,entropy,value_loss,valid_acc";
      for (int a = 0; a < action_count(ada_cfg.mode); ++a)
        ada_log << ",freq_" << action_name(a, ada_cfg.mode);
      ada_log << "\n";
    }
    AdaAgent agent = train_ada(frozen, general, ds, ada_cfg,
                               persist ? &ada_log : nullptr);
    sr.expert_hash_after_stage2 = params_hash(frozen.named_params());
    if (persist) {
      Checkpoint ck;
      ck.stage = Stage::Ada;
      ck.config_text = config_text;
      ck.params = agent.params.named_params();
      save_checkpoint(ck, config.out_dir + "/ada_seed" + std::to_string(seed) + ".ckpt");
    }

    const TestEvaluation ev =
        evaluate_on_test(ds, frozen, general, &agent, ada_cfg.mode);
    sr.dcr = compute_metrics(ev.dcr_preds, ev.labels, ds.manifest);
    for (int k = 0; k < 4; ++k)
      sr.single_path[static_cast<size_t>(k)] = compute_metrics(
          ev.path_preds[static_cast<size_t>(k)], ev.labels, ds.manifest);
    sr.dcr_subsets = conflict_subset_eval(ev.dcr_preds, ev.labels, ev.conflicts);
    sr.actions = action_distribution(ev.action_probs, ev.conflicts);

    // Fusion-only baseline: the same cross-attention fusion trained with
    // L_M alone, no agent.
    AfdConfig base_cfg = afd_cfg;
    base_cfg.gamma = 0.0;
    base_cfg.lambda = 0.0;
    ExpertBundle base = freeze_bundle(train_afd(ds, base_cfg, nullptr));
    const TestEvaluation bev =
        evaluate_on_test(ds, base, general, nullptr, ada_cfg.mode);
    sr.fusion_baseline = compute_metrics(bev.dcr_preds, bev.labels, ds.manifest);
    sr.baseline_subsets =
        conflict_subset_eval(bev.dcr_preds, bev.labels, bev.conflicts);

    result.per_seed.push_back(std::move(sr));
  }

  auto agg = [&result](const std::string& name, auto getter) {
    std::vector<double> xs;
    for (const auto& sr : result.per_seed) xs.push_back(getter(sr));
    result.aggregate[name] = mean_std(xs);
  };
  agg("dcr_accuracy", [](const SeedResult& s) { return s.dcr.accuracy; });
  agg("dcr_wf1", [](const SeedResult& s) { return s.dcr.weighted_f1; });
  agg("dcr_mae", [](const SeedResult& s) { return s.dcr.mae; });
  agg("baseline_accuracy",
      [](const SeedResult& s) { return s.fusion_baseline.accuracy; });
  agg("baseline_wf1",
      [](const SeedResult& s) { return s.fusion_baseline.weighted_f1; });
  const char* path_names[4] = {"path_m", "path_t", "path_a", "path_v"};
  for (int k = 0; k < 4; ++k) {
    agg(std::string(path_names[k]) + "_accuracy", [k](const SeedResult& s) {
      return s.single_path[static_cast<size_t>(k)].accuracy;
    });
  }
  auto subset_mean = [&](const std::string& name, const char* subset, bool dcr) {
    std::vector<double> xs;
    for (const auto& sr : result.per_seed) {
      const auto& subsets = dcr ? sr.dcr_subsets : sr.baseline_subsets;
      auto it = subsets.find(subset);
      if (it != subsets.end() && it->second.accuracy) xs.push_back(*it->second.accuracy);
    }
    if (!xs.empty()) result.aggregate[name] = mean_std(xs);
  };
  subset_mean("dcr_severe_accuracy", "severe", true);
  subset_mean("dcr_benign_accuracy", "benign", true);
  subset_mean("baseline_severe_accuracy", "severe", false);
  subset_mean("baseline_benign_accuracy", "benign", false);

  if (persist) write_run_result(result, config.out_dir);
  return result;
}

void write_run_result(const RunResult& result, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream csv(out_dir + "/per_seed.csv");
    csv << "seed,dcr_accuracy,dcr_wf1,dcr_mae,baseline_accuracy,baseline_wf1,"
           "path_m_accuracy,path_t_accuracy,path_a_accuracy,path_v_accuracy,"
           "dcr_severe_accuracy,baseline_severe_accuracy\n";
    for (const auto& sr : result.per_seed) {
      csv << sr.seed << "," << sr.dcr.accuracy << "," << sr.dcr.weighted_f1 << ","
          << sr.dcr.mae << "," << sr.fusion_baseline.accuracy << ","
          << sr.fusion_baseline.weighted_f1;
      for (int k = 0; k < 4; ++k)
        csv << "," << sr.single_path[static_cast<size_t>(k)].accuracy;
      auto sev = [](const std::map<std::string, SubsetAccuracy>& m) {
        auto it = m.find("severe");
        return it != m.end() && it->second.accuracy
                   ? std::to_string(*it->second.accuracy)
                   : std::string("nan");
      };
      csv << "," << sev(sr.dcr_subsets) << "," << sev(sr.baseline_subsets) << "\n";
    }
  }
  {
    nlohmann::json j;
    for (const auto& [name, ms] : result.aggregate)
      j["aggregate"][name] = {{"mean", ms.first}, {"std", ms.second}};
    for (const auto& sr : result.per_seed) {
      nlohmann::json js;
      js["seed"] = sr.seed;
      js["dcr"] = {{"accuracy", sr.dcr.accuracy},
                   {"weighted_f1", sr.dcr.weighted_f1},
                   {"mae", sr.dcr.mae}};
      if (sr.dcr.corr) js["dcr"]["corr"] = *sr.dcr.corr;
      js["fusion_baseline"] = {{"accuracy", sr.fusion_baseline.accuracy},
                               {"weighted_f1", sr.fusion_baseline.weighted_f1}};
      const char* path_names[4] = {"m", "t", "a", "v"};
      for (int k = 0; k < 4; ++k)
        js["single_path"][path_names[k]] = {
            {"accuracy", sr.single_path[static_cast<size_t>(k)].accuracy}};
      auto subsets_json = [](const std::map<std::string, SubsetAccuracy>& m) {
        nlohmann::json out;
        for (const auto& [key, sub] : m) {
          out[key]["count"] = sub.count;
          if (sub.accuracy) out[key]["accuracy"] = *sub.accuracy;
        }
        return out;
      };
      js["dcr_subsets"] = subsets_json(sr.dcr_subsets);
      js["baseline_subsets"] = subsets_json(sr.baseline_subsets);
      for (const auto& [subset, freq] : sr.actions.freq)
        js["actions"][subset] = freq;
      js["expert_hash_before_stage2"] = sr.expert_hash_before_stage2;
      js["expert_hash_after_stage2"] = sr.expert_hash_after_stage2;
      j["per_seed"].push_back(std::move(js));
    }
    std::ofstream out(out_dir + "/summary.json");
    out << j.dump(2) << "\n";
  }
}

namespace {

// Ablation variants reuse trained expert bundles where the AFD recipe is
// identical; the cache is keyed by the recipe name per seed.
struct AblationWorkspace {
  const Dataset& ds;
  const RunConfig& base;
  std::map<uint64_t, GeneralEncoderParams> general;
  std::map<std::string, std::map<uint64_t, ExpertBundle>> bundles;

  const GeneralEncoderParams& general_for(uint64_t seed) {
    auto it = general.find(seed);
    if (it == general.end())
      it = general.emplace(seed, make_general_view(ds, base, seed)).first;
    return it->second;
  }

  const ExpertBundle& bundle_for(const std::string& recipe, uint64_t seed) {
    auto& per_seed = bundles[recipe];
    auto it = per_seed.find(seed);
    if (it != per_seed.end()) return it->second;
    AfdConfig cfg = base.afd;
    cfg.seed = seed;
    if (recipe == "standard") {
      // full AFD objective as configured
    } else if (recipe == "no_distillation") {
      cfg.lambda = 0.0;
    } else if (recipe == "task_only") {
      cfg.gamma = 0.0;
      cfg.lambda = 0.0;
    } else if (recipe == "concat_task_only") {
      cfg.gamma = 0.0;
      cfg.lambda = 0.0;
      cfg.concat_fusion = true;
    }
    it = per_seed.emplace(seed, freeze_bundle(train_afd(ds, cfg, nullptr))).first;
    return it->second;
  }
};

struct VariantPlan {
  std::string afd_recipe = "standard";
  bool run_ada = true;
  AdaConfig ada;
};

VariantPlan plan_variant(const std::string& name, const RunConfig& base) {
  VariantPlan plan;
  plan.ada = base.ada;
  if (name == "full") {
  } else if (name == "afd_only") {
    plan.run_ada = false;
  } else if (name == "ada_only") {
    // Without Path I the bundle is trained with L_M alone (gamma and lambda
    // both belong to the distillation path).
    plan.afd_recipe = "task_only";
  } else if (name == "neither") {
    plan.afd_recipe = "task_only";
    plan.run_ada = false;
  } else if (name == "concat") {
    plan.afd_recipe = "concat_task_only";
    plan.run_ada = false;
  } else if (name == "no_general") {
    plan.ada.use_general = false;
  } else if (name == "no_affective") {
    plan.ada.use_affective = false;
  } else if (name == "no_calibration_reward") {
    plan.ada.calibration_reward = false;
  } else if (name == "no_value_head") {
    plan.ada.value_head = false;
  } else if (name == "no_augmentation") {
    plan.ada.augmentation = false;
  } else if (name == "expanded") {
    plan.ada.mode = ActionSpaceMode::Expanded;
  } else {
    throw ArgumentError("unknown ablation variant: " + name);
  }
  return plan;
}

}  // namespace

std::vector<AblationRow> ablation_runner(const RunConfig& config,
                                         const std::vector<std::string>& variants) {
  config.validate();
  if (variants.empty()) throw ArgumentError("ablation: no variants requested");
  // Fail fast on unknown names before any training happens.
  for (const auto& name : variants) (void)plan_variant(name, config);
  const Dataset ds = load_dataset(config.dataset_path);
  AblationWorkspace ws{ds, config, {}, {}};

  std::vector<AblationRow> rows;
  for (const auto& name : variants) {
    const VariantPlan plan = plan_variant(name, config);
    std::vector<double> accs, wf1s;
    for (uint64_t seed : config.seeds) {
      const ExpertBundle& bundle = ws.bundle_for(plan.afd_recipe, seed);
      const GeneralEncoderParams& general = ws.general_for(seed);
      AdaConfig ada_cfg = plan.ada;
      ada_cfg.seed = seed;
      std::optional<AdaAgent> agent;
      if (plan.run_ada) agent = train_ada(bundle, general, ds, ada_cfg, nullptr);
      const TestEvaluation ev = evaluate_on_test(
          ds, bundle, general, agent ? &*agent : nullptr, ada_cfg.mode);
      const MetricsReport m = compute_metrics(ev.dcr_preds, ev.labels, ds.manifest);
      accs.push_back(m.accuracy);
      wf1s.push_back(m.weighted_f1);
    }
    AblationRow row;
    row.variant = name;
    std::tie(row.mean_accuracy, row.std_accuracy) = mean_std(accs);
    std::tie(row.mean_wf1, row.std_wf1) = mean_std(wf1s);
    rows.push_back(std::move(row));
  }

  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    std::ofstream csv(config.out_dir + "/ablation.csv");
    csv << "variant,mean_accuracy,std_accuracy,mean_wf1,std_wf1\n";
    for (const auto& row : rows)
      csv << row.variant << "," << row.mean_accuracy << "," << row.std_accuracy
          << "," << row.mean_wf1 << "," << row.std_wf1 << "\n";
  }
  return rows;
}

}  // namespace dcr
