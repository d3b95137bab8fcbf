// Command-line front end: dataset generation, staged training, evaluation,
// and the ablation matrix. Exit codes: 0 success, 2 argument/parse errors,
// 3 integrity errors.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcr/pipeline.hpp"

namespace {

using namespace dcr;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Common overrides shared by every subcommand.
struct CommonOpts {
  std::string config;
  std::string dataset;
  std::string out;
  std::optional<int64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config, "configuration file");
  cmd->add_option("--dataset", opts.dataset, "dataset file");
  cmd->add_option("--out", opts.out, "output directory");
  cmd->add_option_function<int64_t>(
      "--seed", [&opts](int64_t v) { opts.seed = v; }, "override the seed list");
}

RunConfig load_run_config(const CommonOpts& opts, bool config_required) {
  RunConfig cfg;
  if (!opts.config.empty())
    cfg = RunConfig::load(opts.config);
  else if (config_required)
    throw ArgumentError("--config is required for this subcommand");
  if (!opts.dataset.empty()) cfg.dataset_path = opts.dataset;
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  if (opts.seed) cfg.seeds = {static_cast<uint64_t>(*opts.seed)};
  return cfg;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report,
                       const std::map<std::string, SubsetAccuracy>& subsets) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write file: " + path);
  out << "metric,value\n";
  out << "accuracy," << report.accuracy << "\n";
  out << "weighted_f1," << report.weighted_f1 << "\n";
  for (const auto& [name, s] : subsets) {
    out << "accuracy_" << name << ",";
    if (s.accuracy) out << *s.accuracy;
    out << "\n";
  }
}

int cmd_generate(const CommonOpts& opts, int n) {
  DatasetManifest manifest;
  if (!opts.config.empty())
    manifest = DatasetManifest::from_text(read_file(opts.config));
  if (opts.seed) manifest.seed = static_cast<uint64_t>(*opts.seed);
  if (opts.dataset.empty())
    throw ArgumentError("generate: --dataset names the output file");
  const Dataset ds = generate_dataset(manifest, n, manifest.seed);
  if (auto dir = std::filesystem::path(opts.dataset).parent_path(); !dir.empty())
    std::filesystem::create_directories(dir);
  save_dataset(ds, opts.dataset);
  std::cout << "wrote " << ds.samples.size() << " samples to " << opts.dataset
            << "\n";
  return 0;
}

int cmd_train_afd(const CommonOpts& opts) {
  RunConfig cfg = load_run_config(opts, /*config_required=*/false);
  if (cfg.dataset_path.empty()) throw ArgumentError("train-afd: --dataset is required");
  if (cfg.out_dir.empty()) throw ArgumentError("train-afd: --out is required");
  const Dataset ds = load_dataset(cfg.dataset_path);
  std::filesystem::create_directories(cfg.out_dir);
  for (uint64_t seed : cfg.seeds) {
    AfdConfig afd = cfg.afd;
    afd.seed = seed;
    const std::string stem = cfg.out_dir + "/afd_seed" + std::to_string(seed);
    std::ofstream log(stem + ".csv");
    log << "epoch,L_M,L_U,L_KL,total,valid_wf1\n";
    const ExpertBundle bundle = train_afd(ds, afd, &log);
    Checkpoint ck;
    ck.stage = Stage::Afd;
    ck.config_text = cfg.to_text();
    ck.params = bundle.named_params();
    save_checkpoint(ck, stem + ".ckpt");
    std::cout << "seed " << seed << ": wrote " << stem << ".ckpt\n";
  }
  return 0;
}

// Rebuilds a frozen expert bundle from an AFD checkpoint.
ExpertBundle bundle_from_checkpoint(const Dataset& ds, const RunConfig& cfg,
                                    const std::string& path) {
  AfdConfig init_cfg = cfg.afd;
  init_cfg.epochs = 0;
  ExpertBundle bundle = train_afd(ds, init_cfg, nullptr);
  const Checkpoint ck = load_checkpoint(path);
  if (ck.stage != Stage::Afd)
    throw ArgumentError("expected a stage-1 checkpoint: " + path);
  NamedParams target = bundle.named_params();
  bind_params(target, ck);
  return freeze_bundle(bundle);
}

int cmd_train_ada(const CommonOpts& opts, const std::string& ckpt_path) {
  RunConfig cfg = load_run_config(opts, /*config_required=*/false);
  if (cfg.dataset_path.empty()) throw ArgumentError("train-ada: --dataset is required");
  if (cfg.out_dir.empty()) throw ArgumentError("train-ada: --out is required");
  const Dataset ds = load_dataset(cfg.dataset_path);
  std::filesystem::create_directories(cfg.out_dir);
  for (uint64_t seed : cfg.seeds) {
    const std::string afd_path =
        !ckpt_path.empty()
            ? ckpt_path
            : cfg.out_dir + "/afd_seed" + std::to_string(seed) + ".ckpt";
    const ExpertBundle frozen = bundle_from_checkpoint(ds, cfg, afd_path);
    const GeneralEncoderParams general =
        cfg.general_random
            ? GeneralEncoderParams::init_random(ds.manifest, cfg.afd.feat_dim, seed)
            : pretrain_general(ds, cfg.afd.feat_dim, cfg.general_epochs,
                               cfg.general_lr, seed)
                  .encoder;
    AdaConfig ada = cfg.ada;
    ada.seed = seed;
    const std::string stem = cfg.out_dir + "/ada_seed" + std::to_string(seed);
    std::ofstream log(stem + ".csv");
    log << "epoch,mean_reward,entropy,value_loss,valid_acc";
    for (int a = 0; a < action_count(ada.mode); ++a)
      log << ",freq_" << action_name(a, ada.mode);
    log << "\n";
    const AdaAgent agent = train_ada(frozen, general, ds, ada, &log);
    Checkpoint ck;
    ck.stage = Stage::Ada;
    ck.config_text = cfg.to_text();
    ck.params = agent.params.named_params();
    save_checkpoint(ck, stem + ".ckpt");
    std::cout << "seed " << seed << ": wrote " << stem << ".ckpt\n";
  }
  return 0;
}

int cmd_run(const CommonOpts& opts) {
  RunConfig cfg = load_run_config(opts, /*config_required=*/true);
  const RunResult result = run_sequential(cfg);
  if (!cfg.out_dir.empty()) write_run_result(result, cfg.out_dir);
  for (const auto& [name, ms] : result.aggregate)
    std::cout << name << ": " << ms.first << " +/- " << ms.second << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path,
             const std::string& agent_path) {
  RunConfig cfg = load_run_config(opts, /*config_required=*/false);
  if (cfg.dataset_path.empty()) throw ArgumentError("eval: --dataset is required");
  if (ckpt_path.empty()) throw ArgumentError("eval: --checkpoint is required");
  const Dataset ds = load_dataset(cfg.dataset_path);
  const ExpertBundle frozen = bundle_from_checkpoint(ds, cfg, ckpt_path);

  std::optional<AdaAgent> agent;
  GeneralEncoderParams general;
  if (!agent_path.empty()) {
    const Checkpoint ck = load_checkpoint(agent_path);
    if (ck.stage != Stage::Ada)
      throw ArgumentError("expected a stage-2 checkpoint: " + agent_path);
    // Seed only shapes the initialization; values are then overwritten.
    Rng rng(cfg.ada.seed);
    AdaAgent a;
    a.config = cfg.ada;
    a.params = AgentParams::init(cfg.ada.feat_dim, cfg.ada.hidden,
                                 action_count(cfg.ada.mode), rng);
    NamedParams target = a.params.named_params();
    bind_params(target, ck);
    agent = std::move(a);
    const uint64_t seed = cfg.seeds.empty() ? cfg.ada.seed : cfg.seeds.front();
    general = cfg.general_random
                  ? GeneralEncoderParams::init_random(ds.manifest,
                                                      cfg.afd.feat_dim, seed)
                  : pretrain_general(ds, cfg.afd.feat_dim, cfg.general_epochs,
                                     cfg.general_lr, seed)
                        .encoder;
  }

  std::vector<int> preds, labels;
  std::vector<ConflictClass> conflicts;
  for (int idx : ds.test_idx) {
    const Sample& s = ds.samples[static_cast<size_t>(idx)];
    std::vector<double> dist;
    if (agent) {
      const EpisodeContext ctx = build_episode_context(frozen, general, s);
      const int a = greedy_action(*agent, ctx);
      dist = select_pathway_prediction(a, ctx.experts, cfg.ada.mode);
    } else {
      dist = expert_predictions(frozen, s).dists[0];
    }
    int best = 0;
    for (size_t c = 1; c < dist.size(); ++c)
      if (dist[c] > dist[static_cast<size_t>(best)]) best = static_cast<int>(c);
    preds.push_back(best);
    labels.push_back(s.multimodal_label.class_index);
    conflicts.push_back(s.conflict_class);
  }
  const MetricsReport report = compute_metrics(preds, labels, ds.manifest);
  const auto subsets = conflict_subset_eval(preds, labels, conflicts);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_metrics_csv(cfg.out_dir + "/eval.csv", report, subsets);
  }
  std::cout << "accuracy: " << report.accuracy
            << "\nweighted_f1: " << report.weighted_f1 << "\n";
  for (const auto& [name, s] : subsets)
    if (s.accuracy) std::cout << "accuracy_" << name << ": " << *s.accuracy << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::vector<std::string>& variants) {
  RunConfig cfg = load_run_config(opts, /*config_required=*/true);
  const auto rows = ablation_runner(cfg, variants);
  std::cout << "variant,mean_accuracy,std_accuracy,mean_wf1,std_wf1\n";
  for (const auto& row : rows)
    std::cout << row.variant << "," << row.mean_accuracy << ","
              << row.std_accuracy << "," << row.mean_wf1 << "," << row.std_wf1
              << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-path conflict resolution for multimodal emotion recognition"};
  app.require_subcommand(1);

  CommonOpts opts;
  int gen_n = 3000;
  std::string ckpt_path, agent_path;
  std::vector<std::string> variants;

  auto* generate = app.add_subcommand("generate", "generate a synthetic dataset");
  add_common(generate, opts);
  generate->add_option("--n", gen_n, "number of samples");

  auto* train_afd_cmd = app.add_subcommand("train-afd", "stage 1: train the experts");
  add_common(train_afd_cmd, opts);

  auto* train_ada_cmd =
      app.add_subcommand("train-ada", "stage 2: train the arbitration agent");
  add_common(train_ada_cmd, opts);
  train_ada_cmd->add_option("--checkpoint", ckpt_path, "stage-1 checkpoint");

  auto* run = app.add_subcommand("run", "full two-stage pipeline");
  add_common(run, opts);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval, opts);
  eval->add_option("--checkpoint", ckpt_path, "stage-1 checkpoint");
  eval->add_option("--agent", agent_path, "stage-2 checkpoint (optional)");

  auto* ablate = app.add_subcommand("ablate", "run ablation variants");
  add_common(ablate, opts);
  ablate->add_option("--variants", variants, "variant names")->delimiter(',');

  try {
    app.parse(argc, argv);
    if (generate->parsed()) return cmd_generate(opts, gen_n);
    if (train_afd_cmd->parsed()) return cmd_train_afd(opts);
    if (train_ada_cmd->parsed()) return cmd_train_ada(opts, ckpt_path);
    if (run->parsed()) return cmd_run(opts);
    if (eval->parsed()) return cmd_eval(opts, ckpt_path, agent_path);
    if (ablate->parsed()) return cmd_ablate(opts, variants);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const dcr::IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const dcr::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const dcr::ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  }
}
