#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dcr/pipeline.hpp"

using namespace dcr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dcr_pipeline_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string str(const std::string& name) const { return (path / name).string(); }
};

RunConfig small_config(const std::string& dataset_path, const std::string& out_dir) {
  RunConfig c;
  c.dataset_path = dataset_path;
  c.out_dir = out_dir;
  c.afd.feat_dim = 8;
  c.afd.epochs = 3;
  c.afd.batch = 16;
  c.afd.lr = 3e-3;
  c.ada.feat_dim = 8;
  c.ada.hidden = 8;
  c.ada.epochs = 3;
  c.ada.batch = 16;
  c.ada.lr = 1e-3;
  c.general_epochs = 1;
  c.seeds = {41, 42};
  return c;
}

Dataset write_small_dataset(const std::string& path, uint64_t seed) {
  DatasetManifest m;
  m.seq_len = {6, 6, 6};
  m.raw_dim = {4, 4, 4};
  m.seed = seed;
  Dataset ds = generate_dataset(m, 60, seed);
  save_dataset(ds, path);
  return ds;
}

}  // namespace

TEST_CASE("run config round-trips through its text form") {
  RunConfig c;
  c.dataset_path = "data/train.bin";
  c.out_dir = "runs/exp1";
  c.afd.gamma = 0.75;
  c.afd.lambda = 0.25;
  c.afd.epochs = 7;
  c.ada.mode = ActionSpaceMode::Expanded;
  c.ada.p1 = 0.3;
  c.ada.sigma = 0.005;
  c.ada.use_general = false;
  c.general_random = true;
  c.seeds = {7, 8, 9};
  const std::string text = c.to_text();
  const RunConfig back = RunConfig::from_text(text);
  CHECK(back.dataset_path == c.dataset_path);
  CHECK(back.out_dir == c.out_dir);
  CHECK(back.afd.gamma == c.afd.gamma);
  CHECK(back.afd.lambda == c.afd.lambda);
  CHECK(back.afd.epochs == c.afd.epochs);
  CHECK(back.ada.mode == c.ada.mode);
  CHECK(back.ada.p1 == c.ada.p1);
  CHECK(back.ada.sigma == c.ada.sigma);
  CHECK(back.ada.use_general == c.ada.use_general);
  CHECK(back.general_random == c.general_random);
  CHECK(back.seeds == c.seeds);
  // serialization is canonical: a second round trip is bitwise identical
  CHECK(back.to_text() == text);
}

TEST_CASE("run config parsing rejects malformed input") {
  CHECK_THROWS_AS(RunConfig::from_text("no_such_key = 1\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_text("afd.epochs = banana\n"), ParseError);
  CHECK_THROWS_AS(RunConfig::from_text("afd.epochs\n"), ParseError);
}

TEST_CASE("run config validation catches bad values") {
  TempDir tmp;
  write_small_dataset(tmp.str("ds.bin"), 1);
  RunConfig c = small_config(tmp.str("ds.bin"), "");
  CHECK_NOTHROW(c.validate());
  RunConfig bad = c;
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = c;
  bad.afd.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = c;
  bad.ada.feat_dim = 16;  // must match afd.feat_dim
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = c;
  bad.dataset_path = tmp.str("missing.bin");
  // a missing dataset surfaces when the run tries to load it
  CHECK_THROWS_AS(run_sequential(bad), ArgumentError);
}

TEST_CASE("checkpoints round-trip bitwise") {
  TempDir tmp;
  Checkpoint ck;
  ck.stage = Stage::Ada;
  ck.config_text = "afd.epochs = 3\n";
  ck.params.emplace_back("w", Tensor({2, 2}, {1.0, -2.5, 3.25, 1e-17}));
  ck.params.emplace_back("b", Tensor({3}, {0.0, -0.0, 42.0}));
  ck.metric_history = {"1,0.5", "2,0.25"};
  save_checkpoint(ck, tmp.str("ck.bin"));
  const Checkpoint back = load_checkpoint(tmp.str("ck.bin"));
  CHECK(back.stage == Stage::Ada);
  CHECK(back.config_text == ck.config_text);
  CHECK(back.metric_history == ck.metric_history);
  REQUIRE(back.params.size() == 2);
  CHECK(back.params[0].first == "w");
  CHECK(back.params[0].second.shape() == std::vector<int>{2, 2});
  for (size_t i = 0; i < 4; ++i)
    CHECK(back.params[0].second[i] == ck.params[0].second[i]);
  CHECK(back.params[1].first == "b");
  for (size_t i = 0; i < 3; ++i)
    CHECK(back.params[1].second[i] == ck.params[1].second[i]);
}

TEST_CASE("a corrupted checkpoint raises IntegrityError, a foreign file ParseError") {
  TempDir tmp;
  Checkpoint ck;
  ck.params.emplace_back("w", Tensor({2}, {1.5, 2.5}));
  save_checkpoint(ck, tmp.str("ck.bin"));

  std::string bytes;
  {
    std::ifstream in(tmp.str("ck.bin"), std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  REQUIRE(bytes.size() > 20);
  // flip one payload byte between the magic and the trailing hash
  std::string tampered = bytes;
  tampered[bytes.size() / 2] = static_cast<char>(tampered[bytes.size() / 2] ^ 0x01);
  {
    std::ofstream out(tmp.str("bad.bin"), std::ios::binary);
    out.write(tampered.data(), static_cast<std::streamsize>(tampered.size()));
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.str("bad.bin")), IntegrityError);

  {
    std::ofstream out(tmp.str("foreign.bin"), std::ios::binary);
    out << "NOTACKPT-and-then-some-bytes";
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.str("foreign.bin")), ParseError);
  CHECK_THROWS_AS(load_checkpoint(tmp.str("absent.bin")), ArgumentError);

  // truncation also fails closed
  std::string cut = bytes.substr(0, bytes.size() - 3);
  {
    std::ofstream out(tmp.str("cut.bin"), std::ios::binary);
    out.write(cut.data(), static_cast<std::streamsize>(cut.size()));
  }
  CHECK_THROWS(load_checkpoint(tmp.str("cut.bin")));
}

TEST_CASE("bind_params restores values and rejects mismatches") {
  Checkpoint ck;
  ck.params.emplace_back("a", Tensor({2}, {3.0, 4.0}));
  ck.params.emplace_back("b", Tensor({1}, {5.0}));

  NamedParams target;
  target.emplace_back("a", Tensor::zeros({2}));
  target.emplace_back("b", Tensor::zeros({1}));
  bind_params(target, ck);
  CHECK(target[0].second[0] == 3.0);
  CHECK(target[0].second[1] == 4.0);
  CHECK(target[1].second[0] == 5.0);

  NamedParams missing;
  missing.emplace_back("a", Tensor::zeros({2}));
  CHECK_THROWS_AS(bind_params(missing, ck), IntegrityError);

  NamedParams extra = target;
  extra.emplace_back("c", Tensor::zeros({1}));
  CHECK_THROWS_AS(bind_params(extra, ck), IntegrityError);

  NamedParams wrong_shape;
  wrong_shape.emplace_back("a", Tensor::zeros({3}));
  wrong_shape.emplace_back("b", Tensor::zeros({1}));
  CHECK_THROWS_AS(bind_params(wrong_shape, ck), IntegrityError);
}

TEST_CASE("params_hash is stable and sensitive to every component") {
  NamedParams p;
  p.emplace_back("w", Tensor({2}, {1.0, 2.0}));
  const uint64_t h = params_hash(p);
  CHECK(params_hash(p) == h);

  NamedParams renamed;
  renamed.emplace_back("v", Tensor({2}, {1.0, 2.0}));
  CHECK(params_hash(renamed) != h);

  NamedParams reshaped;
  reshaped.emplace_back("w", Tensor({2, 1}, {1.0, 2.0}));
  CHECK(params_hash(reshaped) != h);

  NamedParams nudged;
  nudged.emplace_back("w", Tensor({2}, {1.0, 2.0 + 1e-15}));
  CHECK(params_hash(nudged) != h);
}

TEST_CASE("sequential run: determinism, frozen experts, sane aggregates") {
  TempDir tmp;
  write_small_dataset(tmp.str("ds.bin"), 3);
  RunConfig cfg = small_config(tmp.str("ds.bin"), tmp.str("out"));
  const RunResult r1 = run_sequential(cfg);
  const RunResult r2 = run_sequential(cfg);

  REQUIRE(r1.per_seed.size() == 2);
  for (size_t i = 0; i < r1.per_seed.size(); ++i) {
    const auto& a = r1.per_seed[i];
    const auto& b = r2.per_seed[i];
    CHECK(a.seed == cfg.seeds[i]);
    CHECK(a.dcr.accuracy == b.dcr.accuracy);
    CHECK(a.dcr.weighted_f1 == b.dcr.weighted_f1);
    CHECK(a.fusion_baseline.accuracy == b.fusion_baseline.accuracy);
    // stage 2 must not move the frozen experts
    CHECK(a.expert_hash_before_stage2 == a.expert_hash_after_stage2);
    CHECK(a.expert_hash_before_stage2 == b.expert_hash_before_stage2);
    CHECK(a.dcr.accuracy >= 0.0);
    CHECK(a.dcr.accuracy <= 1.0);
    // conflict partition covers the whole test split
    int total = 0;
    for (const auto& [name, sub] : a.dcr_subsets)
      if (name != "all") total += sub.count;
    CHECK(total == a.dcr_subsets.at("all").count);
  }

  // aggregate means/stds match an external oracle
  auto oracle = [&](auto getter) {
    double mean = 0.0;
    for (const auto& s : r1.per_seed) mean += getter(s);
    mean /= static_cast<double>(r1.per_seed.size());
    double var = 0.0;
    for (const auto& s : r1.per_seed) {
      const double d = getter(s) - mean;
      var += d * d;
    }
    var /= static_cast<double>(r1.per_seed.size());
    return std::pair<double, double>(mean, std::sqrt(var));
  };
  const auto acc = oracle([](const SeedResult& s) { return s.dcr.accuracy; });
  CHECK(r1.aggregate.at("dcr_accuracy").first ==
        doctest::Approx(acc.first).epsilon(1e-12));
  CHECK(r1.aggregate.at("dcr_accuracy").second ==
        doctest::Approx(acc.second).epsilon(1e-12));
  const auto base = oracle([](const SeedResult& s) { return s.fusion_baseline.accuracy; });
  CHECK(r1.aggregate.at("baseline_accuracy").first ==
        doctest::Approx(base.first).epsilon(1e-12));

  // artifacts land in out_dir
  CHECK(fs::exists(tmp.path / "out" / "afd_seed41.ckpt"));
  CHECK(fs::exists(tmp.path / "out" / "ada_seed41.ckpt"));
  CHECK(fs::exists(tmp.path / "out" / "afd_seed41.csv"));
  CHECK(fs::exists(tmp.path / "out" / "ada_seed41.csv"));
  std::ifstream log(tmp.str("out") + "/afd_seed41.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "epoch,L_M,L_U,L_KL,total,valid_wf1");

  // the stage-1 checkpoint stores exactly the frozen expert parameters
  const Checkpoint ck = load_checkpoint(tmp.str("out") + "/afd_seed41.ckpt");
  CHECK(ck.stage == Stage::Afd);
  CHECK(params_hash(ck.params) == r1.per_seed[0].expert_hash_before_stage2);

  write_run_result(r1, tmp.str("out"));
  CHECK(fs::exists(tmp.path / "out" / "per_seed.csv"));
  CHECK(fs::exists(tmp.path / "out" / "summary.json"));
  std::ifstream csv(tmp.str("out") + "/per_seed.csv");
  std::string first;
  std::getline(csv, first);
  CHECK(first.rfind("seed,", 0) == 0);
}

TEST_CASE("ablation runner validates variants before training") {
  TempDir tmp;
  write_small_dataset(tmp.str("ds.bin"), 5);
  RunConfig cfg = small_config(tmp.str("ds.bin"), "");
  CHECK_THROWS_AS(ablation_runner(cfg, {"full", "no_such_variant"}), ArgumentError);
  CHECK_THROWS_AS(ablation_runner(cfg, {}), ArgumentError);
}

TEST_CASE("ablation rows are deterministic and cover request order") {
  TempDir tmp;
  write_small_dataset(tmp.str("ds.bin"), 7);
  RunConfig cfg = small_config(tmp.str("ds.bin"), tmp.str("out"));
  cfg.seeds = {41};
  const std::vector<std::string> variants = {"full", "neither", "concat"};
  const auto rows1 = ablation_runner(cfg, variants);
  const auto rows2 = ablation_runner(cfg, variants);
  REQUIRE(rows1.size() == 3);
  for (size_t i = 0; i < rows1.size(); ++i) {
    CHECK(rows1[i].variant == variants[i]);
    CHECK(rows1[i].mean_accuracy == rows2[i].mean_accuracy);
    CHECK(rows1[i].mean_wf1 == rows2[i].mean_wf1);
    CHECK(rows1[i].mean_accuracy >= 0.0);
    CHECK(rows1[i].mean_accuracy <= 1.0);
    // single seed: zero spread
    CHECK(rows1[i].std_accuracy == 0.0);
  }
  CHECK(fs::exists(tmp.path / "out" / "ablation.csv"));
  std::ifstream csv(tmp.str("out") + "/ablation.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "variant,mean_accuracy,std_accuracy,mean_wf1,std_wf1");
}
