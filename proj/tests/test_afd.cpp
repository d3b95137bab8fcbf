#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "dcr/afd.hpp"
#include "dcr/datagen.hpp"
#include "dcr/rng.hpp"

using namespace dcr;

namespace {

DatasetManifest tiny_manifest() {
  DatasetManifest m;
  m.seq_len = {4, 4, 4};
  m.raw_dim = {3, 3, 3};
  m.seed = 5;
  return m;
}

Dataset tiny_dataset(int n, double clean, double benign, double severe,
                     uint64_t seed) {
  DatasetManifest m = tiny_manifest();
  m.mix_clean = clean;
  m.mix_benign = benign;
  m.mix_severe = severe;
  m.seed = seed;
  return generate_dataset(m, n, seed);
}

Tensor random_matrix(int r, int c, Rng& rng, bool grad = false) {
  std::vector<double> vals(static_cast<size_t>(r * c));
  for (auto& v : vals) v = rng.normal(0.0, 1.0);
  return Tensor({r, c}, std::move(vals), grad);
}

}  // namespace

TEST_CASE("activation-map distributions are rowwise softmax, detached") {
  Rng rng(3);
  auto enc = ModalityEncoder::init(3, 6, 3, rng, true);
  ModalitySignal sig{Modality::Audio, random_matrix(4, 3, rng), 4.0};
  Tensor feats = encode_affective(sig, enc);
  Tensor cam = class_activation_map(feats, enc);
  CHECK_FALSE(cam.requires_grad());
  Tensor dist = teacher_distribution(cam);
  REQUIRE(dist.shape() == std::vector<int>{4, 3});
  for (int t = 0; t < 4; ++t) {
    double row = 0.0;
    for (int c = 0; c < 3; ++c) {
      row += dist.at(t, c);
      CHECK(dist.at(t, c) > 0.0);
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    // softmax of the logits row, recomputed directly
    double denom = 0.0;
    for (int c = 0; c < 3; ++c) denom += std::exp(cam.at(t, c));
    for (int c = 0; c < 3; ++c)
      CHECK(dist.at(t, c) == doctest::Approx(std::exp(cam.at(t, c)) / denom)
                                 .epsilon(1e-12));
  }
}

TEST_CASE("temporal confidence is a softmax over the label column") {
  Rng rng(9);
  Tensor cam = random_matrix(5, 3, rng);
  for (int label = 0; label < 3; ++label) {
    Tensor w = temporal_confidence(cam, label);
    REQUIRE(w.shape() == std::vector<int>{5});
    double sum = 0.0, denom = 0.0;
    for (int t = 0; t < 5; ++t) denom += std::exp(cam.at(t, label));
    for (int t = 0; t < 5; ++t) {
      sum += w[static_cast<size_t>(t)];
      CHECK(w[static_cast<size_t>(t)] ==
            doctest::Approx(std::exp(cam.at(t, label)) / denom).epsilon(1e-12));
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK_THROWS_AS(temporal_confidence(cam, 3), ArgumentError);
  CHECK_THROWS_AS(temporal_confidence(cam, -1), ArgumentError);
}

TEST_CASE("distillation loss reduces to ln 2 in the single-timestep case") {
  // one teacher, L=1, teacher = (1, 0) with weight 1, student = (0.5, 0.5):
  // KL(teacher || student) = 1 * ln(1 / 0.5) = ln 2
  TeacherSignal teacher{Tensor({1, 2}, {1.0, 0.0}), Tensor({1}, {1.0})};
  Tensor student({1, 2}, {0.5, 0.5});
  Tensor loss = distillation_loss({teacher}, student);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("distillation loss matches a scalar KL oracle on random inputs") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int l = rng.uniform_int(1, 6), c = rng.uniform_int(2, 4);
    auto random_dist_rows = [&](int rows, int cols) {
      std::vector<double> v(static_cast<size_t>(rows * cols));
      for (int r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (int k = 0; k < cols; ++k)
          sum += (v[static_cast<size_t>(r * cols + k)] = rng.uniform(0.05, 1.0));
        for (int k = 0; k < cols; ++k) v[static_cast<size_t>(r * cols + k)] /= sum;
      }
      return Tensor({rows, cols}, std::move(v));
    };
    std::vector<TeacherSignal> teachers;
    const int n_teachers = rng.uniform_int(1, 3);
    for (int n = 0; n < n_teachers; ++n) {
      std::vector<double> w(static_cast<size_t>(l));
      double sum = 0.0;
      for (auto& x : w) sum += (x = rng.uniform(0.05, 1.0));
      for (auto& x : w) x /= sum;
      teachers.push_back({random_dist_rows(l, c), Tensor({l}, std::move(w))});
    }
    Tensor student = random_dist_rows(l, c);
    double oracle = 0.0;
    for (const auto& teacher : teachers)
      for (int t = 0; t < l; ++t) {
        double kl = 0.0;
        for (int k = 0; k < c; ++k) {
          const double p = teacher.distribution.at(t, k);
          kl += p * std::log(p / student.at(t, k));
        }
        oracle += teacher.weights[static_cast<size_t>(t)] * kl;
      }
    Tensor loss = distillation_loss(teachers, student);
    CHECK(loss.item() == doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("distillation gradient reaches only the student") {
  Rng rng(23);
  // the student distribution depends on trainable logits; teacher tensors
  // are plain constants, so the loss node must carry gradient only through
  // the student path
  Tensor student_logits = random_matrix(3, 3, rng, /*grad=*/true);
  Tensor student = softmax(student_logits, 1);
  TeacherSignal teacher{
      Tensor({3, 3}, {0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4}),
      Tensor({3}, {0.5, 0.25, 0.25})};
  Tensor loss = distillation_loss({teacher}, student);
  CHECK(loss.requires_grad());
  loss.backward();
  double grad_norm = 0.0;
  for (double g : student_logits.grad()) grad_norm += g * g;
  CHECK(grad_norm > 0.0);
}

TEST_CASE("cross-attention fusion matches a from-scratch oracle") {
  const int l = 3, d = 4, c = 3;
  Rng rng(31);
  auto fusion = FusionParams::init(d, c, rng, false);
  std::array<Tensor, kNumModalities> feats = {
      random_matrix(l, d, rng), random_matrix(l, d, rng), random_matrix(l, d, rng)};
  Tensor logits = fuse(feats, fusion);
  REQUIRE(logits.shape() == std::vector<int>{c});

  auto mat = [&](const Tensor& x, const Tensor& w, const Tensor& b, int rows,
                 int cols_in, int cols_out) {
    std::vector<double> y(static_cast<size_t>(rows * cols_out), 0.0);
    for (int r = 0; r < rows; ++r)
      for (int o = 0; o < cols_out; ++o) {
        double acc = b[static_cast<size_t>(o)];
        for (int i = 0; i < cols_in; ++i) acc += x.at(r, i) * w.at(i, o);
        y[static_cast<size_t>(r * cols_out + o)] = acc;
      }
    return y;
  };
  const auto q = mat(feats[0], fusion.wq, fusion.bq, l, d, d);
  // keys/values over stacked audio+visual rows
  std::vector<double> kv;
  for (int r = 0; r < l; ++r)
    for (int i = 0; i < d; ++i) kv.push_back(feats[1].at(r, i));
  for (int r = 0; r < l; ++r)
    for (int i = 0; i < d; ++i) kv.push_back(feats[2].at(r, i));
  Tensor kv_t({2 * l, d}, kv);
  const auto k = mat(kv_t, fusion.wk, fusion.bk, 2 * l, d, d);
  const auto v = mat(kv_t, fusion.wv, fusion.bv, 2 * l, d, d);
  // attention rows
  std::vector<double> attended(static_cast<size_t>(l * d), 0.0);
  for (int r = 0; r < l; ++r) {
    std::vector<double> scores(static_cast<size_t>(2 * l), 0.0);
    double maxs = -1e300;
    for (int j = 0; j < 2 * l; ++j) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i)
        acc += q[static_cast<size_t>(r * d + i)] * k[static_cast<size_t>(j * d + i)];
      scores[static_cast<size_t>(j)] = acc / std::sqrt(static_cast<double>(d));
      maxs = std::max(maxs, scores[static_cast<size_t>(j)]);
    }
    double denom = 0.0;
    for (double& s : scores) denom += (s = std::exp(s - maxs));
    for (int j = 0; j < 2 * l; ++j)
      for (int i = 0; i < d; ++i)
        attended[static_cast<size_t>(r * d + i)] +=
            scores[static_cast<size_t>(j)] / denom * v[static_cast<size_t>(j * d + i)];
  }
  // pooled concat + head
  std::vector<double> cat(static_cast<size_t>(2 * d), 0.0);
  for (int i = 0; i < d; ++i) {
    for (int r = 0; r < l; ++r) {
      cat[static_cast<size_t>(i)] += attended[static_cast<size_t>(r * d + i)] / l;
      cat[static_cast<size_t>(d + i)] += feats[0].at(r, i) / l;
    }
  }
  for (int o = 0; o < c; ++o) {
    double acc = fusion.head_b[static_cast<size_t>(o)];
    for (int i = 0; i < 2 * d; ++i)
      acc += cat[static_cast<size_t>(i)] * fusion.head_w.at(i, o);
    CHECK(logits[static_cast<size_t>(o)] == doctest::Approx(acc).epsilon(1e-10));
  }
}

TEST_CASE("concat fusion is a pooled concatenation plus affine head") {
  const int l = 3, d = 4, c = 3;
  Rng rng(37);
  auto fusion = FusionParams::init(d, c, rng, true);
  REQUIRE(fusion.head_w.shape() == std::vector<int>{3 * d, c});
  std::array<Tensor, kNumModalities> feats = {
      random_matrix(l, d, rng), random_matrix(l, d, rng), random_matrix(l, d, rng)};
  Tensor logits = fuse(feats, fusion);
  for (int o = 0; o < c; ++o) {
    double acc = fusion.head_b[static_cast<size_t>(o)];
    for (int mi = 0; mi < 3; ++mi)
      for (int i = 0; i < d; ++i) {
        double pooled = 0.0;
        for (int r = 0; r < l; ++r) pooled += feats[static_cast<size_t>(mi)].at(r, i);
        pooled /= l;
        acc += pooled * fusion.head_w.at(mi * d + i, o);
      }
    CHECK(logits[static_cast<size_t>(o)] == doctest::Approx(acc).epsilon(1e-10));
  }
}

TEST_CASE("loss breakdown satisfies the affine identity in gamma and lambda") {
  const Dataset ds = tiny_dataset(24, 0.5, 0.3, 0.2, 11);
  Rng rng(2);
  auto encoders = EncoderParams::init(ds.manifest, 6, rng, true);
  auto fusion = FusionParams::init(6, 3, rng, false);
  std::vector<const Sample*> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(&ds.samples[static_cast<size_t>(i)]);

  const auto base = afd_loss(batch, encoders, fusion, 0.0, 0.0);
  for (double gamma : {0.5, 1.0, 2.0}) {
    for (double lambda : {0.0, 0.5, 1.5}) {
      const auto b = afd_loss(batch, encoders, fusion, gamma, lambda);
      CHECK(b.l_m == doctest::Approx(base.l_m).epsilon(1e-12));
      CHECK(b.l_u == doctest::Approx(base.l_u).epsilon(1e-12));
      CHECK(b.l_kl == doctest::Approx(base.l_kl).epsilon(1e-12));
      CHECK(b.total.item() ==
            doctest::Approx(b.l_m + gamma * b.l_u + lambda * b.l_kl).epsilon(1e-9));
    }
  }
  CHECK(base.l_kl >= 0.0);
  CHECK_THROWS_AS(afd_loss({}, encoders, fusion, 1.0, 0.5), ArgumentError);
}

TEST_CASE("afd_loss gradients agree with central differences") {
  const Dataset ds = tiny_dataset(12, 0.5, 0.3, 0.2, 13);
  Rng rng(4);
  auto encoders = EncoderParams::init(ds.manifest, 4, rng, true);
  auto fusion = FusionParams::init(4, 3, rng, false);
  std::vector<const Sample*> batch = {&ds.samples[0], &ds.samples[1]};

  // Full objective over student + fusion parameters. Teacher-branch
  // parameters are excluded here because the distillation term treats the
  // teacher signal as a constant: its true derivative there intentionally
  // differs from the detached one.
  std::vector<Tensor> student_params =
      encoders.mods[static_cast<size_t>(Modality::Text)].trainable_params();
  for (auto& t : fusion.trainable_params()) student_params.push_back(t);
  const double err_student = gradient_check(
      [&] { return afd_loss(batch, encoders, fusion, 1.0, 0.5).total; },
      student_params);
  CHECK(err_student < 1e-4);

  // All parameters, distillation disabled: every gradient path is live.
  std::vector<Tensor> all_params = encoders.trainable_params();
  for (auto& t : fusion.trainable_params()) all_params.push_back(t);
  const double err_all = gradient_check(
      [&] { return afd_loss(batch, encoders, fusion, 1.0, 0.0).total; },
      all_params);
  CHECK(err_all < 1e-4);
}

TEST_CASE("distillation term sends zero gradient into teacher heads") {
  const Dataset ds = tiny_dataset(12, 0.5, 0.3, 0.2, 13);
  Rng rng(4);
  auto encoders = EncoderParams::init(ds.manifest, 4, rng, true);
  auto fusion = FusionParams::init(4, 3, rng, false);
  std::vector<const Sample*> batch = {&ds.samples[0], &ds.samples[1]};
  // Isolated L_KL: gamma = 0 plus constant-free L_M removed by differencing
  // is overkill; instead check that teacher parameters see no gradient when
  // only the distillation term is active (gamma = 0 removes L_U, and L_M is
  // insensitive to the teacher heads' classification weights).
  for (auto mi : {Modality::Audio, Modality::Visual}) {
    auto& head_w = encoders.mods[static_cast<size_t>(static_cast<int>(mi))].head_w;
    head_w.zero_grad();
    AfdLossBreakdown loss = afd_loss(batch, encoders, fusion, 0.0, 1.0);
    loss.total.backward();
    for (double g : head_w.grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("training is deterministic and an epochs=0 run keeps the init") {
  const Dataset ds = tiny_dataset(30, 0.6, 0.2, 0.2, 19);
  AfdConfig cfg;
  cfg.feat_dim = 6;
  cfg.epochs = 2;
  cfg.lr = 1e-3;
  cfg.batch = 8;
  cfg.seed = 99;
  auto a = train_afd(ds, cfg);
  auto b = train_afd(ds, cfg);
  const auto pa = a.named_params(), pb = b.named_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t k = 0; k < pa[i].second.size(); ++k)
      CHECK(pa[i].second[k] == pb[i].second[k]);

  AfdConfig zero = cfg;
  zero.epochs = 0;
  auto c = train_afd(ds, zero);
  Rng init_rng(Rng::mix(zero.seed, 0xAFDULL));
  auto fresh_enc = EncoderParams::init(ds.manifest, zero.feat_dim, init_rng, true);
  const auto pc = c.encoders.named_params(), pf = fresh_enc.named_params();
  for (size_t i = 0; i < pc.size(); ++i)
    for (size_t k = 0; k < pc[i].second.size(); ++k)
      CHECK(pc[i].second[k] == pf[i].second[k]);
}

TEST_CASE("frozen teachers keep their initial weights during training") {
  const Dataset ds = tiny_dataset(30, 1.0, 0.0, 0.0, 23);
  AfdConfig cfg;
  cfg.feat_dim = 6;
  cfg.epochs = 2;
  cfg.lr = 1e-2;
  cfg.batch = 8;
  cfg.seed = 7;
  cfg.freeze_teachers = true;
  auto bundle = train_afd(ds, cfg);
  Rng init_rng(Rng::mix(cfg.seed, 0xAFDULL));
  auto fresh = EncoderParams::init(ds.manifest, cfg.feat_dim, init_rng, true);
  for (int mi : {static_cast<int>(Modality::Audio), static_cast<int>(Modality::Visual)}) {
    const auto trained = bundle.encoders.mods[static_cast<size_t>(mi)].named_params("m");
    const auto initial = fresh.mods[static_cast<size_t>(mi)].named_params("m");
    for (size_t i = 0; i < trained.size(); ++i)
      for (size_t k = 0; k < trained[i].second.size(); ++k)
        CHECK(trained[i].second[k] == initial[i].second[k]);
  }
  // while the student branch did move
  const auto ts = bundle.encoders.mods[0].named_params("m");
  const auto is = fresh.mods[0].named_params("m");
  bool moved = false;
  for (size_t i = 0; i < ts.size() && !moved; ++i)
    for (size_t k = 0; k < ts[i].second.size(); ++k)
      if (ts[i].second[k] != is[i].second[k]) { moved = true; break; }
  CHECK(moved);
}

TEST_CASE("expert predictions are four proper distributions") {
  const Dataset ds = tiny_dataset(20, 0.5, 0.3, 0.2, 29);
  AfdConfig cfg;
  cfg.feat_dim = 6;
  cfg.epochs = 1;
  cfg.batch = 8;
  auto bundle = train_afd(ds, cfg);
  for (int i = 0; i < 5; ++i) {
    const auto preds = expert_predictions(bundle, ds.samples[static_cast<size_t>(i)]);
    for (const auto& dist : preds.dists) {
      REQUIRE(dist.size() == 3);
      double sum = 0.0;
      for (double p : dist) {
        CHECK(p > 0.0);
        sum += p;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("training separates clean classes and logs the loss curve") {
  DatasetManifest m = tiny_manifest();
  m.mix_clean = 1.0;
  m.mix_benign = 0.0;
  m.mix_severe = 0.0;
  m.snr = 8.0;
  const Dataset ds = generate_dataset(m, 90, 31);
  AfdConfig cfg;
  cfg.feat_dim = 8;
  cfg.epochs = 20;
  cfg.lr = 5e-3;
  cfg.batch = 16;
  cfg.seed = 3;
  std::ostringstream log;
  auto bundle = train_afd(ds, cfg, &log);

  int correct = 0;
  for (int i : ds.test_idx) {
    const auto& s = ds.samples[static_cast<size_t>(i)];
    const auto preds = expert_predictions(bundle, s);
    const auto& pm = preds.dists[0];
    const int best = static_cast<int>(
        std::max_element(pm.begin(), pm.end()) - pm.begin());
    if (best == s.multimodal_label.class_index) ++correct;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(ds.test_idx.size());
  CHECK(acc > 0.9);

  // log rows are epoch-indexed six-column CSV
  std::istringstream rows(log.str());
  std::string line;
  int row_count = 0;
  while (std::getline(rows, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 5);
    ++row_count;
  }
  CHECK(row_count > 0);
  CHECK(row_count <= cfg.epochs);
}
