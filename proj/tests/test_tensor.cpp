#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dcr/rng.hpp"
#include "dcr/tensor.hpp"

using namespace dcr;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool rq = true,
                     double sd = 1.0) {
  size_t n = 1;
  for (int e : shape) n *= static_cast<size_t>(e);
  std::vector<double> vals(n);
  for (auto& v : vals) v = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(vals), rq);
}

}  // namespace

TEST_CASE("softmax closed forms") {
  Tensor a({2}, {0.0, 0.0});
  Tensor s = softmax(a, 0);
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-12));

  Tensor b({2}, {std::log(1.0), std::log(3.0)});
  Tensor sb = softmax(b, 0);
  CHECK(sb[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sb[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one against direct summation") {
  Rng rng(7);
  Tensor x = random_tensor({4, 5}, rng, false, 3.0);
  Tensor s = softmax(x, 1);
  for (int i = 0; i < 4; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < 5; ++j) row_sum += s.at(i, j);
    CHECK(std::fabs(row_sum - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax survives saturated logits") {
  Tensor x({2}, {1000.0, 0.0});
  Tensor s = softmax(x, 0);
  CHECK(std::isfinite(s[0]));
  CHECK(s[0] == doctest::Approx(1.0));
}

TEST_CASE("softmax invalid axis") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(softmax(x, 2), ArgumentError);
}

TEST_CASE("kl divergence closed forms and oracle") {
  Tensor p({2}, {0.3, 0.7});
  CHECK(kl_divergence(p, p).item() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor ph({2}, {1.0, 0.0});
  Tensor q({2}, {0.5, 0.5});
  CHECK(kl_divergence(ph, q).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor p2({2}, {0.25, 0.75});
  Tensor q2({2}, {0.75, 0.25});
  double oracle = 0.0;
  for (int i = 0; i < 2; ++i)
    oracle += p2[static_cast<size_t>(i)] * std::log(p2[static_cast<size_t>(i)] / q2[static_cast<size_t>(i)]);
  CHECK(std::fabs(kl_divergence(p2, q2).item() - oracle) < 1e-10);

  Tensor bad({3}, {0.2, 0.3, 0.5});
  CHECK_THROWS_AS(kl_divergence(p, bad), ArgumentError);
}

TEST_CASE("kl non-negativity over random distributions") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a = softmax(random_tensor({5}, rng, false, 2.0), 0);
    Tensor b = softmax(random_tensor({5}, rng, false, 2.0), 0);
    CHECK(kl_divergence(a, b).item() >= -1e-12);
  }
}

TEST_CASE("cross entropy closed forms") {
  Tensor uniform({1, 2}, {0.0, 0.0});
  CHECK(cross_entropy(uniform, std::vector<int>{0}).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor saturated({1, 2}, {1000.0, 0.0});
  CHECK(cross_entropy(saturated, std::vector<int>{0}).item() ==
        doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy(uniform, std::vector<int>{5}), ArgumentError);
}

TEST_CASE("cross entropy matches scalar-loop oracle") {
  Rng rng(13);
  Tensor logits = random_tensor({3, 4}, rng, false, 2.0);
  std::vector<int> labels = {1, 3, 0};
  double oracle = 0.0;
  for (int i = 0; i < 3; ++i) {
    double mx = logits.at(i, 0);
    for (int j = 1; j < 4; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (int j = 0; j < 4; ++j) z += std::exp(logits.at(i, j) - mx);
    oracle -= (logits.at(i, labels[static_cast<size_t>(i)]) - mx) - std::log(z);
  }
  oracle /= 3.0;
  CHECK(std::fabs(cross_entropy(logits, labels).item() - oracle) < 1e-10);
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
  Rng rng(17);
  Tensor logits = random_tensor({2, 3}, rng, true, 1.5);
  std::vector<int> labels = {2, 0};
  Tensor loss = cross_entropy(logits, labels);
  loss.backward();
  Tensor probs = softmax(logits.detach(), 1);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      double expected = probs.at(i, j) - (labels[static_cast<size_t>(i)] == j ? 1.0 : 0.0);
      expected /= 2.0;
      CHECK(logits.grad()[static_cast<size_t>(i) * 3 + j] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("temporal conv identity kernel") {
  Rng rng(19);
  Tensor x = random_tensor({5, 3}, rng, false);
  std::vector<double> kv(9, 0.0);
  for (int i = 0; i < 3; ++i) kv[static_cast<size_t>(i) * 3 + i] = 1.0;
  Tensor kernel({1, 3, 3}, kv);
  Tensor y = temporal_conv1d(x, kernel, 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("temporal conv averaging kernel on constant input") {
  Tensor x = Tensor::full({6, 2}, 1.0);
  Tensor kernel = Tensor::full({3, 2, 1}, 1.0 / 6.0);
  Tensor y = temporal_conv1d(x, kernel, 1, 0);
  REQUIRE(y.dim(0) == 4);
  for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("temporal conv matches naive triple-loop oracle") {
  Rng rng(23);
  const int l = 8, din = 3, dout = 4, k = 3, stride = 2, pad = 1;
  Tensor x = random_tensor({l, din}, rng, false);
  Tensor kernel = random_tensor({k, din, dout}, rng, false);
  Tensor y = temporal_conv1d(x, kernel, stride, pad);
  const int lout = (l + 2 * pad - k) / stride + 1;
  REQUIRE(y.dim(0) == lout);
  for (int t = 0; t < lout; ++t)
    for (int co = 0; co < dout; ++co) {
      double acc = 0.0;
      for (int ki = 0; ki < k; ++ki) {
        int src = t * stride - pad + ki;
        if (src < 0 || src >= l) continue;
        for (int ci = 0; ci < din; ++ci)
          acc += x.at(src, ci) * kernel.values()[(static_cast<size_t>(ki) * din + ci) * dout + co];
      }
      CHECK(std::fabs(y.at(t, co) - acc) < 1e-10);
    }
}

TEST_CASE("temporal conv empty output errors") {
  Tensor x = Tensor::full({2, 1}, 1.0);
  Tensor kernel = Tensor::full({5, 1, 1}, 1.0);
  CHECK_THROWS_AS(temporal_conv1d(x, kernel, 1, 0), ArgumentError);
}

TEST_CASE("attention degenerate single key returns V row") {
  Rng rng(29);
  Tensor q = random_tensor({3, 4}, rng, false);
  Tensor k = random_tensor({1, 4}, rng, false);
  Tensor v = random_tensor({1, 5}, rng, false);
  Tensor out = scaled_dot_attention(q, k, v);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(out.at(i, j) == doctest::Approx(v.at(0, j)).epsilon(1e-12));
}

TEST_CASE("attention with orthogonal query averages V rows") {
  Tensor q({1, 2}, {0.0, 0.0});
  Tensor k({3, 2}, {1, 0, 0, 1, -1, 0});
  Tensor v({3, 2}, {3, 0, 0, 3, 6, 3});
  Tensor out = scaled_dot_attention(q, k, v);
  CHECK(out.at(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("attention matches naive-loop oracle") {
  Rng rng(31);
  Tensor q = random_tensor({2, 4}, rng, false);
  Tensor k = random_tensor({3, 4}, rng, false);
  Tensor v = random_tensor({3, 5}, rng, false);
  Tensor out = scaled_dot_attention(q, k, v);
  for (int i = 0; i < 2; ++i) {
    double scores[3];
    double mx = -1e300;
    for (int r = 0; r < 3; ++r) {
      double s = 0.0;
      for (int c = 0; c < 4; ++c) s += q.at(i, c) * k.at(r, c);
      scores[r] = s / 2.0;
      mx = std::max(mx, scores[r]);
    }
    double z = 0.0;
    for (int r = 0; r < 3; ++r) {
      scores[r] = std::exp(scores[r] - mx);
      z += scores[r];
    }
    for (int j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (int r = 0; r < 3; ++r) acc += scores[r] / z * v.at(r, j);
      CHECK(std::fabs(out.at(i, j) - acc) < 1e-9);
    }
  }
  Tensor bad = random_tensor({3, 3}, rng, false);
  CHECK_THROWS_AS(scaled_dot_attention(q, bad, v), ArgumentError);
}

TEST_CASE("gradient check on sum of squares") {
  Tensor x({2}, {1.0, 2.0}, true);
  auto f = [&] { return sum(square(x)); };
  Tensor out = f();
  out.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  CHECK(gradient_check(f, {x}) < 1e-7);
}

TEST_CASE("gradient check across primitive ops") {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor({2, 4}, rng, true, 1.2);
    auto ce = [&] { return cross_entropy(logits, std::vector<int>{1, 3}); };
    CHECK(gradient_check(ce, {logits}) < 1e-5);

    Tensor x = random_tensor({6, 3}, rng, true);
    Tensor kernel = random_tensor({3, 3, 2}, rng, true, 0.5);
    auto conv = [&] { return mean(square(temporal_conv1d(x, kernel, 1, 1))); };
    CHECK(gradient_check(conv, {x, kernel}) < 1e-5);

    Tensor q = random_tensor({2, 3}, rng, true);
    Tensor k = random_tensor({4, 3}, rng, true);
    Tensor v = random_tensor({4, 2}, rng, true);
    auto attn = [&] { return mean(square(scaled_dot_attention(q, k, v))); };
    CHECK(gradient_check(attn, {q, k, v}) < 1e-5);

    Tensor ln_x = random_tensor({3, 5}, rng, true);
    Tensor gain = random_tensor({5}, rng, true, 0.5);
    Tensor bias = random_tensor({5}, rng, true, 0.5);
    auto ln = [&] { return mean(square(layer_norm(ln_x, gain, bias))); };
    CHECK(gradient_check(ln, {ln_x, gain, bias}) < 1e-4);

    Tensor p_logits = random_tensor({3}, rng, true);
    Tensor target = softmax(random_tensor({3}, rng, false), 0);
    auto kl = [&] { return kl_divergence(target, softmax(p_logits, 0)); };
    CHECK(gradient_check(kl, {p_logits}) < 1e-5);
  }
}

TEST_CASE("linearity of backward") {
  Rng rng(41);
  Tensor x = random_tensor({4}, rng, true);
  Tensor f = mean(square(x));
  f.backward();
  std::vector<double> gf = x.grad();

  x.zero_grad();
  Tensor g = sum(mul(x, x.detach()));
  g.backward();
  std::vector<double> gg = x.grad();

  x.zero_grad();
  Tensor combined = add(mean(square(x)), sum(mul(x, x.detach())));
  combined.backward();
  for (size_t i = 0; i < gf.size(); ++i)
    CHECK(std::fabs(x.grad()[i] - (gf[i] + gg[i])) < 1e-10);
}

TEST_CASE("determinism of forward and backward") {
  auto run = [] {
    Rng rng(99);
    Tensor x = random_tensor({5, 4}, rng, true);
    Tensor w = random_tensor({4, 3}, rng, true);
    Tensor b = random_tensor({3}, rng, true);
    Tensor loss = cross_entropy(affine(x, w, b), std::vector<int>{0, 1, 2, 0, 1});
    loss.backward();
    std::vector<double> out = {loss.item()};
    for (double v : w.grad()) out.push_back(v);
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("accumulated grads and finiteness across composed ops") {
  Rng rng(43);
  Tensor x = random_tensor({4, 4}, rng, true, 5.0);
  Tensor s = softmax(x, 1);
  Tensor loss = add(entropy(row(s, 0)), kl_divergence(row(s, 1).detach(), row(s, 2)));
  loss.backward();
  for (double v : x.grad()) CHECK(std::isfinite(v));
  for (size_t i = 0; i < s.size(); ++i) CHECK(std::isfinite(s[i]));
}

TEST_CASE("entropy closed form") {
  Tensor u({4}, {0.25, 0.25, 0.25, 0.25});
  CHECK(entropy(u).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  Tensor det({3}, {1.0, 0.0, 0.0});
  CHECK(std::fabs(entropy(det).item()) < 1e-9);
}

TEST_CASE("adam reduces a quadratic") {
  Tensor x({3}, {5.0, -4.0, 2.0}, true);
  AdamOptimizer opt({x}, 0.1);
  for (int i = 0; i < 300; ++i) {
    opt.zero_grad();
    Tensor loss = sum(square(x));
    loss.backward();
    opt.step();
  }
  CHECK(sum(square(x)).item() < 1e-3);
}
