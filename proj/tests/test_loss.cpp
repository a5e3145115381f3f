#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_helpers.hpp"

using namespace edukd;
using edukd::test::random_tensor;

namespace {

// Explicit softmax + sum p*log(p/q) in extended precision.
long double oracle_softened_kl(const std::vector<double>& z,
                               const std::vector<double>& g, double tau) {
  auto softmax = [](std::vector<long double> v) {
    long double mx = v[0];
    for (long double x : v) mx = std::max(mx, x);
    long double sum = 0;
    for (auto& x : v) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
  };
  std::vector<long double> zs(z.begin(), z.end()), gs(g.begin(), g.end());
  for (auto& x : zs) x /= tau;
  for (auto& x : gs) x /= tau;
  const auto q = softmax(zs), p = softmax(gs);
  long double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return kl;
}

long double oracle_cross_entropy(const std::vector<double>& z, int label) {
  long double mx = z[0];
  for (double x : z) mx = std::max<long double>(mx, x);
  long double sum = 0;
  for (double x : z) sum += std::exp((long double)(x)-mx);
  return -((long double)(z[label]) - mx - std::log(sum));
}

LogitBatch make_batch(const TensorT<double>& z, const TensorT<double>& g,
                      std::vector<int> labels, std::vector<int> subsets) {
  LogitBatch b;
  b.student = z;
  b.teacher = g;
  b.labels = std::move(labels);
  b.subset_ids = std::move(subsets);
  return b;
}

}  // namespace

TEST_CASE("softened_kl matches the oracle and its fixed points") {
  SECTION("identical logits give exactly zero") {
    TensorT<double> z = random_tensor({7}, 50, 3.0);
    REQUIRE(softened_kl(z, z, 4.0) == 0.0);
    TensorT<double> zero({2});
    REQUIRE(softened_kl(zero, zero, 1.0) == 0.0);
  }

  SECTION("two-class example against the oracle") {
    std::vector<double> z = {1, 0}, g = {0, 1};
    const double got = softened_kl(z.data(), g.data(), 2, 1.0);
    const long double want = oracle_softened_kl(z, g, 1.0);
    REQUIRE(std::abs(got - (double)want) < 1e-12);
    REQUIRE(got > 0);
  }

  SECTION("random rows against the oracle") {
    RngStream rng(51);
    for (int trial = 0; trial < 100; ++trial) {
      const int c = static_cast<int>(rng.uniform_int(2, 12));
      std::vector<double> z(c), g(c);
      for (auto& x : z) x = rng.uniform(-5, 5);
      for (auto& x : g) x = rng.uniform(-5, 5);
      const double tau = rng.uniform(0.5, 8.0);
      const double got = softened_kl(z.data(), g.data(), c, tau);
      REQUIRE(got >= 0.0);
      REQUIRE(std::abs(got - (double)oracle_softened_kl(z, g, tau)) < 1e-10);
    }
  }

  SECTION("zero iff softened distributions match") {
    std::vector<double> z = {1.0, 2.0, 3.0};
    std::vector<double> shifted = {1.5, 2.5, 3.5};  // same distribution
    REQUIRE(softened_kl(z.data(), shifted.data(), 3, 2.0) < 1e-12);
    std::vector<double> other = {3.0, 2.0, 1.0};
    REQUIRE(softened_kl(z.data(), other.data(), 3, 2.0) > 1e-3);
  }

  SECTION("shift invariance within 1e-6") {
    RngStream rng(52);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> z(6), g(6);
      for (auto& x : z) x = rng.uniform(-4, 4);
      for (auto& x : g) x = rng.uniform(-4, 4);
      const double base = softened_kl(z.data(), g.data(), 6, 4.0);
      std::vector<double> z2 = z, g2 = g;
      const double cz = rng.uniform(-100, 100), cg = rng.uniform(-100, 100);
      for (auto& x : z2) x += cz;
      for (auto& x : g2) x += cg;
      REQUIRE(std::abs(softened_kl(z2.data(), g2.data(), 6, 4.0) - base) <
              1e-6);
    }
  }

  SECTION("non-finite logits rejected") {
    std::vector<double> z = {1.0, std::nan("")}, g = {0.0, 0.0};
    REQUIRE_THROWS_AS(softened_kl(z.data(), g.data(), 2, 1.0), run_error);
  }
}

TEST_CASE("combined_loss blend behavior") {
  TensorT<double> z({2, 3}), g({2, 3});
  z.data = {0.2, -1.0, 0.7, 2.0, 0.1, -0.5};
  g.data = {1.0, 0.0, -1.0, 0.5, 0.5, 0.0};
  const std::vector<int> labels = {2, 0};
  auto batch = make_batch(z, g, labels, {1, 1});

  SECTION("alpha endpoints") {
    DistillConfig ce_only{4.0, 0.0, KdScale::TauSquared};
    const double ce = combined_loss(batch, ce_only).total;
    long double want_ce = (oracle_cross_entropy({0.2, -1.0, 0.7}, 2) +
                           oracle_cross_entropy({2.0, 0.1, -0.5}, 0)) /
                          2.0L;
    REQUIRE(std::abs(ce - (double)want_ce) < 1e-12);

    DistillConfig kd_only{4.0, 1.0, KdScale::TauSquared};
    const double kd = combined_loss(batch, kd_only).total;
    long double want_kd =
        16.0L *
        (oracle_softened_kl({0.2, -1.0, 0.7}, {1.0, 0.0, -1.0}, 4.0) +
         oracle_softened_kl({2.0, 0.1, -0.5}, {0.5, 0.5, 0.0}, 4.0)) /
        2.0L;
    REQUIRE(std::abs(kd - (double)want_kd) < 1e-12);
  }

  SECTION("alpha 0.3 against the composed oracle") {
    DistillConfig cfg{4.0, 0.3, KdScale::TauSquared};
    const LossParts parts = combined_loss(batch, cfg);
    long double kl =
        (oracle_softened_kl({0.2, -1.0, 0.7}, {1.0, 0.0, -1.0}, 4.0) +
         oracle_softened_kl({2.0, 0.1, -0.5}, {0.5, 0.5, 0.0}, 4.0)) /
        2.0L;
    long double ce = (oracle_cross_entropy({0.2, -1.0, 0.7}, 2) +
                      oracle_cross_entropy({2.0, 0.1, -0.5}, 0)) /
                     2.0L;
    const long double want = 0.3L * 16.0L * kl + 0.7L * ce;
    REQUIRE(std::abs(parts.total - (double)want) < 1e-12);
    REQUIRE(std::abs(parts.kd - (double)(16.0L * kl)) < 1e-12);
    REQUIRE(std::abs(parts.ce - (double)ce) < 1e-12);
  }

  SECTION("affine in alpha") {
    auto at = [&](double alpha) {
      DistillConfig cfg{4.0, alpha, KdScale::TauSquared};
      return combined_loss(batch, cfg).total;
    };
    REQUIRE(std::abs(at(0.5) - 0.5 * (at(0.0) + at(1.0))) < 1e-12);
  }

  SECTION("kd_scale one matches the unscaled sum") {
    DistillConfig cfg{4.0, 1.0, KdScale::One};
    long double kl =
        (oracle_softened_kl({0.2, -1.0, 0.7}, {1.0, 0.0, -1.0}, 4.0) +
         oracle_softened_kl({2.0, 0.1, -0.5}, {0.5, 0.5, 0.0}, 4.0)) /
        2.0L;
    REQUIRE(std::abs(combined_loss(batch, cfg).total - (double)kl) < 1e-12);
  }

  SECTION("empty and mixed-subset batches rejected") {
    LogitBatch empty;
    empty.student = TensorT<double>();
    empty.teacher = TensorT<double>();
    REQUIRE_THROWS_AS(combined_loss(empty, DistillConfig{}), run_error);
    auto mixed = make_batch(z, g, labels, {1, 2});
    REQUIRE_THROWS_AS(combined_loss(mixed, DistillConfig{}), run_error);
  }
}

TEST_CASE("loss gradients") {
  SECTION("cross-entropy gradient is softmax minus onehot") {
    std::vector<double> z = {0.3, -0.2, 1.5, 0.0};
    std::vector<double> grad(4);
    cross_entropy_grad(z.data(), 4, 2, grad.data());
    long double mx = 1.5, sum = 0;
    std::vector<long double> sm(4);
    for (int j = 0; j < 4; ++j) sum += std::exp((long double)(z[j]) - mx);
    for (int j = 0; j < 4; ++j)
      sm[j] = std::exp((long double)(z[j]) - mx) / sum;
    for (int j = 0; j < 4; ++j) {
      const long double want = sm[j] - (j == 2 ? 1.0L : 0.0L);
      REQUIRE(std::abs(grad[j] - (double)want) < 1e-14);
    }
  }

  SECTION("kl gradient vanishes at matched logits") {
    std::vector<double> z = {0.4, -1.2, 2.0};
    std::vector<double> grad(3);
    softened_kl_grad(z.data(), z.data(), 3, 4.0, grad.data());
    for (double g : grad) REQUIRE(std::abs(g) < 1e-6);
  }

  SECTION("combined_loss gradient vs central differences") {
    RngStream rng(53);
    TensorT<double> z = random_tensor({4, 10}, 54, 2.0);
    TensorT<double> g = random_tensor({4, 10}, 55, 2.0);
    std::vector<int> labels, subsets;
    for (int i = 0; i < 4; ++i) {
      labels.push_back(static_cast<int>(rng.uniform_int(0, 9)));
      subsets.push_back(1);
    }
    DistillConfig cfg{4.0, 0.3, KdScale::TauSquared};
    auto fn = [&](const TensorT<double>& probe) {
      auto b = make_batch(probe, g, labels, subsets);
      return LossWithGrad{combined_loss(b, cfg).total,
                          combined_loss_grad(b, cfg)};
    };
    REQUIRE(gradient_check(fn, z, 1e-4) < 1e-3);
    REQUIRE(gradient_check(fn, z, 1e-4) < 1e-7);  // doubles are much tighter
    REQUIRE_THROWS_AS(gradient_check(fn, z, 1e-2), config_error);
  }
}

TEST_CASE("ed_loss decomposition and weighting") {
  TensorT<double> z = random_tensor({6, 5}, 60, 2.0);
  TensorT<double> g = random_tensor({6, 5}, 61, 2.0);
  const std::vector<int> labels = {0, 3, 1, 4, 2, 2};
  const std::vector<int> subsets = {1, 2, 1, 2, 2, 1};
  auto batch = make_batch(z, g, labels, subsets);
  DistillConfig cfg{4.0, 0.3, KdScale::TauSquared};

  SECTION("matches per-subset recombination") {
    EdLossResult res = ed_loss(batch, cfg);
    REQUIRE(res.breakdown.size() == 2);

    // isolate each subset by hand and recombine
    double recombined = 0;
    for (int target : {1, 2}) {
      std::vector<int> rows;
      for (int i = 0; i < 6; ++i)
        if (subsets[i] == target) rows.push_back(i);
      TensorT<double> zs({(int)rows.size(), 5}), gs({(int)rows.size(), 5});
      std::vector<int> ls, ss;
      for (std::size_t k = 0; k < rows.size(); ++k) {
        std::copy_n(z.data.begin() + rows[k] * 5, 5,
                    zs.data.begin() + k * 5);
        std::copy_n(g.data.begin() + rows[k] * 5, 5,
                    gs.data.begin() + k * 5);
        ls.push_back(labels[rows[k]]);
        ss.push_back(target);
      }
      const double part =
          combined_loss(make_batch(zs, gs, ls, ss), cfg).total;
      recombined += (double(rows.size()) / 6.0) * part;
    }
    REQUIRE(std::abs(res.total - recombined) < 1e-12);

    double from_breakdown = 0;
    for (const auto& e : res.breakdown)
      from_breakdown += e.weight * e.parts.total;
    REQUIRE(res.total == from_breakdown);
  }

  SECTION("single subset equals combined_loss") {
    auto single = make_batch(z, g, labels, {1, 1, 1, 1, 1, 1});
    REQUIRE(ed_loss(single, cfg).total ==
            combined_loss(single, cfg).total);
  }

  SECTION("absent subsets contribute nothing") {
    auto sparse = make_batch(z, g, labels, {1, 3, 1, 3, 3, 1});
    EdLossResult res = ed_loss(sparse, cfg);
    REQUIRE(res.breakdown.size() == 2);
    REQUIRE(res.breakdown[0].subset_id == 1);
    REQUIRE(res.breakdown[1].subset_id == 3);
  }

  SECTION("grouping invariance under row permutation") {
    EdLossResult base = ed_loss(batch, cfg);
    std::vector<int> perm = {5, 2, 0, 4, 1, 3};
    TensorT<double> zp({6, 5}), gp({6, 5});
    std::vector<int> lp, sp;
    for (int k = 0; k < 6; ++k) {
      std::copy_n(z.data.begin() + perm[k] * 5, 5, zp.data.begin() + k * 5);
      std::copy_n(g.data.begin() + perm[k] * 5, 5, gp.data.begin() + k * 5);
      lp.push_back(labels[perm[k]]);
      sp.push_back(subsets[perm[k]]);
    }
    EdLossResult permuted = ed_loss(make_batch(zp, gp, lp, sp), cfg);
    REQUIRE(std::abs(base.total - permuted.total) < 1e-12);
  }

  SECTION("ed_loss gradient vs central differences") {
    auto fn = [&](const TensorT<double>& probe) {
      auto b = make_batch(probe, g, labels, subsets);
      return LossWithGrad{ed_loss(b, cfg).total, ed_loss_grad(b, cfg)};
    };
    REQUIRE(gradient_check(fn, z, 1e-4) < 1e-7);
  }

  SECTION("unassigned subset id rejected") {
    auto bad = make_batch(z, g, labels, {1, 0, 1, 2, 2, 1});
    REQUIRE_THROWS_AS(ed_loss(bad, cfg), run_error);
  }
}
