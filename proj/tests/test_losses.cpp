#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "deta/error.hpp"
#include "deta/losses.hpp"
#include "oracles.hpp"

using namespace deta;

namespace {

std::vector<Vec> unit_vectors(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(oracle::unit(oracle::random_vec(rng, dim)));
  return out;
}

Vec positive_weights(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Vec w(n);
  for (double& x : w) x = u(rng);
  return w;
}

EmbeddingBatch random_batch(std::mt19937_64& rng, int way, int per_class, int k, std::size_t dim) {
  EmbeddingBatch b;
  b.way = way;
  for (int c = 0; c < way; ++c)
    for (int s = 0; s < per_class; ++s) {
      b.image_embeddings.push_back(oracle::unit(oracle::random_vec(rng, dim)));
      b.image_labels.push_back(c);
      for (int j = 0; j < k; ++j) {
        b.region_embeddings.push_back(oracle::unit(oracle::random_vec(rng, dim)));
        b.region_labels.push_back(c);
        b.region_owner.push_back(b.image_embeddings.size() - 1);
      }
    }
  return b;
}

Vec flatten(const std::vector<Vec>& vs) {
  Vec out;
  for (const Vec& v : vs) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<Vec> unflatten(const Vec& flat, std::size_t n, std::size_t dim) {
  std::vector<Vec> out(n, Vec(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dim; ++k) out[i][k] = flat[i * dim + k];
  return out;
}

}  // namespace

TEST(PairwiseTerm, TwoElementSetIsZero) {
  const std::vector<Vec> r{Vec{1, 0}, Vec{0.6, 0.8}};
  EXPECT_NEAR(pairwise_local_term(0, 1, r, Vec{1.0, 1.0}, 0.5), 0.0, 1e-15);
}

TEST(PairwiseTerm, DuplicateWithOrthogonalNegative) {
  const std::vector<Vec> r{Vec{1, 0}, Vec{1, 0}, Vec{0, 1}};
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(pairwise_local_term(0, 1, r, Vec{1, 1, 1}, 0.5), -std::log(e2 / (e2 + 1.0)), 1e-14);
}

TEST(PairwiseTerm, LargeTemperatureTendsToUniform) {
  std::mt19937_64 rng(1);
  const auto r = unit_vectors(rng, 6, 4);
  const Vec lambda(6, 1.0);
  EXPECT_NEAR(pairwise_local_term(0, 1, r, lambda, 1e9), std::log(5.0), 1e-8);
}

TEST(PairwiseTerm, MatchesOracle) {
  std::mt19937_64 rng(2);
  const auto r = unit_vectors(rng, 7, 5);
  const Vec lambda = positive_weights(rng, 7);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      if (i != j) EXPECT_NEAR(pairwise_local_term(i, j, r, lambda, 0.5), oracle::pair_term(i, j, r, lambda, 0.5), 1e-12);
}

TEST(LocalLoss, SingleClassPairIsZeroWithZeroGradient) {
  const std::vector<Vec> r{Vec{1, 0}, Vec{0, 1}};
  const LossPart l = local_compactness_loss(r, std::vector<int>{0, 0}, Vec{1, 1}, 0.5);
  EXPECT_NEAR(l.value, 0.0, 1e-15);
  for (const Vec& g : l.grad_regions)
    for (double x : g) EXPECT_NEAR(x, 0.0, 1e-15);
}

TEST(LocalLoss, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<int> nd(2, 12), cd(1, 3);
    const int n = nd(rng), way = cd(rng);
    const auto r = unit_vectors(rng, static_cast<std::size_t>(n), 4);
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::uniform_int_distribution<int> ld(0, way - 1);
    for (int& l : labels) l = ld(rng);
    const Vec lambda = positive_weights(rng, static_cast<std::size_t>(n));
    EXPECT_NEAR(local_compactness_loss(r, labels, lambda, 0.5).value, oracle::local_loss(r, labels, lambda, 0.5), 1e-9);
  }
}

TEST(LocalLoss, ReducesToSupervisedContrastiveWithUnitWeights) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = unit_vectors(rng, 12, 6);
    std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
    const double normaliser = 3 * 4 * 3 / 2.0;
    EXPECT_NEAR(local_compactness_loss(r, labels, Vec(12, 1.0), 0.5).value,
                oracle::supcon_sum(r, labels, 0.5) / normaliser, 1e-9);
  }
}

TEST(LocalLoss, DoublingLambdaChangesValue) {
  std::mt19937_64 rng(5);
  const auto r = unit_vectors(rng, 8, 4);
  const std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 1};
  const Vec lambda = positive_weights(rng, 8);
  Vec doubled = lambda;
  for (double& x : doubled) x *= 2;
  const double a = local_compactness_loss(r, labels, lambda, 0.5).value;
  const double b = local_compactness_loss(r, labels, doubled, 0.5).value;
  EXPECT_NEAR(b, oracle::local_loss(r, labels, doubled, 0.5), 1e-9);
  EXPECT_GT(std::fabs(a - b), 1e-3);
}

TEST(LocalLoss, InvariantUnderLabelAndOrderPermutation) {
  std::mt19937_64 rng(6);
  const auto r = unit_vectors(rng, 6, 4);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const Vec lambda = positive_weights(rng, 6);
  const double base = local_compactness_loss(r, labels, lambda, 0.5).value;
  const std::vector<int> relabeled{2, 2, 0, 0, 1, 1};
  EXPECT_NEAR(local_compactness_loss(r, relabeled, lambda, 0.5).value, base, 1e-12);
  std::vector<std::size_t> perm{5, 3, 1, 0, 4, 2};
  std::vector<Vec> rp;
  std::vector<int> lp;
  Vec wp;
  for (std::size_t i : perm) {
    rp.push_back(r[i]);
    lp.push_back(labels[i]);
    wp.push_back(lambda[i]);
  }
  EXPECT_NEAR(local_compactness_loss(rp, lp, wp, 0.5).value, base, 1e-12);
}

TEST(LocalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = unit_vectors(rng, 6, 3);
    const std::vector<int> labels{0, 0, 1, 1, 1, 0};
    const Vec lambda = positive_weights(rng, 6);
    const LossPart l = local_compactness_loss(r, labels, lambda, 0.5);
    const Vec numeric = oracle::central_difference(
        [&](const Vec& x) { return oracle::local_loss(unflatten(x, 6, 3), labels, lambda, 0.5); }, flatten(r), 1e-6);
    EXPECT_LT(oracle::max_rel_error(flatten(l.grad_regions), numeric), 1e-4);
  }
}

TEST(Prototypes, WorkedExamples) {
  const std::vector<Vec> e{Vec{1, 0}, Vec{0, 1}};
  const std::vector<int> same{0, 0};
  EXPECT_EQ(class_prototypes({Vec{0.6, 0.8}, Vec{0.6, 0.8}}, same, Vec{1, 1}, 1)[0], (Vec{0.6, 0.8}));
  EXPECT_EQ(class_prototypes(e, same, Vec{1, 1}, 1)[0], (Vec{0.5, 0.5}));
  EXPECT_EQ(class_prototypes(e, same, Vec{2, 0}, 1)[0], (Vec{1, 0}));
  EXPECT_THROW(class_prototypes(e, same, Vec{1, 1}, 2), EmptyClass);
}

TEST(Posterior, SymmetricAndLogisticCases) {
  const Vec r{1, 0};
  const Vec p = region_class_posterior(r, {Vec{1, 1}, Vec{1, -1}}, 0.07);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  const Vec u = region_class_posterior(Vec{1, 1, 1}, {Vec{1, 0, 0}, Vec{0, 1, 0}, Vec{0, 0, 1}}, 0.07);
  for (double x : u) EXPECT_NEAR(x, 1.0 / 3.0, 1e-12);
  const Vec s = region_class_posterior(r, {Vec{3, 0}, Vec{0, 2}}, 0.07);
  EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(-1.0 / 0.07)), 1e-15);
  EXPECT_NEAR(s[0] + s[1], 1.0, 1e-12);
  EXPECT_THROW(region_class_posterior(r, {Vec{0, 0}, Vec{0, 1}}, 0.07), DegenerateVector);
}

TEST(Posterior, SumsToOne) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto protos = unit_vectors(rng, 5, 6);
    const Vec p = region_class_posterior(oracle::random_vec(rng, 6), protos, 0.07);
    double total = 0;
    for (double x : p) total += x;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(GlobalLoss, EquidistantRegionGivesLn2) {
  EmbeddingBatch b;
  b.way = 2;
  b.image_embeddings = {Vec{1, 0}, Vec{0, 1}};
  b.image_labels = {0, 1};
  b.region_embeddings = {oracle::unit(Vec{1, 1})};
  b.region_labels = {0};
  b.region_owner = {0};
  EXPECT_NEAR(global_dispersion_loss(b, Vec{1.0}, Vec{1, 1}, 0.07).value, std::log(2.0), 1e-12);
}

TEST(GlobalLoss, ZeroLambdaAnnihilates) {
  std::mt19937_64 rng(9);
  const EmbeddingBatch b = random_batch(rng, 3, 2, 2, 4);
  const LossPart l = global_dispersion_loss(b, Vec(b.region_embeddings.size(), 0.0), Vec(6, 1.0), 0.07);
  EXPECT_EQ(l.value, 0.0);
  for (const Vec& g : l.grad_regions)
    for (double x : g) EXPECT_EQ(x, 0.0);
  for (const Vec& g : l.grad_images)
    for (double x : g) EXPECT_EQ(x, 0.0);
}

TEST(GlobalLoss, MatchesOracleAndFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const EmbeddingBatch b = random_batch(rng, 2, 2, 2, 3);
    const Vec lambda = positive_weights(rng, b.region_embeddings.size());
    const Vec omega = positive_weights(rng, b.image_embeddings.size());
    const double pi = 0.5;
    const LossPart l = global_dispersion_loss(b, lambda, omega, pi);
    EXPECT_NEAR(l.value,
                oracle::global_loss(b.region_embeddings, b.region_labels, lambda, b.image_embeddings, b.image_labels,
                                    omega, b.way, pi),
                1e-12);
    const std::size_t nr = b.region_embeddings.size(), ni = b.image_embeddings.size(), d = 3;
    Vec x = flatten(b.region_embeddings);
    const Vec xi = flatten(b.image_embeddings);
    x.insert(x.end(), xi.begin(), xi.end());
    const Vec numeric = oracle::central_difference(
        [&](const Vec& v) {
          const Vec rv(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nr * d));
          const Vec iv(v.begin() + static_cast<std::ptrdiff_t>(nr * d), v.end());
          return oracle::global_loss(unflatten(rv, nr, d), b.region_labels, lambda, unflatten(iv, ni, d),
                                     b.image_labels, omega, b.way, pi);
        },
        x, 1e-6);
    Vec analytic = flatten(l.grad_regions);
    const Vec gi = flatten(l.grad_images);
    analytic.insert(analytic.end(), gi.begin(), gi.end());
    EXPECT_LT(oracle::max_rel_error(analytic, numeric), 1e-4);
  }
}

TEST(CombinedLoss, LinearCombination) {
  std::mt19937_64 rng(11);
  const EmbeddingBatch b = random_batch(rng, 2, 2, 2, 4);
  const Vec lambda = positive_weights(rng, 8);
  const Vec omega = positive_weights(rng, 4);
  LossHyperparams hp;
  const LossValue v = combined_loss(b, lambda, omega, hp);
  EXPECT_DOUBLE_EQ(v.combined, hp.beta * v.l_local + v.l_global);

  LossHyperparams zero = hp;
  zero.beta = 0.0;
  EXPECT_DOUBLE_EQ(combined_loss(b, lambda, omega, zero).combined, v.l_global);

  LossHyperparams twice = hp;
  twice.beta = 0.2;
  const LossValue v2 = combined_loss(b, lambda, omega, twice);
  const LossValue lonly = combined_loss(b, lambda, omega, hp, {true, false});
  const LossValue gonly = combined_loss(b, lambda, omega, hp, {false, true});
  EXPECT_EQ(lonly.l_global, 0.0);
  EXPECT_EQ(gonly.l_local, 0.0);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t k = 0; k < 4; ++k)
      EXPECT_NEAR(v2.grad_regions[r][k], 2 * lonly.grad_regions[r][k] + gonly.grad_regions[r][k], 1e-12);
}

TEST(CombinedLoss, FiniteDifferenceSweep) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    EmbeddingBatch b = random_batch(rng, 3, 2, 2, 4);
    const Vec lambda = positive_weights(rng, b.region_embeddings.size());
    const Vec omega = positive_weights(rng, b.image_embeddings.size());
    LossHyperparams hp;
    hp.pi = 0.3;
    const LossValue v = combined_loss(b, lambda, omega, hp);
    for (std::size_t r = 0; r < b.region_embeddings.size(); ++r)
      for (std::size_t k = 0; k < 4; ++k) {
        const double keep = b.region_embeddings[r][k];
        b.region_embeddings[r][k] = keep + 1e-6;
        const double up = combined_loss(b, lambda, omega, hp).combined;
        b.region_embeddings[r][k] = keep - 1e-6;
        const double down = combined_loss(b, lambda, omega, hp).combined;
        b.region_embeddings[r][k] = keep;
        const double num = (up - down) / 2e-6;
        EXPECT_LT(std::fabs(num - v.grad_regions[r][k]) / std::max({std::fabs(num), std::fabs(v.grad_regions[r][k]), 1e-4}),
                  1e-4);
      }
  }
}

TEST(CombinedLoss, GradientDescentDecreasesMonotonically) {
  std::mt19937_64 rng(13);
  EmbeddingBatch b = random_batch(rng, 2, 2, 2, 4);
  const Vec lambda(8, 1.0), omega(4, 1.0);
  const LossHyperparams hp;
  double prev = combined_loss(b, lambda, omega, hp).combined;
  for (int step = 0; step < 500; ++step) {
    const LossValue v = combined_loss(b, lambda, omega, hp);
    for (std::size_t r = 0; r < b.region_embeddings.size(); ++r)
      for (std::size_t k = 0; k < 4; ++k) b.region_embeddings[r][k] -= 1e-3 * v.grad_regions[r][k];
    for (std::size_t i = 0; i < b.image_embeddings.size(); ++i)
      for (std::size_t k = 0; k < 4; ++k) b.image_embeddings[i][k] -= 1e-3 * v.grad_images[i][k];
    const double now = combined_loss(b, lambda, omega, hp).combined;
    ASSERT_LT(now, prev) << "step " << step;
    prev = now;
  }
}

TEST(CombinedLoss, StableForExtremeLogits) {
  std::mt19937_64 rng(14);
  const EmbeddingBatch b = random_batch(rng, 2, 3, 2, 4);
  const Vec lambda(b.region_embeddings.size(), 50.0);
  LossHyperparams hp;
  hp.tau = 0.07;
  hp.pi = 0.002;
  const LossValue v = combined_loss(b, lambda, Vec(6, 1.0), hp);
  EXPECT_TRUE(std::isfinite(v.combined));
  for (const Vec& g : v.grad_regions) EXPECT_TRUE(all_finite(g));
  for (const Vec& g : v.grad_images) EXPECT_TRUE(all_finite(g));
}
