#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "deta/cora.hpp"
#include "deta/error.hpp"
#include "oracles.hpp"

using namespace deta;

namespace {

struct Instance {
  RegionDraw regions;
  std::vector<int> ids;
  std::vector<int> labels;
};

Instance random_instance(std::mt19937_64& rng, int way, int per_class, int k, std::size_t dim) {
  Instance in;
  int id = 10;
  for (int c = 0; c < way; ++c)
    for (int s = 0; s < per_class; ++s) {
      std::vector<Vec> rs;
      for (int j = 0; j < k; ++j) rs.push_back(oracle::random_vec(rng, dim));
      in.regions.push_back(rs);
      in.ids.push_back(id++);
      in.labels.push_back(c);
    }
  return in;
}

}  // namespace

TEST(RegionSets, CountsForTwoByTwoByTwo) {
  std::mt19937_64 rng(1);
  const Instance in = random_instance(rng, 2, 2, 2, 3);
  const auto index = index_regions(in.ids, in.labels, in.regions);
  ASSERT_EQ(index.size(), 8u);
  for (const auto& s : build_region_sets(index)) {
    EXPECT_EQ(s.in_class.size(), 2u);
    EXPECT_EQ(s.out_of_class.size(), 4u);
  }
}

TEST(RegionSets, SingleRegionAndSingleSampleCases) {
  std::mt19937_64 rng(2);
  const Instance k1 = random_instance(rng, 3, 4, 1, 3);
  for (const auto& s : build_region_sets(index_regions(k1.ids, k1.labels, k1.regions))) {
    EXPECT_EQ(s.in_class.size(), 3u);
    EXPECT_EQ(s.out_of_class.size(), 8u);
  }
  const Instance lone = random_instance(rng, 2, 1, 2, 3);
  for (const auto& s : build_region_sets(index_regions(lone.ids, lone.labels, lone.regions)))
    EXPECT_TRUE(s.in_class.empty());
}

TEST(RegionSets, InClassExcludesOwnImage) {
  std::mt19937_64 rng(3);
  const Instance in = random_instance(rng, 2, 3, 2, 3);
  const auto index = index_regions(in.ids, in.labels, in.regions);
  const auto sets = build_region_sets(index);
  for (std::size_t a = 0; a < index.size(); ++a) {
    for (std::size_t b : sets[a].in_class) {
      EXPECT_NE(index[b].sample_id, index[a].sample_id);
      EXPECT_EQ(index[b].class_id, index[a].class_id);
    }
    for (std::size_t b : sets[a].out_of_class) EXPECT_NE(index[b].class_id, index[a].class_id);
  }
}

TEST(Relevance, WorkedExamples) {
  const Vec r{1, 0};
  EXPECT_DOUBLE_EQ(relevance_scores(r, {Vec{2, 0}}, {Vec{0, 1}}).phi, 1.0);
  EXPECT_DOUBLE_EQ(relevance_scores(r, {Vec{1, 0}, Vec{0, 3}}, {Vec{0, 1}}).phi, 0.5);
  EXPECT_DOUBLE_EQ(relevance_scores(r, {Vec{1, 0}}, {Vec{0, 1}, Vec{0, -2}}).psi, 0.0);
  EXPECT_THROW(relevance_scores(r, {Vec{0, 0}}, {Vec{0, 1}}), DegenerateVector);
}

TEST(RegionWeights, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> way_d(2, 3), per_d(1, 3), k_d(1, 2);
    const int way = way_d(rng), per = per_d(rng), k = k_d(rng);
    const Instance in = random_instance(rng, way, per, k, 5);
    for (bool ooc : {true, false}) {
      const RegionWeightTable t = region_weights(in.regions, in.ids, in.labels, {ooc});
      const oracle::CoraResult o = oracle::region_weights(in.regions, in.labels, ooc);
      ASSERT_EQ(t.size(), o.lambda.size());
      for (std::size_t a = 0; a < t.size(); ++a) {
        EXPECT_NEAR(t.phi[a], o.phi[a], 1e-12);
        EXPECT_NEAR(t.psi[a], o.psi[a], 1e-12);
        EXPECT_NEAR(t.phi_tilde[a], o.phi_tilde[a], 1e-12);
        EXPECT_NEAR(t.psi_tilde[a], o.psi_tilde[a], 1e-12);
        EXPECT_NEAR(t.lambda[a], o.lambda[a], 1e-9);
      }
    }
  }
}

TEST(RegionWeights, TableInvariants) {
  std::mt19937_64 rng(5);
  const Instance in = random_instance(rng, 3, 3, 2, 6);
  const RegionWeightTable t = region_weights(in.regions, in.ids, in.labels);
  for (int c = 0; c < 3; ++c) {
    double sp = 0, ss = 0;
    for (std::size_t a = 0; a < t.size(); ++a)
      if (t.index[a].class_id == c) {
        sp += t.phi_tilde[a];
        ss += t.psi_tilde[a];
      }
    EXPECT_NEAR(sp, 1.0, 1e-9);
    EXPECT_NEAR(ss, 1.0, 1e-9);
  }
  for (std::size_t a = 0; a < t.size(); ++a) {
    EXPECT_GT(t.lambda[a], 0.0);
    EXPECT_DOUBLE_EQ(t.lambda[a], t.phi_tilde[a] / t.psi_tilde[a]);
  }
}

TEST(RegionWeights, IdenticalRegionsAndOrthogonalClassesGiveUnitWeights) {
  RegionDraw regions{{Vec{1, 0, 0}, Vec{1, 0, 0}}, {Vec{2, 0, 0}, Vec{1, 0, 0}},
                     {Vec{0, 1, 0}, Vec{0, 3, 0}}, {Vec{0, 1, 0}, Vec{0, 1, 0}}};
  const RegionWeightTable t = region_weights(regions, std::vector<int>{0, 1, 2, 3}, std::vector<int>{0, 0, 1, 1});
  for (double l : t.lambda) EXPECT_NEAR(l, 1.0, 1e-15);
}

TEST(RegionWeights, PermutationEquivariant) {
  std::mt19937_64 rng(6);
  const Instance in = random_instance(rng, 3, 2, 2, 4);
  const RegionWeightTable t = region_weights(in.regions, in.ids, in.labels);
  std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
  Instance p;
  for (std::size_t i : perm) {
    p.regions.push_back(in.regions[i]);
    p.ids.push_back(in.ids[i]);
    p.labels.push_back(in.labels[i]);
  }
  const RegionWeightTable tp = region_weights(p.regions, p.ids, p.labels);
  for (std::size_t n = 0; n < perm.size(); ++n)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(tp.lambda[n * 2 + j], t.lambda[perm[n] * 2 + j], 1e-12);
}

TEST(RegionWeights, PositiveScaleOfOneSampleLeavesWeightsUnchanged) {
  std::mt19937_64 rng(7);
  const Instance in = random_instance(rng, 2, 3, 2, 4);
  const RegionWeightTable t = region_weights(in.regions, in.ids, in.labels);
  Instance s = in;
  for (Vec& r : s.regions[2])
    for (double& x : r) x *= 37.5;
  const RegionWeightTable ts = region_weights(s.regions, s.ids, s.labels);
  for (std::size_t a = 0; a < t.size(); ++a) EXPECT_NEAR(ts.lambda[a], t.lambda[a], 1e-9);
}

TEST(RegionWeights, DegenerateInClassSetGivesUniformPhi) {
  std::mt19937_64 rng(8);
  Instance in = random_instance(rng, 2, 2, 2, 3);
  in.regions.pop_back();
  in.ids.pop_back();
  in.labels.pop_back();
  const RegionWeightTable t = region_weights(in.regions, in.ids, in.labels);
  for (std::size_t a = 0; a < t.size(); ++a)
    if (t.index[a].class_id == 1) {
      EXPECT_EQ(t.phi[a], 0.0);
      EXPECT_NEAR(t.phi_tilde[a], 0.5, 1e-15);
    }
}

TEST(RegionWeights, SingleClassRejected) {
  std::mt19937_64 rng(9);
  const Instance in = random_instance(rng, 1, 3, 2, 3);
  EXPECT_THROW(region_weights(in.regions, in.ids, in.labels), InvalidParameter);
}

TEST(RegionWeights, ZeroRegionRejected) {
  RegionDraw regions{{Vec{1, 0}}, {Vec{0, 0}}};
  EXPECT_THROW(region_weights(regions, std::vector<int>{0, 1}, std::vector<int>{0, 1}), DegenerateVector);
}

TEST(RegionWeights, WithoutOutOfClassTermPsiTildeIsUniform) {
  std::mt19937_64 rng(10);
  const Instance in = random_instance(rng, 2, 3, 2, 4);
  const RegionWeightTable t = region_weights(in.regions, in.ids, in.labels, {false});
  for (double p : t.psi_tilde) EXPECT_NEAR(p, 1.0 / 6.0, 1e-15);
}

TEST(RegionWeights, MislabeledRegionGetsLowWeight) {
  RegionDraw regions;
  std::vector<int> ids, labels;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 0.05);
  auto near = [&](std::size_t axis) {
    Vec v(4);
    for (double& x : v) x = n(rng);
    v[axis] += 1.0;
    return v;
  };
  for (int s = 0; s < 4; ++s) {
    regions.push_back({near(0), near(0)});
    labels.push_back(0);
    ids.push_back(s);
  }
  for (int s = 0; s < 4; ++s) {
    regions.push_back({near(1), near(1)});
    labels.push_back(1);
    ids.push_back(4 + s);
  }
  regions[3] = {near(1), near(1)};
  const RegionWeightTable t = region_weights(regions, ids, labels);
  const auto means = t.mean_lambda_per_sample();
  for (int s = 0; s < 3; ++s) EXPECT_GT(means.at(s), means.at(3));
}

TEST(Accumulator, FirstUpdateIsMeanThenConvexBlend) {
  RegionWeightTable t;
  t.index = {{7, 0, 0}, {7, 1, 0}};
  t.lambda = {0.4, 0.6};
  ImageWeightAccumulator acc({7}, 0.7);
  EXPECT_EQ(acc.iteration(), 0u);
  acc = accumulate_image_weights(acc, t);
  EXPECT_EQ(acc.iteration(), 1u);
  EXPECT_DOUBLE_EQ(acc.omega(7), 0.5);
  t.lambda = {1.0, 1.0};
  acc = accumulate_image_weights(acc, t);
  EXPECT_EQ(acc.iteration(), 2u);
  EXPECT_NEAR(acc.omega(7), 0.65, 1e-15);
}

TEST(Accumulator, ConstantStreamConvergesGeometrically) {
  RegionWeightTable t;
  t.index = {{1, 0, 0}, {1, 1, 0}};
  t.lambda = {0.1, 0.1};
  ImageWeightAccumulator acc({1}, 0.7);
  acc = accumulate_image_weights(acc, t);
  t.lambda = {2.0, 3.0};
  for (int step = 2; step <= 200; ++step) {
    acc = accumulate_image_weights(acc, t);
    const double closed = 2.5 + (0.1 - 2.5) * std::pow(0.7, step - 1);
    EXPECT_NEAR(acc.omega(1), closed, 1e-12);
  }
  EXPECT_NEAR(acc.omega(1), 2.5, 1e-6);
}

TEST(Accumulator, MissingSampleAndBadMomentum) {
  RegionWeightTable t;
  t.index = {{1, 0, 0}};
  t.lambda = {1.0};
  ImageWeightAccumulator acc({1, 2}, 0.7);
  EXPECT_THROW(accumulate_image_weights(acc, t), MissingWeight);
  EXPECT_THROW(acc.omega(1), MissingWeight);
  EXPECT_THROW(ImageWeightAccumulator({1}, 1.0), InvalidParameter);
  EXPECT_THROW(ImageWeightAccumulator({1}, -0.1), InvalidParameter);
}

TEST(Accumulator, ZeroMomentumTracksLatestMean) {
  RegionWeightTable t;
  t.index = {{1, 0, 0}};
  ImageWeightAccumulator acc({1}, 0.0);
  for (double v : {0.3, 1.7, 0.9}) {
    t.lambda = {v};
    acc = accumulate_image_weights(acc, t);
    EXPECT_DOUBLE_EQ(acc.omega(1), v);
  }
}

TEST(Accumulator, PermutationOfSamplesPermutesWeights) {
  std::mt19937_64 rng(12);
  const Instance in = random_instance(rng, 2, 3, 2, 4);
  Instance p = in;
  std::reverse(p.regions.begin(), p.regions.end());
  std::reverse(p.ids.begin(), p.ids.end());
  std::reverse(p.labels.begin(), p.labels.end());
  ImageWeightAccumulator a(in.ids, 0.7), b(p.ids, 0.7);
  for (int step = 0; step < 3; ++step) {
    a = accumulate_image_weights(a, region_weights(in.regions, in.ids, in.labels));
    b = accumulate_image_weights(b, region_weights(p.regions, p.ids, p.labels));
  }
  for (int id : in.ids) EXPECT_NEAR(a.omega(id), b.omega(id), 1e-12);
}

TEST(WeightCsv, HeaderAndRows) {
  RegionDraw regions{{Vec{1, 0}, Vec{0.9, 0.1}}, {Vec{0, 1}, Vec{0.1, 0.9}}};
  const std::vector<int> ids{3, 4}, labels{0, 1};
  const RegionWeightTable t = region_weights(regions, ids, labels);
  const ImageWeightAccumulator acc = accumulate_image_weights(ImageWeightAccumulator(ids, 0.7), t);
  std::ostringstream out;
  write_weight_csv_header(out);
  write_weight_csv_rows(out, 1, t, acc);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iteration,sample_id,region_slot,phi,psi,lambda,omega");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}
