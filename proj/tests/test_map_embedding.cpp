#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pclda/errors.hpp"
#include "pclda/map_embedding.hpp"
#include "test_support.hpp"

using namespace pclda;

namespace {

TopicModelParams two_by_two(double alpha) {
  TopicModelParams p;
  p.phi = Matrix(2, 2);
  p.phi << 0.9, 0.1, 0.1, 0.9;
  p.eta = Matrix::Zero(1, 2);
  p.alpha = alpha;
  p.validate();
  return p;
}

}  // namespace

TEST(MapEmbed, TwoWordClosedForm) {
  // Root of 0.5/p - 0.5/(1-p) + 8/(0.1 + 0.8p), 30-digit arithmetic.
  const double map = 0.949167922481428405236;
  const auto p = two_by_two(1.5);
  const SparseDoc x = make_doc({{0, 10}});
  const DocTopicVector grid = brute_force_map(x, std::nullopt, p, EmbedConfig{}, 1e-4);
  EXPECT_NEAR(grid[0], map, 1e-4);
  // Ten tokens give a shallow objective: after the default 100 steps the
  // iterate is still 3.3e-3 short of the maximizer. The value below is the
  // same recursion evaluated independently in double precision.
  const DocTopicVector pi = map_embed(x, p, EmbedConfig{});
  EXPECT_NEAR(pi[0], 0.9458225103541678, 1e-12);
  EXPECT_GT(map - pi[0], 3e-3);
  EmbedConfig longer;
  longer.iterations = 400;
  EXPECT_NEAR(map_embed(x, p, longer)[0], map, 1e-6);
}

TEST(MapEmbed, MatchesGridOracleK2) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = fixtures::separated_embed_instance(rng);
    const DocTopicVector eg = map_embed(inst.doc, inst.params, EmbedConfig{});
    const DocTopicVector grid = brute_force_map(inst.doc, std::nullopt, inst.params, EmbedConfig{}, 1e-4);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(eg[k], grid[k], 1e-3) << "trial " << trial;
  }
}

// T = 100 steps of size 0.005 do not always reach the maximizer: with short
// documents and overlapping topics the iterate can still be 1e-2 away.
TEST(MapEmbed, FixedBudgetCanStopShortOfTheMaximizer) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 8; ++trial) fixtures::random_embed_instance(rng, 2, 5, 40, 2);
  const auto inst = fixtures::random_embed_instance(rng, 2, 5, 40, 2);
  EmbedConfig cfg;
  cfg.joint_label_weight = 1.0;
  const double grid = brute_force_map(inst.doc, std::span<const int>(inst.labels), inst.params, cfg, 1e-4)[0];
  EXPECT_GT(std::abs(map_embed_joint(inst.doc, inst.labels, inst.params, cfg)[0] - grid), 1e-3);
  cfg.iterations = 2000;
  EXPECT_NEAR(map_embed_joint(inst.doc, inst.labels, inst.params, cfg)[0], grid, 1e-4);
}

TEST(MapEmbed, JointModeMatchesGridOracleK2) {
  std::mt19937_64 rng(77);
  EmbedConfig cfg;
  cfg.joint_label_weight = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = fixtures::separated_embed_instance(rng, 2);
    const DocTopicVector eg = map_embed_joint(inst.doc, inst.labels, inst.params, cfg);
    const DocTopicVector grid =
        brute_force_map(inst.doc, std::span<const int>(inst.labels), inst.params, cfg, 1e-4);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(eg[k], grid[k], 1e-3) << "trial " << trial;
  }
}

TEST(MapEmbed, IteratesStayOnSimplexAndClimb) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int k = 2 + trial % 4;
    const auto inst = fixtures::random_embed_instance(rng, k, 8, 5 + 3 * trial, 1);
    for (double weight : {0.0, 3.0}) {
      EmbedConfig cfg;
      cfg.joint_label_weight = weight;
      const auto it = map_embed_iterates(inst.doc, inst.params, cfg, std::span<const int>(inst.labels));
      ASSERT_EQ(it.size(), 101u);
      double prev = -std::numeric_limits<double>::infinity();
      for (const Vector& pi : it) {
        EXPECT_NEAR(pi.sum(), 1.0, 1e-9);
        EXPECT_GE(pi.minCoeff(), 0.0);
        const double f =
            ascended_objective(DocTopicVector(pi), inst.doc, inst.params, cfg, std::span<const int>(inst.labels));
        EXPECT_GE(f, prev - 1e-10);
        prev = f;
      }
    }
  }
}

TEST(MapEmbed, StartsUniformAndRunsExactlyT) {
  EmbedConfig cfg;
  cfg.iterations = 7;
  const auto it = map_embed_iterates(make_doc({{0, 3}}), two_by_two(1.2), cfg);
  ASSERT_EQ(it.size(), 8u);
  EXPECT_DOUBLE_EQ(it[0][0], 0.5);
  const DocTopicVector last = map_embed(make_doc({{0, 3}}), two_by_two(1.2), cfg);
  EXPECT_EQ(last.values(), it.back());
}

TEST(MapEmbed, ZeroWeightJointEqualsPredict) {
  std::mt19937_64 rng(4);
  const auto inst = fixtures::random_embed_instance(rng, 3, 6, 20, 2);
  EXPECT_EQ(map_embed_joint(inst.doc, inst.labels, inst.params, EmbedConfig{}).values(),
            map_embed(inst.doc, inst.params, EmbedConfig{}).values());
}

TEST(MapEmbed, ZeroEtaMakesLabelsIrrelevant) {
  std::mt19937_64 rng(5);
  auto inst = fixtures::random_embed_instance(rng, 3, 6, 20, 2);
  inst.params.eta.setZero();
  EmbedConfig cfg;
  cfg.joint_label_weight = 10.0;
  const Vector a = map_embed_joint(inst.doc, inst.labels, inst.params, cfg).values();
  const Vector b = map_embed(inst.doc, inst.params, EmbedConfig{}).values();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MapEmbed, TopicPermutationSymmetry) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = fixtures::random_embed_instance(rng, 4, 7, 25);
    const int perm[] = {3, 1, 0, 2};
    TopicModelParams q = inst.params;
    for (int k = 0; k < 4; ++k) {
      q.phi.row(k) = inst.params.phi.row(perm[k]);
      q.eta.col(k) = inst.params.eta.col(perm[k]);
    }
    const Vector a = map_embed(inst.doc, inst.params, EmbedConfig{}).values();
    const Vector b = map_embed(inst.doc, q, EmbedConfig{}).values();
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(b[k], a[perm[k]], 1e-12);
  }
}

TEST(MapEmbed, ReparameterizedHandlesSparsePrior) {
  std::mt19937_64 rng(12);
  auto inst = fixtures::random_embed_instance(rng, 3, 6, 30);
  inst.params.alpha = 0.3;
  EmbedConfig cfg;
  EXPECT_THROW(map_embed(inst.doc, inst.params, cfg), InvalidParameter);
  cfg.mode = MapMode::reparameterized;
  const auto it = map_embed_iterates(inst.doc, inst.params, cfg);
  for (const Vector& pi : it) {
    EXPECT_NEAR(pi.sum(), 1.0, 1e-9);
    EXPECT_GT(pi.minCoeff(), 0.0);
  }
}

TEST(MapEmbed, OverflowSafeForHugeCounts) {
  const auto p = two_by_two(1.0);
  EmbedConfig cfg;
  cfg.step_size = 10.0;
  const DocTopicVector pi = map_embed(make_doc({{0, 1000000}}), p, cfg);
  EXPECT_TRUE(std::isfinite(pi[0]));
  EXPECT_GT(pi[0], 0.99);
}

TEST(MapEmbed, ConfigValidation) {
  const auto p = two_by_two(1.1);
  const SparseDoc x = make_doc({{0, 1}});
  EmbedConfig cfg;
  cfg.iterations = 0;
  EXPECT_THROW(map_embed(x, p, cfg), InvalidParameter);
  cfg = {};
  cfg.step_size = 0.0;
  EXPECT_THROW(map_embed(x, p, cfg), InvalidParameter);
  cfg = {};
  cfg.joint_label_weight = 1.0;
  EXPECT_THROW(map_embed(x, p, cfg), InvalidParameter);
  const int too_long[] = {1, 0};
  EXPECT_THROW(map_embed_joint(x, too_long, p, cfg), InvalidParameter);
  EXPECT_THROW(map_embed(make_doc({{2, 1}}), p, EmbedConfig{}), InvalidParameter);
}

TEST(LogpostGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = fixtures::random_embed_instance(rng, 3, 6, 15, 2);
    const Vector pi = fixtures::random_simplex(rng, 3);
    const double weight = trial % 2 ? 2.0 : 0.0;
    const Vector g = logpost_grad(DocTopicVector(pi), inst.doc, inst.params,
                                  std::span<const int>(inst.labels), weight);
    // The gradient treats pi as unconstrained, so perturb one coordinate at
    // a time and evaluate the same expression directly.
    auto f = [&](const Vector& q) {
      double v = (inst.params.alpha - 1.0) * q.array().log().sum();
      for (std::size_t j = 0; j < inst.doc.ids.size(); ++j) {
        v += inst.doc.counts[j] * std::log(q.dot(inst.params.phi.col(inst.doc.ids[j])));
      }
      for (std::size_t l = 0; l < inst.labels.size(); ++l) {
        const double z = inst.params.eta.row(static_cast<Eigen::Index>(l)).dot(q);
        const double logp = inst.labels[l] ? -std::log1p(std::exp(-z)) : -std::log1p(std::exp(z));
        v += weight * logp;
      }
      return v;
    };
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Vector up = pi, down = pi;
      up[k] += h;
      down[k] -= h;
      const double fd = (f(up) - f(down)) / (2 * h);
      EXPECT_NEAR(g[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(LogpostGrad, BoundaryRejectedUnlessFlatPrior) {
  const auto p = two_by_two(1.5);
  Vector corner(2);
  corner << 1.0, 0.0;
  EXPECT_THROW(logpost_grad(DocTopicVector(corner), make_doc({{0, 1}}), p, std::nullopt, 0.0), DomainError);
  const auto flat = two_by_two(1.0);
  EXPECT_NO_THROW(logpost_grad(DocTopicVector(corner), make_doc({{0, 1}}), flat, std::nullopt, 0.0));
}

TEST(BruteForce, SymmetricInstanceTiesToFirstPoint) {
  TopicModelParams p;
  p.phi = Matrix::Constant(3, 2, 0.5);
  p.eta = Matrix::Zero(1, 3);
  p.alpha = 1.0;
  // Flat objective: every grid point ties, so the first scanned wins.
  const DocTopicVector pi = brute_force_map(make_doc({{0, 1}}), std::nullopt, p, EmbedConfig{}, 0.25);
  EXPECT_DOUBLE_EQ(pi[0], 0.25);
  EXPECT_DOUBLE_EQ(pi[1], 0.25);
}

TEST(BruteForce, SymmetricPriorPeaksAtCentreK3) {
  TopicModelParams p;
  p.phi = Matrix::Constant(3, 2, 0.5);
  p.eta = Matrix::Zero(1, 3);
  p.alpha = 2.0;
  const DocTopicVector pi = brute_force_map(make_doc({{1, 4}}), std::nullopt, p, EmbedConfig{}, 0.01);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(pi[k], 1.0 / 3.0, 0.01);
}

TEST(BruteForce, RejectsUnsupportedShapes) {
  TopicModelParams p;
  p.phi = Matrix::Constant(4, 2, 0.5);
  p.eta = Matrix::Zero(1, 4);
  EXPECT_THROW(brute_force_map(make_doc({{0, 1}}), std::nullopt, p, EmbedConfig{}, 0.1), Unsupported);
  EXPECT_THROW(brute_force_map(make_doc({{0, 1}}), std::nullopt, two_by_two(1.1), EmbedConfig{}, 0.3),
               InvalidParameter);
}
