#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <mutex>
#include <random>

#include "pclda/errors.hpp"
#include "pclda/gradient_engine.hpp"
#include "test_support.hpp"

using namespace pclda;

namespace {

EmbedConfig short_embed(int t = 20) {
  EmbedConfig cfg;
  cfg.iterations = t;
  return cfg;
}

// Straight re-evaluation: EG iterations written out from scratch, then each
// term summed document by document.
LossBreakdown naive_loss(const Corpus& c, const UnconstrainedParams& u, double lambda, const EmbedConfig& cfg,
                         const Regularization& reg) {
  const TopicModelParams p = u.materialize();
  const int k_topics = p.num_topics();
  LossBreakdown out;
  for (std::size_t d = 0; d < c.num_docs(); ++d) {
    const SparseDoc& x = c.doc(d);
    std::vector<double> pi(k_topics, 1.0 / k_topics);
    for (int t = 0; t < cfg.iterations; ++t) {
      std::vector<double> g(k_topics, 0.0);
      for (int k = 0; k < k_topics; ++k) g[k] = (p.alpha - 1.0) / pi[k];
      for (std::size_t j = 0; j < x.ids.size(); ++j) {
        double s = 0;
        for (int k = 0; k < k_topics; ++k) s += pi[k] * p.phi(k, x.ids[j]);
        for (int k = 0; k < k_topics; ++k) g[k] += x.counts[j] * p.phi(k, x.ids[j]) / s;
      }
      double z = 0;
      for (int k = 0; k < k_topics; ++k) {
        pi[k] *= std::exp(cfg.step_size * g[k]);
        z += pi[k];
      }
      for (double& v : pi) v /= z;
    }
    double lp = std::lgamma(k_topics * p.alpha) - k_topics * std::lgamma(p.alpha);
    for (double v : pi) lp += (p.alpha - 1.0) * std::log(v);
    out.prior_term += lp;
    for (std::size_t j = 0; j < x.ids.size(); ++j) {
      double s = 0;
      for (int k = 0; k < k_topics; ++k) s += pi[k] * p.phi(k, x.ids[j]);
      out.data_term += x.counts[j] * std::log(s);
    }
    for (int l = 0; l < p.num_labels(); ++l) {
      double z = 0;
      for (int k = 0; k < k_topics; ++k) z += pi[k] * p.eta(l, k);
      const double prob = 1.0 / (1.0 + std::exp(-z));
      out.label_term += c.label_row(d)[l] ? std::log(prob) : std::log(1.0 - prob);
    }
  }
  out.reg_term = 0.5 * reg.tau_phi * u.phi_logits.squaredNorm() + 0.5 * reg.tau_eta * u.eta.squaredNorm();
  out.total = -(out.prior_term + out.data_term + lambda * out.label_term) + out.reg_term;
  return out;
}

class RecordingObserver : public SweepObserver {
 public:
  void on_forward(std::size_t doc, std::size_t stored) override {
    std::lock_guard lock(mu_);
    stored_[doc] = stored;
  }
  void on_reverse(std::size_t doc, int t) override {
    std::lock_guard lock(mu_);
    reverse_[doc].push_back(t);
  }
  std::map<std::size_t, std::size_t> stored_;
  std::map<std::size_t, std::vector<int>> reverse_;

 private:
  std::mutex mu_;
};

}  // namespace

TEST(PcGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const double lambdas[] = {0.0, 1.0, 10.0};
  for (int trial = 0; trial < 21; ++trial) {
    const int k = 2 + trial % 3;
    const int v = 4 + trial % 6;
    const int docs = 2 + trial % 5;
    const int labels = 1 + trial % 2;
    const Corpus c = fixtures::random_corpus(rng, v, docs, labels, 3);
    const UnconstrainedParams u = fixtures::random_params(rng, k, v, labels, 1.1 + 0.1 * (trial % 3), 0.5, 1.0);
    const double lambda = lambdas[trial % 3];
    const auto [loss, g] = pc_loss_grad(c, u, lambda, short_embed(), Regularization{});
    const auto fd = finite_diff_gradient(c, u, lambda, short_embed(), Regularization{}, 1e-5);
    const auto a = fixtures::flat(g);
    const auto b = fixtures::flat(fd);
    EXPECT_LE(fixtures::max_rel_error(a, b), 1e-4) << "trial " << trial;
  }
}

TEST(PcGradient, LossLinearInLambda) {
  std::mt19937_64 rng(2);
  const Corpus c = fixtures::random_corpus(rng, 6, 5, 2);
  const auto u = fixtures::random_params(rng, 3, 6, 2);
  const auto l0 = pc_loss(c, u, 0.0, short_embed(), Regularization{});
  const auto l1 = pc_loss(c, u, 1.0, short_embed(), Regularization{});
  const auto l7 = pc_loss(c, u, 7.0, short_embed(), Regularization{});
  EXPECT_NEAR(l7.total - l0.total, 7.0 * (l1.total - l0.total), 1e-9 * std::abs(l7.total));
  EXPECT_EQ(l0.label_term, l7.label_term);
}

TEST(PcGradient, EtaGradientIsRegularizerAtLambdaZero) {
  std::mt19937_64 rng(3);
  const Corpus c = fixtures::random_corpus(rng, 5, 4, 2);
  const auto u = fixtures::random_params(rng, 3, 5, 2);
  const Regularization reg;
  const auto [loss, g] = pc_loss_grad(c, u, 0.0, short_embed(), reg);
  EXPECT_LT((g.eta - reg.tau_eta * u.eta).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PcGradient, SingleDocumentComposesCoreTerms) {
  std::mt19937_64 rng(4);
  const Corpus c = fixtures::random_corpus(rng, 4, 1, 1);
  const auto u = fixtures::random_params(rng, 2, 4, 1);
  const auto p = u.materialize();
  const EmbedConfig cfg = short_embed(30);
  const DocTopicVector pi = map_embed(c.doc(0), p, cfg);
  const auto loss = pc_loss(c, u, 2.0, cfg, Regularization{0.0, 0.0});
  EXPECT_NEAR(loss.data_term, doc_data_loglik(c.doc(0), pi, p), 1e-12);
  EXPECT_NEAR(loss.label_term, doc_label_loglik(c.label_row(0), pi, p), 1e-12);
  EXPECT_NEAR(loss.prior_term, dirichlet_logpdf(pi, p.alpha), 1e-12);
  EXPECT_EQ(loss.reg_term, 0.0);
}

TEST(PcGradient, MatchesStraightReimplementation) {
  std::mt19937_64 rng(5);
  const Corpus c = fixtures::random_corpus(rng, 3, 4, 1, 5);
  const auto u = fixtures::random_params(rng, 2, 3, 1, 1.3);
  const auto got = pc_loss(c, u, 10.0, EmbedConfig{}, Regularization{});
  const auto want = naive_loss(c, u, 10.0, EmbedConfig{}, Regularization{});
  EXPECT_NEAR(got.prior_term, want.prior_term, 1e-10);
  EXPECT_NEAR(got.data_term, want.data_term, 1e-10);
  EXPECT_NEAR(got.label_term, want.label_term, 1e-10);
  EXPECT_NEAR(got.reg_term, want.reg_term, 1e-15);
  EXPECT_NEAR(got.total, want.total, 1e-9);
}

TEST(PcGradient, ObjectiveWeightsSelectTerms) {
  std::mt19937_64 rng(6);
  const Corpus c = fixtures::random_corpus(rng, 5, 4, 1);
  const auto u = fixtures::random_params(rng, 3, 5, 1);
  const Regularization none{0.0, 0.0};
  const auto bp = objective_loss(c, u, {0.0, 1.0}, short_embed(), none);
  EXPECT_NEAR(bp.total, -bp.label_term, 1e-12);
  const auto unsup = objective_loss(c, u, {1.0, 0.0}, short_embed(), none);
  EXPECT_NEAR(unsup.total, -(unsup.prior_term + unsup.data_term), 1e-12);
  const auto [loss, g] = objective_loss_grad(c, u, {0.0, 1.0}, short_embed(), none);
  EXPECT_GT(g.phi_logits.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PcGradient, ObserverSeesBoundedStorageAndFullReverse) {
  std::mt19937_64 rng(7);
  const Corpus c = fixtures::random_corpus(rng, 5, 6, 1);
  const auto u = fixtures::random_params(rng, 3, 5, 1);
  RecordingObserver obs;
  EngineOptions opts;
  opts.observer = &obs;
  pc_loss_grad(c, u, 1.0, short_embed(20), Regularization{}, opts);
  ASSERT_EQ(obs.stored_.size(), 6u);
  for (const auto& [doc, stored] : obs.stored_) EXPECT_LE(stored, 21u * 3u);
  for (const auto& [doc, ts] : obs.reverse_) {
    ASSERT_EQ(ts.size(), 21u);
    for (int i = 0; i <= 20; ++i) EXPECT_EQ(ts[i], 20 - i);
  }
}

TEST(PcGradient, ThreadCountDoesNotChangeBits) {
  std::mt19937_64 rng(8);
  const Corpus c = fixtures::random_corpus(rng, 7, 700, 2);
  const auto u = fixtures::random_params(rng, 4, 7, 2);
  EngineOptions one;
  EngineOptions many;
  many.threads = 3;
  const auto [la, ga] = pc_loss_grad(c, u, 5.0, short_embed(), Regularization{}, one);
  const auto [lb, gb] = pc_loss_grad(c, u, 5.0, short_embed(), Regularization{}, many);
  EXPECT_EQ(la.total, lb.total);
  EXPECT_EQ(fixtures::flat(ga), fixtures::flat(gb));
}

TEST(PcGradient, SubsetIsRescaled) {
  std::mt19937_64 rng(9);
  const Corpus c = fixtures::random_corpus(rng, 4, 4, 1);
  const auto u = fixtures::random_params(rng, 2, 4, 1);
  const Regularization none{0.0, 0.0};
  const std::size_t one_doc[] = {2};
  EngineOptions opts;
  opts.subset = one_doc;
  const auto part = pc_loss(c, u, 1.0, short_embed(), none, opts);
  const auto alone = pc_loss(c.select(one_doc), u, 1.0, short_embed(), none);
  EXPECT_NEAR(part.total, 4.0 * alone.total, 1e-10 * std::abs(part.total));
}

TEST(Unconstrained, RoundTripsThroughParams) {
  std::mt19937_64 rng(10);
  const auto u = fixtures::random_params(rng, 3, 5, 2);
  const auto p = u.materialize();
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p.phi.row(k).sum(), 1.0, 1e-12);
  const auto back = UnconstrainedParams::from_params(p).materialize();
  EXPECT_LT((back.phi - p.phi).cwiseAbs().maxCoeff(), 1e-14);
  std::vector<double> flat(u.size());
  u.copy_to(flat);
  UnconstrainedParams w = u;
  w.phi_logits.setZero();
  w.eta.setZero();
  w.copy_from(flat);
  EXPECT_EQ(w.phi_logits, u.phi_logits);
  EXPECT_EQ(w.eta, u.eta);
}
