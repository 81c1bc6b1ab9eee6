#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "pclda/core_model.hpp"

namespace pclda {

struct GibbsConfig {
  int num_topics = 4;
  double alpha = 1.1;
  double beta_word = 0.1;
  int sweeps = 500;
  int burn_in = 250;
  int thin = 5;
  std::uint64_t seed = 0;
};

// Collapsed Gibbs sampler for unsupervised LDA.
//
// Conditional for a token of word v in document d:
//   p(z = k) ∝ (n_dk + alpha) (n_kv + beta) / (n_k + V beta)
// with the token's own assignment removed from the counts.
class GibbsSampler {
 public:
  GibbsSampler(const Corpus& corpus, const GibbsConfig& cfg);

  // One pass over every token in document order.
  void sweep();
  int sweeps_done() const { return sweeps_done_; }

  // Posterior-mean topic-word estimate (n_kv + beta) / (n_k + V beta) of the
  // current state.
  Matrix current_phi() const;

  // Throws std::logic_error if the count tables disagree with the
  // assignments.
  void check_invariants() const;

  const std::vector<std::vector<int>>& assignments() const { return z_; }
  const std::vector<std::vector<int>>& doc_topic() const { return n_dk_; }
  const std::vector<std::vector<int>>& topic_word() const { return n_kv_; }
  const std::vector<long long>& topic_totals() const { return n_k_; }

 private:
  const Corpus& corpus_;
  GibbsConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::vector<int>> tokens_;  // expanded word ids per document
  std::vector<std::vector<int>> z_;
  std::vector<std::vector<int>> n_dk_;
  std::vector<std::vector<int>> n_kv_;
  std::vector<long long> n_k_;
  std::vector<double> prob_;
  int sweeps_done_ = 0;
};

// Runs cfg.sweeps sweeps and averages current_phi() over post-burn-in sweeps
// every cfg.thin sweeps. eta has num_labels rows of zeros.
TopicModelParams gibbs_train(const Corpus& corpus, const GibbsConfig& cfg, int num_labels = 0);

struct LogisticHeadConfig {
  double tau_eta = 1e-4;
  double learning_rate = 0.05;
  int steps = 3000;
  std::uint64_t seed = 0;
};

// Fits eta (L x K) maximizing sum_d log p(y_d | pi_d, eta) - tau/2 |eta|^2
// with full-batch Adam from a small seeded random start. A label column
// holding a single class gets a zero row and a warning on stderr.
Matrix fit_logistic_head(const Matrix& pi, const LabelMatrix& labels, const LogisticHeadConfig& cfg);

}  // namespace pclda
