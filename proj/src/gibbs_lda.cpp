#include "pclda/gibbs_lda.hpp"

#include <iostream>
#include <stdexcept>
#include <string>

#include "pclda/adam.hpp"
#include "pclda/errors.hpp"
#include "pclda/numeric.hpp"

namespace pclda {

GibbsSampler::GibbsSampler(const Corpus& corpus, const GibbsConfig& cfg)
    : corpus_(corpus), cfg_(cfg), rng_(cfg.seed) {
  const int k_topics = cfg_.num_topics;
  if (k_topics < 1) throw InvalidParameter("gibbs: num_topics must be >= 1");
  if (!(cfg_.alpha > 0.0) || !(cfg_.beta_word > 0.0)) {
    throw InvalidParameter("gibbs: alpha and beta_word must be > 0");
  }
  if (corpus.total_tokens() < k_topics) {
    throw InvalidParameter("gibbs: more topics (" + std::to_string(k_topics) + ") than tokens (" +
                           std::to_string(corpus.total_tokens()) + ")");
  }
  const std::size_t n_docs = corpus.num_docs();
  tokens_.resize(n_docs);
  z_.resize(n_docs);
  n_dk_.assign(n_docs, std::vector<int>(static_cast<std::size_t>(k_topics), 0));
  n_kv_.assign(static_cast<std::size_t>(k_topics),
               std::vector<int>(static_cast<std::size_t>(corpus.vocab_size()), 0));
  n_k_.assign(static_cast<std::size_t>(k_topics), 0);
  prob_.resize(static_cast<std::size_t>(k_topics));

  std::uniform_int_distribution<int> pick(0, k_topics - 1);
  for (std::size_t d = 0; d < n_docs; ++d) {
    const SparseDoc& doc = corpus.doc(d);
    for (std::size_t j = 0; j < doc.ids.size(); ++j) {
      for (int c = 0; c < doc.counts[j]; ++c) tokens_[d].push_back(doc.ids[j]);
    }
    z_[d].resize(tokens_[d].size());
    for (std::size_t i = 0; i < tokens_[d].size(); ++i) {
      const int k = pick(rng_);
      z_[d][i] = k;
      ++n_dk_[d][static_cast<std::size_t>(k)];
      ++n_kv_[static_cast<std::size_t>(k)][static_cast<std::size_t>(tokens_[d][i])];
      ++n_k_[static_cast<std::size_t>(k)];
    }
  }
}

void GibbsSampler::sweep() {
  const std::size_t k_topics = static_cast<std::size_t>(cfg_.num_topics);
  const double v_beta = corpus_.vocab_size() * cfg_.beta_word;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t d = 0; d < tokens_.size(); ++d) {
    std::vector<int>& ndk = n_dk_[d];
    for (std::size_t i = 0; i < tokens_[d].size(); ++i) {
      const std::size_t v = static_cast<std::size_t>(tokens_[d][i]);
      const std::size_t old = static_cast<std::size_t>(z_[d][i]);
      --ndk[old];
      --n_kv_[old][v];
      --n_k_[old];

      double total = 0.0;
      for (std::size_t k = 0; k < k_topics; ++k) {
        total += (ndk[k] + cfg_.alpha) * (n_kv_[k][v] + cfg_.beta_word) /
                 (static_cast<double>(n_k_[k]) + v_beta);
        prob_[k] = total;
      }
      const double u = unif(rng_) * total;
      std::size_t chosen = k_topics - 1;
      for (std::size_t k = 0; k < k_topics; ++k) {
        if (u < prob_[k]) {
          chosen = k;
          break;
        }
      }
      z_[d][i] = static_cast<int>(chosen);
      ++ndk[chosen];
      ++n_kv_[chosen][v];
      ++n_k_[chosen];
    }
  }
  ++sweeps_done_;
}

Matrix GibbsSampler::current_phi() const {
  const int k_topics = cfg_.num_topics;
  const int vocab = corpus_.vocab_size();
  Matrix phi(k_topics, vocab);
  for (int k = 0; k < k_topics; ++k) {
    const double denom = static_cast<double>(n_k_[static_cast<std::size_t>(k)]) + vocab * cfg_.beta_word;
    for (int v = 0; v < vocab; ++v) {
      phi(k, v) = (n_kv_[static_cast<std::size_t>(k)][static_cast<std::size_t>(v)] + cfg_.beta_word) / denom;
    }
  }
  return phi;
}

void GibbsSampler::check_invariants() const {
  const std::size_t k_topics = static_cast<std::size_t>(cfg_.num_topics);
  std::vector<std::vector<int>> kv(k_topics, std::vector<int>(static_cast<std::size_t>(corpus_.vocab_size()), 0));
  std::vector<long long> k_tot(k_topics, 0);
  for (std::size_t d = 0; d < tokens_.size(); ++d) {
    std::vector<int> dk(k_topics, 0);
    for (std::size_t i = 0; i < tokens_[d].size(); ++i) {
      const std::size_t k = static_cast<std::size_t>(z_[d][i]);
      if (k >= k_topics) throw std::logic_error("gibbs: assignment out of range");
      ++dk[k];
      ++kv[k][static_cast<std::size_t>(tokens_[d][i])];
      ++k_tot[k];
    }
    if (dk != n_dk_[d]) throw std::logic_error("gibbs: doc-topic counts diverged in doc " + std::to_string(d));
    long long row = 0;
    for (int c : n_dk_[d]) row += c;
    if (row != corpus_.doc(d).total()) throw std::logic_error("gibbs: doc-topic row sum != N_d");
  }
  if (kv != n_kv_) throw std::logic_error("gibbs: topic-word counts diverged");
  if (k_tot != n_k_) throw std::logic_error("gibbs: topic totals diverged");
  for (std::size_t k = 0; k < k_topics; ++k) {
    long long row = 0;
    for (int c : n_kv_[k]) {
      if (c < 0) throw std::logic_error("gibbs: negative count");
      row += c;
    }
    if (row != n_k_[k]) throw std::logic_error("gibbs: topic-word row sum != n_k");
  }
}

TopicModelParams gibbs_train(const Corpus& corpus, const GibbsConfig& cfg, int num_labels) {
  if (cfg.sweeps <= cfg.burn_in) throw InvalidParameter("gibbs: sweeps must exceed burn_in");
  if (cfg.burn_in < 0 || cfg.thin < 1) throw InvalidParameter("gibbs: bad burn_in/thin");
  GibbsSampler sampler(corpus, cfg);
  Matrix acc = Matrix::Zero(cfg.num_topics, corpus.vocab_size());
  int collected = 0;
  for (int s = 1; s <= cfg.sweeps; ++s) {
    sampler.sweep();
    if (s > cfg.burn_in && (s - cfg.burn_in) % cfg.thin == 0) {
      acc += sampler.current_phi();
      ++collected;
    }
  }
  if (collected == 0) {
    acc = sampler.current_phi();
    collected = 1;
  }
  TopicModelParams params;
  params.phi = acc / static_cast<double>(collected);
  for (Eigen::Index k = 0; k < params.phi.rows(); ++k) params.phi.row(k) /= params.phi.row(k).sum();
  params.eta = Matrix::Zero(num_labels, cfg.num_topics);
  params.alpha = cfg.alpha;
  return params;
}

Matrix fit_logistic_head(const Matrix& pi, const LabelMatrix& labels, const LogisticHeadConfig& cfg) {
  const Eigen::Index n_docs = pi.rows();
  const Eigen::Index k_topics = pi.cols();
  const Eigen::Index n_labels = labels.cols();
  if (labels.rows() != n_docs) throw InvalidParameter("fit_logistic_head: label rows != pi rows");
  for (Eigen::Index d = 0; d < n_docs; ++d) {
    if ((pi.row(d).array() < 0.0).any() || std::abs(pi.row(d).sum() - 1.0) > 1e-9) {
      throw InvalidParameter("fit_logistic_head: pi rows must lie on the simplex");
    }
  }

  Matrix eta = Matrix::Zero(n_labels, k_topics);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> init(0.0, 0.01);
  std::vector<bool> active(static_cast<std::size_t>(n_labels), true);
  for (Eigen::Index l = 0; l < n_labels; ++l) {
    const long positives = labels.col(l).sum();
    if (positives == 0 || positives == n_docs) {
      active[static_cast<std::size_t>(l)] = false;
      std::cerr << "warning: label column " << l
                << " has a single class; its regression weights are set to zero\n";
      continue;
    }
    for (Eigen::Index k = 0; k < k_topics; ++k) eta(l, k) = init(rng);
  }

  Adam adam(static_cast<std::size_t>(eta.size()),
            AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  Matrix grad(n_labels, k_topics);
  for (int step = 0; step < cfg.steps; ++step) {
    grad = cfg.tau_eta * eta;
    for (Eigen::Index l = 0; l < n_labels; ++l) {
      if (!active[static_cast<std::size_t>(l)]) {
        grad.row(l).setZero();
        continue;
      }
      for (Eigen::Index d = 0; d < n_docs; ++d) {
        const double z = pi.row(d).dot(eta.row(l));
        const double resid = labels(d, l) - sigmoid(z);
        grad.row(l) -= resid * pi.row(d);
      }
    }
    adam.step({eta.data(), static_cast<std::size_t>(eta.size())},
              {grad.data(), static_cast<std::size_t>(grad.size())});
  }
  return eta;
}

}  // namespace pclda
