#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "pclda/core_model.hpp"
#include "pclda/map_embedding.hpp"

namespace pclda {

// Trainable parameterization: phi rows are the row-softmax of phi_logits.
// alpha rides along but is never trained.
struct UnconstrainedParams {
  Matrix phi_logits;
  Matrix eta;
  Vector intercept;
  double alpha = 1.1;

  // Row-centred log(phi); materialize() of the result reproduces phi.
  static UnconstrainedParams from_params(const TopicModelParams& params);
  TopicModelParams materialize() const;

  int num_topics() const { return static_cast<int>(phi_logits.rows()); }
  int vocab_size() const { return static_cast<int>(phi_logits.cols()); }
  int num_labels() const { return static_cast<int>(eta.rows()); }

  // Flat views used by optimizers and finite differences:
  // [phi_logits (row-major), eta (row-major), intercept].
  std::size_t size() const;
  void copy_to(std::span<double> flat) const;
  void copy_from(std::span<const double> flat);
};

struct Regularization {
  double tau_phi = 1e-5;
  double tau_eta = 1e-4;
};

// Sign convention: the three terms are log-likelihood sums, total is the
// minimized loss
//   total = -(generative * (prior + data) + label_weight * label) + reg.
struct LossBreakdown {
  double prior_term = 0.0;
  double data_term = 0.0;
  double label_term = 0.0;
  double reg_term = 0.0;
  double total = 0.0;
};

struct ParamGradient {
  Matrix phi_logits;
  Matrix eta;
  Vector intercept;

  std::size_t size() const;
  void copy_to(std::span<double> flat) const;
};

// Weights of the generative (prior + data) and label terms. PC-sLDA is
// {1, lambda}; BP-sLDA is {0, 1}; unsupervised is {1, 0}.
struct ObjectiveWeights {
  double generative = 1.0;
  double label = 0.0;
};

// Hook into the per-document sweeps. Calls arrive from worker threads when
// EngineOptions::threads > 1.
class SweepObserver {
 public:
  virtual ~SweepObserver() = default;
  // Forward pass finished; `stored_doubles` is the iterate storage it used.
  virtual void on_forward(std::size_t /*doc*/, std::size_t /*stored_doubles*/) {}
  // Reverse sweep consumed iterate t (called for t = T .. 0).
  virtual void on_reverse(std::size_t /*doc*/, int /*t*/) {}
};

struct EngineOptions {
  int threads = 1;
  // Documents to include; empty means the whole corpus. Per-document terms
  // are rescaled by D / |subset| so minibatch losses estimate the full sum.
  std::span<const std::size_t> subset = {};
  SweepObserver* observer = nullptr;
};

LossBreakdown pc_loss(const Corpus& corpus, const UnconstrainedParams& params, double lambda,
                      const EmbedConfig& cfg, const Regularization& reg,
                      const EngineOptions& opts = {});

// Loss and exact gradient, differentiating through all T embedding updates.
std::pair<LossBreakdown, ParamGradient> pc_loss_grad(const Corpus& corpus,
                                                     const UnconstrainedParams& params,
                                                     double lambda, const EmbedConfig& cfg,
                                                     const Regularization& reg,
                                                     const EngineOptions& opts = {});

LossBreakdown objective_loss(const Corpus& corpus, const UnconstrainedParams& params,
                             ObjectiveWeights weights, const EmbedConfig& cfg,
                             const Regularization& reg, const EngineOptions& opts = {});

std::pair<LossBreakdown, ParamGradient> objective_loss_grad(const Corpus& corpus,
                                                            const UnconstrainedParams& params,
                                                            ObjectiveWeights weights,
                                                            const EmbedConfig& cfg,
                                                            const Regularization& reg,
                                                            const EngineOptions& opts = {});

// Central differences of pc_loss(...).total; O(#params) loss evaluations.
ParamGradient finite_diff_gradient(const Corpus& corpus, const UnconstrainedParams& params,
                                   double lambda, const EmbedConfig& cfg,
                                   const Regularization& reg, double h);

}  // namespace pclda
