#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pclda/core_model.hpp"

namespace pclda {

enum class MapMode {
  // Exponentiated gradient on pi directly; requires alpha >= 1.
  convex,
  // Gradient ascent on r with pi = softmax(r). The change of variables turns
  // the Dirichlet exponent (alpha - 1) into alpha, so any alpha > 0 works.
  reparameterized,
};

struct EmbedConfig {
  int iterations = 100;
  double step_size = 0.005;
  MapMode mode = MapMode::convex;
  // 0 embeds from words only (predict mode). A positive weight adds
  // weight * log p(y | pi, eta) to the ascended objective (train mode).
  double joint_label_weight = 0.0;

  // Throws InvalidParameter on T < 1, step_size <= 0, negative label weight,
  // or convex mode with alpha < 1.
  void validate(double alpha) const;
};

using LabelRowRef = std::optional<std::span<const int>>;

// Coordinate-wise gradient in pi of
//   (alpha - 1) sum_k log pi_k + sum_v x_v log(sum_j pi_j phi_jv)
//   + weight * sum_l log p(y_l | pi, eta).
// Throws DomainError when pi has a zero entry and alpha != 1.
Vector logpost_grad(const DocTopicVector& pi, const SparseDoc& x, const TopicModelParams& params,
                    LabelRowRef y, double label_weight);

// The objective `map_embed` climbs, evaluated at pi: the Dirichlet exponent
// is (alpha - 1) in convex mode and alpha in reparameterized mode. The label
// term enters only when cfg.joint_label_weight > 0.
double ascended_objective(const DocTopicVector& pi, const SparseDoc& x,
                          const TopicModelParams& params, const EmbedConfig& cfg, LabelRowRef y);

// Exactly cfg.iterations updates from the uniform vector. Predict mode only:
// cfg.joint_label_weight must be zero.
DocTopicVector map_embed(const SparseDoc& x, const TopicModelParams& params, const EmbedConfig& cfg);

// Train-mode embedding: the label row enters the ascended objective with
// weight cfg.joint_label_weight (0 reduces to map_embed).
DocTopicVector map_embed_joint(const SparseDoc& x, std::span<const int> y,
                               const TopicModelParams& params, const EmbedConfig& cfg);

// All iterates pi^0 .. pi^T of the embedding (T + 1 vectors).
std::vector<Vector> map_embed_iterates(const SparseDoc& x, const TopicModelParams& params,
                                       const EmbedConfig& cfg, LabelRowRef y = std::nullopt);

// Exhaustive maximization of ascended_objective over the interior grid
// {i * step} of the simplex, K in {2, 3}. Points are scanned in ascending
// lexicographic order of (pi_1, pi_2) and only a strict improvement replaces
// the incumbent, so ties resolve to the first point scanned.
// Throws Unsupported for other K.
DocTopicVector brute_force_map(const SparseDoc& x, LabelRowRef y, const TopicModelParams& params,
                               const EmbedConfig& cfg, double grid_step);

namespace detail {

// Raw-buffer forward pass. Writes pi^t into row t of `iterates`
// ((T + 1) x K, row-major); `y` may be empty when label_weight == 0.
void embed_forward(const SparseDoc& x, const Matrix& phi, const Matrix& eta,
                   const Vector& intercept, double alpha, std::span<const int> y,
                   const EmbedConfig& cfg, std::span<double> iterates);

// Gradient of the ascended objective in pi with Dirichlet exponent
// `prior_exponent`; `mix` receives s_j = sum_k pi_k phi_k,v_j per nonzero.
void objective_grad(const SparseDoc& x, const Matrix& phi, const Matrix& eta,
                    const Vector& intercept, double prior_exponent, std::span<const int> y,
                    double label_weight, std::span<const double> pi, std::span<double> grad,
                    std::span<double> mix);

}  // namespace detail

}  // namespace pclda
