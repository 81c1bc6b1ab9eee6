#include "pclda/map_embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pclda/errors.hpp"
#include "pclda/numeric.hpp"

namespace pclda {

void EmbedConfig::validate(double alpha) const {
  if (iterations < 1) throw InvalidParameter("embed: iterations must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw InvalidParameter("embed: step_size must be > 0");
  }
  if (!(joint_label_weight >= 0.0) || !std::isfinite(joint_label_weight)) {
    throw InvalidParameter("embed: joint_label_weight must be >= 0");
  }
  if (mode == MapMode::convex && alpha < 1.0) {
    throw InvalidParameter("embed: convex mode requires alpha >= 1 (use reparameterized)");
  }
}

namespace {

double prior_exponent(MapMode mode, double alpha) {
  return mode == MapMode::convex ? alpha - 1.0 : alpha;
}

void check_shapes(const SparseDoc& x, const TopicModelParams& params, LabelRowRef y,
                  double label_weight) {
  for (int v : x.ids) {
    if (v < 0 || v >= params.vocab_size()) throw InvalidParameter("embed: token id out of range");
  }
  if (label_weight > 0.0) {
    if (!y) throw InvalidParameter("embed: label weight > 0 requires a label row");
    if (static_cast<int>(y->size()) != params.num_labels()) {
      throw InvalidParameter("embed: label row length != L");
    }
  }
}

std::span<const int> label_span(LabelRowRef y) {
  return y ? *y : std::span<const int>{};
}

}  // namespace

namespace detail {

void objective_grad(const SparseDoc& x, const Matrix& phi, const Matrix& eta,
                    const Vector& intercept, double prior_exponent, std::span<const int> y,
                    double label_weight, std::span<const double> pi, std::span<double> grad,
                    std::span<double> mix) {
  const std::size_t k_topics = pi.size();
  const std::size_t nnz = x.ids.size();
  for (std::size_t k = 0; k < k_topics; ++k) {
    grad[k] = prior_exponent == 0.0 ? 0.0 : prior_exponent / pi[k];
  }
  for (std::size_t j = 0; j < nnz; ++j) {
    const int v = x.ids[j];
    double s = 0.0;
    for (std::size_t k = 0; k < k_topics; ++k) s += pi[k] * phi(static_cast<Eigen::Index>(k), v);
    mix[j] = s;
    const double scale = x.counts[j] / s;
    for (std::size_t k = 0; k < k_topics; ++k) grad[k] += scale * phi(static_cast<Eigen::Index>(k), v);
  }
  if (label_weight > 0.0) {
    for (std::size_t l = 0; l < y.size(); ++l) {
      const double z = label_logit(static_cast<int>(l), pi, eta, intercept);
      const double resid = label_weight * (y[l] - sigmoid(z));
      for (std::size_t k = 0; k < k_topics; ++k) {
        grad[k] += resid * eta(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k));
      }
    }
  }
}

void embed_forward(const SparseDoc& x, const Matrix& phi, const Matrix& eta,
                   const Vector& intercept, double alpha, std::span<const int> y,
                   const EmbedConfig& cfg, std::span<double> iterates) {
  const std::size_t k_topics = static_cast<std::size_t>(phi.rows());
  const std::size_t steps = static_cast<std::size_t>(cfg.iterations);
  const double exponent = prior_exponent(cfg.mode, alpha);
  const double nu = cfg.step_size;
  std::vector<double> grad(k_topics), mix(x.ids.size()), logits(k_topics, 0.0);

  std::fill_n(iterates.begin(), k_topics, 1.0 / static_cast<double>(k_topics));
  for (std::size_t t = 1; t <= steps; ++t) {
    std::span<const double> prev = iterates.subspan((t - 1) * k_topics, k_topics);
    std::span<double> next = iterates.subspan(t * k_topics, k_topics);
    objective_grad(x, phi, eta, intercept, exponent, y, cfg.joint_label_weight, prev, grad, mix);

    if (cfg.mode == MapMode::convex) {
      // pi_k * exp(nu * (g_k - max g)); the shift cancels in the normalization.
      const double g_max = *std::max_element(grad.begin(), grad.end());
      double total = 0.0;
      for (std::size_t k = 0; k < k_topics; ++k) {
        next[k] = prev[k] * std::exp(nu * (grad[k] - g_max));
        total += next[k];
      }
      if (!std::isfinite(g_max) || !(total > 0.0) || !std::isfinite(total)) {
        throw DomainError("map_embed: non-finite update at iteration " + std::to_string(t));
      }
      for (std::size_t k = 0; k < k_topics; ++k) next[k] /= total;
    } else {
      // r += nu * pi o (g - <pi, g>), pi = softmax(r)
      double inner = 0.0;
      for (std::size_t k = 0; k < k_topics; ++k) inner += prev[k] * grad[k];
      for (std::size_t k = 0; k < k_topics; ++k) logits[k] += nu * prev[k] * (grad[k] - inner);
      const double r_max = *std::max_element(logits.begin(), logits.end());
      double total = 0.0;
      for (std::size_t k = 0; k < k_topics; ++k) {
        next[k] = std::exp(logits[k] - r_max);
        total += next[k];
      }
      if (!std::isfinite(r_max) || !std::isfinite(total)) {
        throw DomainError("map_embed: non-finite update at iteration " + std::to_string(t));
      }
      for (std::size_t k = 0; k < k_topics; ++k) next[k] /= total;
    }
  }
}

}  // namespace detail

Vector logpost_grad(const DocTopicVector& pi, const SparseDoc& x, const TopicModelParams& params,
                    LabelRowRef y, double label_weight) {
  if (pi.size() != params.num_topics()) throw InvalidParameter("logpost_grad: K mismatch");
  check_shapes(x, params, y, label_weight);
  if (params.alpha != 1.0 && (pi.values().array() <= 0.0).any()) {
    throw DomainError("logpost_grad: pi must be strictly interior when alpha != 1");
  }
  Vector grad(pi.size());
  std::vector<double> mix(x.ids.size());
  detail::objective_grad(x, params.phi, params.eta, params.intercept, params.alpha - 1.0,
                         label_span(y), label_weight, pi.span(),
                         {grad.data(), static_cast<std::size_t>(grad.size())}, mix);
  return grad;
}

double ascended_objective(const DocTopicVector& pi, const SparseDoc& x,
                          const TopicModelParams& params, const EmbedConfig& cfg, LabelRowRef y) {
  check_shapes(x, params, y, cfg.joint_label_weight);
  const double exponent = prior_exponent(cfg.mode, params.alpha);
  double value = detail::data_loglik(x, pi.span(), params.phi);
  if (exponent != 0.0) {
    for (int k = 0; k < pi.size(); ++k) {
      if (pi[k] <= 0.0) return exponent > 0.0 ? -std::numeric_limits<double>::infinity()
                                              : std::numeric_limits<double>::infinity();
      value += exponent * std::log(pi[k]);
    }
  }
  if (cfg.joint_label_weight > 0.0) {
    value += cfg.joint_label_weight *
             detail::label_loglik(*y, pi.span(), params.eta, params.intercept);
  }
  return value;
}

std::vector<Vector> map_embed_iterates(const SparseDoc& x, const TopicModelParams& params,
                                       const EmbedConfig& cfg, LabelRowRef y) {
  cfg.validate(params.alpha);
  check_shapes(x, params, y, cfg.joint_label_weight);
  const int k_topics = params.num_topics();
  std::vector<double> buffer(static_cast<std::size_t>(cfg.iterations + 1) * k_topics);
  detail::embed_forward(x, params.phi, params.eta, params.intercept, params.alpha, label_span(y),
                        cfg, buffer);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(cfg.iterations) + 1);
  for (int t = 0; t <= cfg.iterations; ++t) {
    out.emplace_back(Eigen::Map<const Vector>(buffer.data() + static_cast<std::size_t>(t) * k_topics, k_topics));
  }
  return out;
}

namespace {

DocTopicVector embed_last(const SparseDoc& x, const TopicModelParams& params,
                          const EmbedConfig& cfg, LabelRowRef y) {
  cfg.validate(params.alpha);
  check_shapes(x, params, y, cfg.joint_label_weight);
  const int k_topics = params.num_topics();
  std::vector<double> buffer(static_cast<std::size_t>(cfg.iterations + 1) * k_topics);
  detail::embed_forward(x, params.phi, params.eta, params.intercept, params.alpha, label_span(y),
                        cfg, buffer);
  return DocTopicVector(Eigen::Map<const Vector>(
      buffer.data() + static_cast<std::size_t>(cfg.iterations) * k_topics, k_topics));
}

}  // namespace

DocTopicVector map_embed(const SparseDoc& x, const TopicModelParams& params, const EmbedConfig& cfg) {
  if (cfg.joint_label_weight != 0.0) {
    throw InvalidParameter("map_embed: joint_label_weight > 0 needs map_embed_joint");
  }
  return embed_last(x, params, cfg, std::nullopt);
}

DocTopicVector map_embed_joint(const SparseDoc& x, std::span<const int> y,
                               const TopicModelParams& params, const EmbedConfig& cfg) {
  if (static_cast<int>(y.size()) != params.num_labels()) {
    throw InvalidParameter("map_embed_joint: label row length != L");
  }
  return embed_last(x, params, cfg, y);
}

DocTopicVector brute_force_map(const SparseDoc& x, LabelRowRef y, const TopicModelParams& params,
                               const EmbedConfig& cfg, double grid_step) {
  const int k_topics = params.num_topics();
  if (k_topics != 2 && k_topics != 3) throw Unsupported("brute_force_map: only K in {2, 3}");
  if (!(grid_step > 0.0) || grid_step >= 0.5) throw InvalidParameter("brute_force_map: bad grid step");
  const long n = std::lround(1.0 / grid_step);
  if (std::abs(static_cast<double>(n) * grid_step - 1.0) > 1e-9) {
    throw InvalidParameter("brute_force_map: grid step must divide 1");
  }
  check_shapes(x, params, y, cfg.joint_label_weight);

  double best = -std::numeric_limits<double>::infinity();
  Vector best_pi;
  Vector pi(k_topics);
  auto consider = [&] {
    const double value = ascended_objective(DocTopicVector(pi), x, params, cfg, y);
    if (best_pi.size() == 0 || value > best) {
      best = value;
      best_pi = pi;
    }
  };
  if (k_topics == 2) {
    for (long i = 1; i < n; ++i) {
      pi[0] = static_cast<double>(i) / static_cast<double>(n);
      pi[1] = 1.0 - pi[0];
      consider();
    }
  } else {
    for (long i = 1; i < n - 1; ++i) {
      for (long j = 1; i + j < n; ++j) {
        pi[0] = static_cast<double>(i) / static_cast<double>(n);
        pi[1] = static_cast<double>(j) / static_cast<double>(n);
        pi[2] = 1.0 - pi[0] - pi[1];
        consider();
      }
    }
  }
  return DocTopicVector(best_pi);
}

}  // namespace pclda
