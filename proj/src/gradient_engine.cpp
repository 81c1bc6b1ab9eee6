#include "pclda/gradient_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>
#include <vector>

#include "pclda/errors.hpp"
#include "pclda/numeric.hpp"

namespace pclda {

// ---------------------------------------------------------------------------
// UnconstrainedParams / ParamGradient

UnconstrainedParams UnconstrainedParams::from_params(const TopicModelParams& params) {
  params.validate();
  UnconstrainedParams out;
  out.phi_logits = params.phi.array().log().matrix();
  for (Eigen::Index k = 0; k < out.phi_logits.rows(); ++k) {
    const double mean = out.phi_logits.row(k).mean();
    out.phi_logits.row(k).array() -= mean;
  }
  out.eta = params.eta;
  out.intercept = params.intercept;
  out.alpha = params.alpha;
  return out;
}

TopicModelParams UnconstrainedParams::materialize() const {
  TopicModelParams p;
  p.phi.resize(phi_logits.rows(), phi_logits.cols());
  for (Eigen::Index k = 0; k < phi_logits.rows(); ++k) {
    const double m = phi_logits.row(k).maxCoeff();
    p.phi.row(k) = (phi_logits.row(k).array() - m).exp().matrix();
    p.phi.row(k) /= p.phi.row(k).sum();
  }
  p.eta = eta;
  p.intercept = intercept;
  p.alpha = alpha;
  return p;
}

std::size_t UnconstrainedParams::size() const {
  return static_cast<std::size_t>(phi_logits.size() + eta.size() + intercept.size());
}

void UnconstrainedParams::copy_to(std::span<double> flat) const {
  auto it = std::copy_n(phi_logits.data(), phi_logits.size(), flat.begin());
  it = std::copy_n(eta.data(), eta.size(), it);
  std::copy_n(intercept.data(), intercept.size(), it);
}

void UnconstrainedParams::copy_from(std::span<const double> flat) {
  auto it = flat.begin();
  std::copy_n(it, phi_logits.size(), phi_logits.data());
  it += phi_logits.size();
  std::copy_n(it, eta.size(), eta.data());
  it += eta.size();
  std::copy_n(it, intercept.size(), intercept.data());
}

std::size_t ParamGradient::size() const {
  return static_cast<std::size_t>(phi_logits.size() + eta.size() + intercept.size());
}

void ParamGradient::copy_to(std::span<double> flat) const {
  auto it = std::copy_n(phi_logits.data(), phi_logits.size(), flat.begin());
  it = std::copy_n(eta.data(), eta.size(), it);
  std::copy_n(intercept.data(), intercept.size(), it);
}

namespace {

struct DocResult {
  double prior = 0.0;
  double data = 0.0;
  double label = 0.0;
  std::vector<double> phi_bar;  // K x nnz, adjoint of phi at the doc's words
  std::vector<double> eta_bar;  // L x K
  std::vector<double> intercept_bar;  // L
};

struct Context {
  const Corpus& corpus;
  const Matrix& phi;
  const Matrix& eta;
  const Vector& intercept;
  double alpha;
  ObjectiveWeights weights;
  const EmbedConfig& cfg;
  bool use_labels;
  SweepObserver* observer;
};

// Adjoint of g_k = c / pi_k + sum_j x_j phi_{k,v_j} / s_j, given g_bar.
// Accumulates into pi_bar (adjoint of the iterate g was evaluated at) and
// phi_bar (K x nnz).
void backprop_objective_grad(const SparseDoc& x, const Matrix& phi, double c,
                             std::span<const double> pi, std::span<const double> mix,
                             std::span<const double> g_bar, std::span<double> pi_bar,
                             std::span<double> phi_bar) {
  const std::size_t k_topics = pi.size();
  const std::size_t nnz = x.ids.size();
  if (c != 0.0) {
    for (std::size_t k = 0; k < k_topics; ++k) pi_bar[k] -= c * g_bar[k] / (pi[k] * pi[k]);
  }
  for (std::size_t j = 0; j < nnz; ++j) {
    const int v = x.ids[j];
    const double s = mix[j];
    const double scale = x.counts[j] / s;
    double dot = 0.0;
    for (std::size_t k = 0; k < k_topics; ++k) {
      const double p = phi(static_cast<Eigen::Index>(k), v);
      dot += g_bar[k] * p;
      phi_bar[k * nnz + j] += g_bar[k] * scale;
    }
    // adjoint of s_j
    const double s_bar = -scale / s * dot;
    for (std::size_t k = 0; k < k_topics; ++k) {
      pi_bar[k] += s_bar * phi(static_cast<Eigen::Index>(k), v);
      phi_bar[k * nnz + j] += s_bar * pi[k];
    }
  }
}

// pi = softmax(r): r_bar = pi o (pi_bar - <pi, pi_bar>)
void softmax_backprop(std::span<const double> pi, std::span<const double> pi_bar,
                      std::span<double> r_bar) {
  double inner = 0.0;
  for (std::size_t k = 0; k < pi.size(); ++k) inner += pi[k] * pi_bar[k];
  for (std::size_t k = 0; k < pi.size(); ++k) r_bar[k] = pi[k] * (pi_bar[k] - inner);
}

DocResult process_doc(const Context& ctx, std::size_t d, bool need_grad) {
  const SparseDoc& x = ctx.corpus.doc(d);
  const std::size_t k_topics = static_cast<std::size_t>(ctx.phi.rows());
  const std::size_t nnz = x.ids.size();
  const std::size_t n_labels = ctx.use_labels ? static_cast<std::size_t>(ctx.eta.rows()) : 0;
  const int steps = ctx.cfg.iterations;
  std::span<const int> y = ctx.use_labels ? ctx.corpus.label_row(d) : std::span<const int>{};

  std::vector<double> iterates(static_cast<std::size_t>(steps + 1) * k_topics);
  detail::embed_forward(x, ctx.phi, ctx.eta, ctx.intercept, ctx.alpha, {}, ctx.cfg, iterates);
  if (ctx.observer) ctx.observer->on_forward(d, iterates.size());

  std::span<const double> last(iterates.data() + static_cast<std::size_t>(steps) * k_topics, k_topics);
  DocResult out;
  out.prior = detail::dirichlet_logpdf(last, ctx.alpha);
  out.data = detail::data_loglik(x, last, ctx.phi);
  if (ctx.use_labels) out.label = detail::label_loglik(y, last, ctx.eta, ctx.intercept);
  if (!need_grad) return out;

  const double gen = ctx.weights.generative;
  const double lam = ctx.weights.label;
  out.phi_bar.assign(k_topics * nnz, 0.0);
  out.eta_bar.assign(n_labels * k_topics, 0.0);
  out.intercept_bar.assign(n_labels, 0.0);

  std::vector<double> pi_bar(k_topics, 0.0), grad(k_topics), mix(nnz), g_bar(k_topics),
      prev_bar(k_topics), r_bar(k_topics), a_bar(k_topics);

  // Adjoint of the per-document loss at pi^T:
  //   -gen * (dirichlet + data) - lam * label.
  detail::objective_grad(x, ctx.phi, ctx.eta, ctx.intercept, ctx.alpha - 1.0, {}, 0.0, last, grad,
                         mix);
  for (std::size_t k = 0; k < k_topics; ++k) pi_bar[k] = -gen * grad[k];
  for (std::size_t j = 0; j < nnz; ++j) {
    const double scale = -gen * x.counts[j] / mix[j];
    for (std::size_t k = 0; k < k_topics; ++k) out.phi_bar[k * nnz + j] += scale * last[k];
  }
  if (ctx.use_labels && lam != 0.0) {
    for (std::size_t l = 0; l < n_labels; ++l) {
      const double z = detail::label_logit(static_cast<int>(l), last, ctx.eta, ctx.intercept);
      const double resid = -lam * (y[l] - sigmoid(z));
      for (std::size_t k = 0; k < k_topics; ++k) {
        pi_bar[k] += resid * ctx.eta(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k));
        out.eta_bar[l * k_topics + k] += resid * last[k];
      }
      out.intercept_bar[l] += resid;
    }
  }
  if (ctx.observer) ctx.observer->on_reverse(d, steps);

  const double nu = ctx.cfg.step_size;
  if (ctx.cfg.mode == MapMode::convex) {
    const double c = ctx.alpha - 1.0;
    for (int t = steps; t >= 1; --t) {
      std::span<const double> cur(iterates.data() + static_cast<std::size_t>(t) * k_topics, k_topics);
      std::span<const double> prev(iterates.data() + static_cast<std::size_t>(t - 1) * k_topics, k_topics);
      // cur = softmax(a), a_k = log prev_k + nu * g_k(prev)
      softmax_backprop(cur, pi_bar, a_bar);
      detail::objective_grad(x, ctx.phi, ctx.eta, ctx.intercept, c, {}, 0.0, prev, grad, mix);
      for (std::size_t k = 0; k < k_topics; ++k) {
        prev_bar[k] = a_bar[k] / prev[k];
        g_bar[k] = nu * a_bar[k];
      }
      backprop_objective_grad(x, ctx.phi, c, prev, mix, g_bar, prev_bar, out.phi_bar);
      std::swap(pi_bar, prev_bar);
      if (ctx.observer) ctx.observer->on_reverse(d, t - 1);
    }
  } else {
    const double c = ctx.alpha;
    // Adjoint of r^T; r^t = r^{t-1} + nu * h(pi^{t-1}) passes it through.
    std::vector<double> r_acc(k_topics);
    softmax_backprop(last, pi_bar, r_acc);
    for (int t = steps; t >= 1; --t) {
      std::span<const double> prev(iterates.data() + static_cast<std::size_t>(t - 1) * k_topics, k_topics);
      detail::objective_grad(x, ctx.phi, ctx.eta, ctx.intercept, c, {}, 0.0, prev, grad, mix);
      // h_k = pi_k (g_k - S), S = <pi, g>
      double s_inner = 0.0, h_inner = 0.0;
      for (std::size_t k = 0; k < k_topics; ++k) {
        s_inner += prev[k] * grad[k];
        h_inner += nu * r_acc[k] * prev[k];
      }
      std::fill(prev_bar.begin(), prev_bar.end(), 0.0);
      for (std::size_t k = 0; k < k_topics; ++k) {
        const double h_bar = nu * r_acc[k];
        g_bar[k] = prev[k] * (h_bar - h_inner);
        prev_bar[k] += h_bar * (grad[k] - s_inner) - h_inner * grad[k];
      }
      backprop_objective_grad(x, ctx.phi, c, prev, mix, g_bar, prev_bar, out.phi_bar);
      if (t - 1 >= 1) {
        softmax_backprop(prev, prev_bar, r_bar);
        for (std::size_t k = 0; k < k_topics; ++k) r_acc[k] += r_bar[k];
      }
      if (ctx.observer) ctx.observer->on_reverse(d, t - 1);
    }
  }
  return out;
}

struct Totals {
  LossBreakdown loss;
  ParamGradient grad;
};

Totals evaluate(const Corpus& corpus, const UnconstrainedParams& params, ObjectiveWeights weights,
                const EmbedConfig& cfg, const Regularization& reg, const EngineOptions& opts,
                bool need_grad) {
  if (corpus.num_docs() == 0) throw InvalidParameter("objective: empty corpus");
  if (!(weights.label >= 0.0) || !std::isfinite(weights.label)) {
    throw InvalidParameter("objective: lambda must be >= 0");
  }
  if (!(weights.generative >= 0.0)) throw InvalidParameter("objective: generative weight must be >= 0");
  if (weights.label > 0.0 && !corpus.has_labels()) {
    throw InvalidParameter("objective: lambda > 0 requires labels");
  }
  if (cfg.joint_label_weight != 0.0) {
    throw InvalidParameter("objective: the embedding must be predict-mode (joint_label_weight = 0)");
  }
  cfg.validate(params.alpha);
  if (params.vocab_size() != corpus.vocab_size()) {
    throw InvalidParameter("objective: params V (" + std::to_string(params.vocab_size()) +
                           ") != corpus V (" + std::to_string(corpus.vocab_size()) + ")");
  }
  const bool use_labels = corpus.has_labels();
  if (use_labels && corpus.num_labels() != params.num_labels()) {
    throw InvalidParameter("objective: params L != corpus L");
  }
  if (params.eta.cols() != params.phi_logits.rows()) throw InvalidParameter("objective: eta must be L x K");

  const TopicModelParams materialized = params.materialize();
  const std::size_t k_topics = static_cast<std::size_t>(params.num_topics());
  const std::size_t vocab = static_cast<std::size_t>(params.vocab_size());
  const std::size_t n_labels = static_cast<std::size_t>(params.num_labels());

  std::vector<std::size_t> all_docs;
  std::span<const std::size_t> docs = opts.subset;
  if (docs.empty()) {
    all_docs.resize(corpus.num_docs());
    std::iota(all_docs.begin(), all_docs.end(), std::size_t{0});
    docs = all_docs;
  }
  const double scale = static_cast<double>(corpus.num_docs()) / static_cast<double>(docs.size());

  Context ctx{corpus, materialized.phi, materialized.eta, materialized.intercept, params.alpha,
              weights, cfg, use_labels, opts.observer};

  CompensatedSum prior, data, label;
  CompensatedBuffer phi_acc(need_grad ? k_topics * vocab : 0);
  CompensatedBuffer eta_acc(need_grad ? n_labels * k_topics : 0);
  CompensatedBuffer b_acc(need_grad ? n_labels : 0);

  const std::size_t threads = static_cast<std::size_t>(std::max(1, opts.threads));
  const std::size_t block = 256;
  std::vector<DocResult> results;
  for (std::size_t begin = 0; begin < docs.size(); begin += block) {
    const std::size_t end = std::min(docs.size(), begin + block);
    results.assign(end - begin, DocResult{});
    auto work = [&](std::size_t worker) {
      for (std::size_t i = begin + worker; i < end; i += threads) {
        results[i - begin] = process_doc(ctx, docs[i], need_grad);
      }
    };
    if (threads == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    }
    // Fixed document-order reduction.
    for (std::size_t i = begin; i < end; ++i) {
      const DocResult& r = results[i - begin];
      prior.add(r.prior);
      data.add(r.data);
      label.add(r.label);
      if (!need_grad) continue;
      const SparseDoc& x = corpus.doc(docs[i]);
      const std::size_t nnz = x.ids.size();
      for (std::size_t k = 0; k < k_topics; ++k) {
        for (std::size_t j = 0; j < nnz; ++j) {
          phi_acc.add_at(k * vocab + static_cast<std::size_t>(x.ids[j]), r.phi_bar[k * nnz + j]);
        }
      }
      eta_acc.add(r.eta_bar);
      b_acc.add(r.intercept_bar);
    }
  }

  Totals out;
  LossBreakdown& loss = out.loss;
  loss.prior_term = scale * prior.value();
  loss.data_term = scale * data.value();
  loss.label_term = scale * label.value();
  loss.reg_term = 0.5 * reg.tau_phi * params.phi_logits.squaredNorm() +
                  0.5 * reg.tau_eta * params.eta.squaredNorm();
  loss.total = -(weights.generative * (loss.prior_term + loss.data_term) +
                 weights.label * loss.label_term) +
               loss.reg_term;
  if (!need_grad) return out;

  const std::vector<double> phi_bar = phi_acc.values();
  const std::vector<double> eta_bar = eta_acc.values();
  const std::vector<double> b_bar = b_acc.values();
  ParamGradient& grad = out.grad;
  grad.phi_logits.resize(static_cast<Eigen::Index>(k_topics), static_cast<Eigen::Index>(vocab));
  for (std::size_t k = 0; k < k_topics; ++k) {
    // Row-softmax adjoint: theta_bar = phi o (phi_bar - <phi, phi_bar>).
    double inner = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      inner += materialized.phi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v)) *
               phi_bar[k * vocab + v];
    }
    for (std::size_t v = 0; v < vocab; ++v) {
      const double p = materialized.phi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v));
      grad.phi_logits(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v)) =
          scale * p * (phi_bar[k * vocab + v] - inner);
    }
  }
  grad.phi_logits += reg.tau_phi * params.phi_logits;
  grad.eta.resize(params.eta.rows(), params.eta.cols());
  for (std::size_t i = 0; i < eta_bar.size(); ++i) grad.eta.data()[i] = scale * eta_bar[i];
  grad.eta += reg.tau_eta * params.eta;
  grad.intercept = Vector::Zero(params.intercept.size());
  if (params.intercept.size() > 0) {
    for (std::size_t l = 0; l < n_labels; ++l) grad.intercept[static_cast<Eigen::Index>(l)] = scale * b_bar[l];
  }
  return out;
}

}  // namespace

LossBreakdown objective_loss(const Corpus& corpus, const UnconstrainedParams& params,
                             ObjectiveWeights weights, const EmbedConfig& cfg,
                             const Regularization& reg, const EngineOptions& opts) {
  return evaluate(corpus, params, weights, cfg, reg, opts, false).loss;
}

std::pair<LossBreakdown, ParamGradient> objective_loss_grad(const Corpus& corpus,
                                                            const UnconstrainedParams& params,
                                                            ObjectiveWeights weights,
                                                            const EmbedConfig& cfg,
                                                            const Regularization& reg,
                                                            const EngineOptions& opts) {
  Totals t = evaluate(corpus, params, weights, cfg, reg, opts, true);
  return {t.loss, std::move(t.grad)};
}

LossBreakdown pc_loss(const Corpus& corpus, const UnconstrainedParams& params, double lambda,
                      const EmbedConfig& cfg, const Regularization& reg, const EngineOptions& opts) {
  if (!(lambda >= 0.0)) throw InvalidParameter("pc_loss: lambda must be >= 0");
  return objective_loss(corpus, params, {1.0, lambda}, cfg, reg, opts);
}

std::pair<LossBreakdown, ParamGradient> pc_loss_grad(const Corpus& corpus,
                                                     const UnconstrainedParams& params,
                                                     double lambda, const EmbedConfig& cfg,
                                                     const Regularization& reg,
                                                     const EngineOptions& opts) {
  if (!(lambda >= 0.0)) throw InvalidParameter("pc_loss_grad: lambda must be >= 0");
  return objective_loss_grad(corpus, params, {1.0, lambda}, cfg, reg, opts);
}

ParamGradient finite_diff_gradient(const Corpus& corpus, const UnconstrainedParams& params,
                                   double lambda, const EmbedConfig& cfg,
                                   const Regularization& reg, double h) {
  if (!(h > 0.0)) throw InvalidParameter("finite_diff_gradient: h must be > 0");
  const std::size_t n = params.size();
  std::vector<double> flat(n), grad(n);
  params.copy_to(flat);
  UnconstrainedParams probe = params;
  for (std::size_t i = 0; i < n; ++i) {
    const double saved = flat[i];
    flat[i] = saved + h;
    probe.copy_from(flat);
    const double up = pc_loss(corpus, probe, lambda, cfg, reg).total;
    flat[i] = saved - h;
    probe.copy_from(flat);
    const double down = pc_loss(corpus, probe, lambda, cfg, reg).total;
    flat[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  ParamGradient out;
  out.phi_logits.resize(params.phi_logits.rows(), params.phi_logits.cols());
  out.eta.resize(params.eta.rows(), params.eta.cols());
  out.intercept.resize(params.intercept.size());
  auto it = grad.begin();
  std::copy_n(it, out.phi_logits.size(), out.phi_logits.data());
  it += out.phi_logits.size();
  std::copy_n(it, out.eta.size(), out.eta.data());
  it += out.eta.size();
  std::copy_n(it, out.intercept.size(), out.intercept.data());
  return out;
}

}  // namespace pclda
