#include "pclda/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include "pclda/datasets.hpp"
#include "pclda/errors.hpp"
#include "pclda/numeric.hpp"

namespace pclda {

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::pc: return "pc";
    case Objective::ml_replicated: return "ml";
    case Objective::bp: return "bp";
    case Objective::unsupervised: return "unsupervised";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  if (name == "pc") return Objective::pc;
  if (name == "ml" || name == "ml_replicated") return Objective::ml_replicated;
  if (name == "bp") return Objective::bp;
  if (name == "unsupervised") return Objective::unsupervised;
  throw InvalidParameter("unknown objective '" + name + "'");
}

void TrainConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) throw InvalidParameter("train: lambda must be >= 0");
  if (objective == Objective::ml_replicated && !(lambda > 0.0)) {
    throw InvalidParameter("train: ml_replicated needs lambda > 0");
  }
  if (epochs < 1) throw InvalidParameter("train: epochs must be >= 1");
  if (batch_size < 0) throw InvalidParameter("train: batch_size must be >= 0");
  if (patience < 0) throw InvalidParameter("train: patience must be >= 0");
  if (!(reg.tau_phi >= 0.0) || !(reg.tau_eta >= 0.0)) throw InvalidParameter("train: negative regularizer");
  if (embed.joint_label_weight != 0.0) {
    throw InvalidParameter("train: embed.joint_label_weight must be 0 (ml sets it from lambda)");
  }
}

ObjectiveWeights TrainConfig::weights() const {
  switch (objective) {
    case Objective::pc: return {1.0, lambda};
    case Objective::ml_replicated: return {1.0, lambda};
    case Objective::bp: return {0.0, 1.0};
    case Objective::unsupervised: return {1.0, 0.0};
  }
  return {};
}

namespace {

bool same_opt(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || *a == *b;
}

bool same_loss(const LossBreakdown& a, const LossBreakdown& b) {
  return a.prior_term == b.prior_term && a.data_term == b.data_term && a.label_term == b.label_term &&
         a.reg_term == b.reg_term && a.total == b.total;
}

}  // namespace

bool EpochRecord::same_values(const EpochRecord& other) const {
  return epoch == other.epoch && same_loss(train, other.train) &&
         same_opt(valid_label_nll, other.valid_label_nll) && same_opt(valid_data_nll, other.valid_data_nll);
}

bool TrainTrace::same_values(const TrainTrace& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (!epochs[i].same_values(other.epochs[i])) return false;
  }
  return same_loss(final_train, other.final_train) && best_epoch == other.best_epoch &&
         early_stopped == other.early_stopped;
}

SplitNll predict_nll(const Corpus& corpus, const UnconstrainedParams& params, const EmbedConfig& embed,
                     int threads) {
  EngineOptions opts;
  opts.threads = threads;
  const LossBreakdown loss = objective_loss(corpus, params, {1.0, 0.0}, embed, Regularization{0.0, 0.0}, opts);
  SplitNll out;
  out.data_nll = -loss.data_term / static_cast<double>(corpus.total_tokens());
  if (corpus.has_labels()) out.label_nll = -loss.label_term / static_cast<double>(corpus.num_docs());
  return out;
}

namespace {

using GradFn = std::function<std::pair<LossBreakdown, ParamGradient>(const UnconstrainedParams&,
                                                                     std::span<const std::size_t>)>;

void check_finite(const LossBreakdown& loss, int epoch) {
  const std::pair<const char*, double> terms[] = {{"prior", loss.prior_term},
                                                  {"data", loss.data_term},
                                                  {"label", loss.label_term},
                                                  {"regularizer", loss.reg_term},
                                                  {"total", loss.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + name +
                                " term is " + std::to_string(value),
                            epoch, name);
    }
  }
}

void check_finite(const std::vector<double>& grad, int epoch) {
  for (double g : grad) {
    if (!std::isfinite(g)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": non-finite gradient",
                            epoch, "gradient");
    }
  }
}

// Runs fn, turning numerical failures inside the embedding into divergence.
std::pair<LossBreakdown, ParamGradient> guarded(const GradFn& fn, const UnconstrainedParams& params,
                                                std::span<const std::size_t> subset, int epoch) {
  try {
    return fn(params, subset);
  } catch (const DomainError& e) {
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(), epoch,
                          "embedding");
  }
}

TrainResult run_adam(const Corpus& train, const UnconstrainedParams& init, const TrainConfig& cfg,
                     const Corpus* valid, const GradFn& fn) {
  cfg.validate();
  if (train.num_docs() == 0) throw InvalidParameter("train: empty corpus");
  const bool supervised = cfg.weights().label > 0.0;
  if (valid != nullptr && supervised && !valid->has_labels()) {
    throw InvalidParameter("train: supervised early stopping needs a labelled validation split");
  }

  TrainResult out{init, init, {}};
  UnconstrainedParams& params = out.final_params;
  TrainTrace& trace = out.trace;
  std::vector<double> flat(params.size());
  std::vector<double> flat_grad(params.size());
  Adam adam(flat.size(), cfg.adam);

  const std::size_t n_docs = train.num_docs();
  const bool minibatch = cfg.batch_size > 0 && static_cast<std::size_t>(cfg.batch_size) < n_docs;
  std::vector<std::size_t> order(n_docs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);

  double best_metric = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;

    if (valid != nullptr) {
      SplitNll v;
      try {
        v = predict_nll(*valid, params, cfg.embed, cfg.threads);
      } catch (const DomainError& e) {
        throw DivergenceError("validation failed at epoch " + std::to_string(epoch) + ": " + e.what(), epoch,
                              "embedding");
      }
      rec.valid_label_nll = v.label_nll;
      rec.valid_data_nll = v.data_nll;
      const double metric = supervised ? *v.label_nll : v.data_nll;
      if (metric < best_metric) {
        best_metric = metric;
        trace.best_epoch = epoch;
        out.best_params = params;
      } else if (cfg.patience > 0 && epoch - trace.best_epoch >= cfg.patience) {
        trace.early_stopped = true;
        break;
      }
    }

    if (!minibatch) {
      auto [loss, grad] = guarded(fn, params, {}, epoch);
      check_finite(loss, epoch);
      grad.copy_to(flat_grad);
      check_finite(flat_grad, epoch);
      rec.train = loss;
      params.copy_to(flat);
      adam.step(flat, flat_grad);
      params.copy_from(flat);
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      LossBreakdown mean;
      std::size_t batches = 0;
      for (std::size_t begin = 0; begin < n_docs; begin += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t len = std::min(static_cast<std::size_t>(cfg.batch_size), n_docs - begin);
        auto [loss, grad] = guarded(fn, params, std::span<const std::size_t>(order).subspan(begin, len), epoch);
        check_finite(loss, epoch);
        grad.copy_to(flat_grad);
        check_finite(flat_grad, epoch);
        mean.prior_term += loss.prior_term;
        mean.data_term += loss.data_term;
        mean.label_term += loss.label_term;
        mean.reg_term += loss.reg_term;
        mean.total += loss.total;
        ++batches;
        params.copy_to(flat);
        adam.step(flat, flat_grad);
        params.copy_from(flat);
      }
      const double inv = 1.0 / static_cast<double>(batches);
      rec.train = {mean.prior_term * inv, mean.data_term * inv, mean.label_term * inv, mean.reg_term * inv,
                   mean.total * inv};
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    trace.epochs.push_back(rec);
  }

  const int final_epoch = static_cast<int>(trace.epochs.size());
  trace.final_train = guarded(fn, params, {}, final_epoch).first;
  check_finite(trace.final_train, final_epoch);
  if (valid == nullptr) out.best_params = params;
  return out;
}

void require_labels(const Corpus& corpus, const UnconstrainedParams& params, const char* who) {
  if (!corpus.has_labels()) throw InvalidParameter(std::string(who) + ": corpus has no labels");
  if (params.num_labels() != corpus.num_labels()) {
    throw InvalidParameter(std::string(who) + ": params have " + std::to_string(params.num_labels()) +
                           " labels, corpus has " + std::to_string(corpus.num_labels()));
  }
}

TrainResult run_engine(const Corpus& train, const UnconstrainedParams& init, const TrainConfig& cfg,
                       const Corpus* valid, ObjectiveWeights weights) {
  GradFn fn = [&](const UnconstrainedParams& p, std::span<const std::size_t> subset) {
    EngineOptions opts;
    opts.threads = cfg.threads;
    opts.subset = subset;
    return objective_loss_grad(train, p, weights, cfg.embed, cfg.reg, opts);
  };
  return run_adam(train, init, cfg, valid, fn);
}

// Loss and gradient of the instantiated-pi objective
//   -(sum_d log Dir(pi_d) + data(pi_d) + lambda * label(pi_d)) + reg
// with pi_d the train-mode MAP under the current parameters, held fixed.
std::pair<LossBreakdown, ParamGradient> ml_loss_grad(const Corpus& corpus, const UnconstrainedParams& params,
                                                     const TrainConfig& cfg,
                                                     std::span<const std::size_t> subset) {
  const TopicModelParams model = params.materialize();
  EmbedConfig joint = cfg.embed;
  joint.joint_label_weight = cfg.lambda;
  const std::size_t k_topics = static_cast<std::size_t>(model.num_topics());
  const std::size_t vocab = static_cast<std::size_t>(model.vocab_size());
  const Eigen::Index n_labels = model.eta.rows();

  std::vector<std::size_t> all;
  if (subset.empty()) {
    all.resize(corpus.num_docs());
    std::iota(all.begin(), all.end(), std::size_t{0});
    subset = all;
  }
  const double scale = static_cast<double>(corpus.num_docs()) / static_cast<double>(subset.size());

  CompensatedSum prior, data, label;
  CompensatedBuffer phi_acc(k_topics * vocab);
  CompensatedBuffer eta_acc(static_cast<std::size_t>(n_labels) * k_topics);
  CompensatedBuffer b_acc(static_cast<std::size_t>(n_labels));
  std::vector<double> eta_doc(static_cast<std::size_t>(n_labels) * k_topics);
  std::vector<double> b_doc(static_cast<std::size_t>(n_labels));
  for (std::size_t d : subset) {
    const SparseDoc& x = corpus.doc(d);
    const std::span<const int> y = corpus.label_row(d);
    const DocTopicVector pi = map_embed_joint(x, y, model, joint);
    const std::span<const double> p = pi.span();
    prior.add(detail::dirichlet_logpdf(p, model.alpha));
    data.add(detail::data_loglik(x, p, model.phi));
    label.add(detail::label_loglik(y, p, model.eta, model.intercept));
    for (std::size_t j = 0; j < x.ids.size(); ++j) {
      const std::size_t v = static_cast<std::size_t>(x.ids[j]);
      double s = 0.0;
      for (std::size_t k = 0; k < k_topics; ++k) s += p[k] * model.phi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v));
      const double w = x.counts[j] / s;
      for (std::size_t k = 0; k < k_topics; ++k) phi_acc.add_at(k * vocab + v, -w * p[k]);
    }
    for (Eigen::Index l = 0; l < n_labels; ++l) {
      const double resid = y[static_cast<std::size_t>(l)] -
                           sigmoid(detail::label_logit(static_cast<int>(l), p, model.eta, model.intercept));
      for (std::size_t k = 0; k < k_topics; ++k) {
        eta_doc[static_cast<std::size_t>(l) * k_topics + k] = -cfg.lambda * resid * p[k];
      }
      b_doc[static_cast<std::size_t>(l)] = -cfg.lambda * resid;
    }
    eta_acc.add(eta_doc);
    b_acc.add(b_doc);
  }

  LossBreakdown loss;
  loss.prior_term = scale * prior.value();
  loss.data_term = scale * data.value();
  loss.label_term = scale * label.value();
  loss.reg_term = 0.5 * cfg.reg.tau_phi * params.phi_logits.squaredNorm() +
                  0.5 * cfg.reg.tau_eta * params.eta.squaredNorm();
  loss.total = -(loss.prior_term + loss.data_term + cfg.lambda * loss.label_term) + loss.reg_term;

  ParamGradient grad;
  const std::vector<double> phi_bar = phi_acc.values();
  grad.phi_logits.resize(static_cast<Eigen::Index>(k_topics), static_cast<Eigen::Index>(vocab));
  for (std::size_t k = 0; k < k_topics; ++k) {
    double inner = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      inner += model.phi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v)) * phi_bar[k * vocab + v];
    }
    for (std::size_t v = 0; v < vocab; ++v) {
      const double f = model.phi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v));
      grad.phi_logits(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v)) =
          scale * f * (phi_bar[k * vocab + v] - inner);
    }
  }
  grad.phi_logits += cfg.reg.tau_phi * params.phi_logits;
  const std::vector<double> eta_bar = eta_acc.values();
  grad.eta.resize(params.eta.rows(), params.eta.cols());
  for (std::size_t i = 0; i < eta_bar.size(); ++i) grad.eta.data()[i] = scale * eta_bar[i];
  grad.eta += cfg.reg.tau_eta * params.eta;
  grad.intercept = Vector::Zero(params.intercept.size());
  if (params.intercept.size() > 0) {
    const std::vector<double> b_bar = b_acc.values();
    for (Eigen::Index l = 0; l < n_labels; ++l) grad.intercept[l] = scale * b_bar[static_cast<std::size_t>(l)];
  }
  return {loss, grad};
}

}  // namespace

TrainResult train_pc(const Corpus& train, const UnconstrainedParams& init, const TrainConfig& cfg,
                     const Corpus* valid) {
  if (cfg.objective != Objective::pc) throw InvalidParameter("train_pc: objective must be pc");
  if (cfg.lambda > 0.0) require_labels(train, init, "train_pc");
  return run_engine(train, init, cfg, valid, cfg.weights());
}

TrainResult train_unsupervised(const Corpus& train, const UnconstrainedParams& init, const TrainConfig& cfg,
                               const Corpus* valid) {
  if (cfg.objective != Objective::unsupervised) {
    throw InvalidParameter("train_unsupervised: objective must be unsupervised");
  }
  return run_engine(train, init, cfg, valid, cfg.weights());
}

TrainResult train_bp_slda(const Corpus& train, const UnconstrainedParams& init, const TrainConfig& cfg,
                          const Corpus* valid) {
  if (cfg.objective != Objective::bp) throw InvalidParameter("train_bp_slda: objective must be bp");
  require_labels(train, init, "train_bp_slda");
  return run_engine(train, init, cfg, valid, cfg.weights());
}

TrainResult train_ml_slda(const Corpus& train, const UnconstrainedParams& init, const TrainConfig& cfg,
                          const Corpus* valid) {
  if (cfg.objective != Objective::ml_replicated) {
    throw InvalidParameter("train_ml_slda: objective must be ml_replicated");
  }
  cfg.validate();
  require_labels(train, init, "train_ml_slda");
  if (init.vocab_size() != train.vocab_size()) throw InvalidParameter("train_ml_slda: params V != corpus V");
  GradFn fn = [&](const UnconstrainedParams& p, std::span<const std::size_t> subset) {
    return ml_loss_grad(train, p, cfg, subset);
  };
  return run_adam(train, init, cfg, valid, fn);
}

TrainResult train(const Corpus& train_corpus, const UnconstrainedParams& init, const TrainConfig& cfg,
                  const Corpus* valid) {
  switch (cfg.objective) {
    case Objective::pc: return train_pc(train_corpus, init, cfg, valid);
    case Objective::ml_replicated: return train_ml_slda(train_corpus, init, cfg, valid);
    case Objective::bp: return train_bp_slda(train_corpus, init, cfg, valid);
    case Objective::unsupervised: return train_unsupervised(train_corpus, init, cfg, valid);
  }
  throw InvalidParameter("train: unknown objective");
}

TopicModelParams train_gibbs_baseline(const Corpus& train_corpus, const GibbsConfig& gibbs,
                                      const LogisticHeadConfig& head, const EmbedConfig& embed) {
  const int n_labels = train_corpus.has_labels() ? train_corpus.num_labels() : 0;
  TopicModelParams params = gibbs_train(train_corpus, gibbs, n_labels);
  if (n_labels == 0) return params;
  Matrix pi(static_cast<Eigen::Index>(train_corpus.num_docs()), params.num_topics());
  for (std::size_t d = 0; d < train_corpus.num_docs(); ++d) {
    pi.row(static_cast<Eigen::Index>(d)) = map_embed(train_corpus.doc(d), params, embed).values().transpose();
  }
  params.eta = fit_logistic_head(pi, train_corpus.labels(), head);
  return params;
}

InitSpec InitSpec::random(std::uint64_t seed) {
  InitSpec s;
  s.kind = Kind::random;
  s.seed = seed;
  return s;
}

InitSpec InitSpec::from_gibbs(GibbsConfig cfg) {
  InitSpec s;
  s.kind = Kind::from_gibbs;
  s.seed = cfg.seed;
  s.gibbs = cfg;
  return s;
}

InitSpec InitSpec::from_file(std::filesystem::path path) {
  InitSpec s;
  s.kind = Kind::from_file;
  s.path = std::move(path);
  return s;
}

UnconstrainedParams resolve_init(const InitSpec& spec, const Corpus& corpus, int num_topics, double alpha) {
  if (num_topics < 1) throw InvalidParameter("init: K must be >= 1");
  const int n_labels = corpus.has_labels() ? corpus.num_labels() : 0;
  switch (spec.kind) {
    case InitSpec::Kind::random: {
      UnconstrainedParams p;
      p.alpha = alpha;
      p.phi_logits.resize(num_topics, corpus.vocab_size());
      std::mt19937_64 rng(spec.seed);
      std::normal_distribution<double> normal(0.0, 0.1);
      for (Eigen::Index i = 0; i < p.phi_logits.size(); ++i) p.phi_logits.data()[i] = normal(rng);
      p.eta = Matrix::Zero(n_labels, num_topics);
      return p;
    }
    case InitSpec::Kind::from_gibbs: {
      GibbsConfig g = spec.gibbs;
      g.num_topics = num_topics;
      g.alpha = alpha;
      return UnconstrainedParams::from_params(gibbs_train(corpus, g, n_labels));
    }
    case InitSpec::Kind::from_file: {
      TopicModelParams params = read_checkpoint(spec.path).params;
      if (params.vocab_size() != corpus.vocab_size()) {
        throw DataError("init: checkpoint V=" + std::to_string(params.vocab_size()) +
                        " but corpus V=" + std::to_string(corpus.vocab_size()));
      }
      if (params.num_topics() != num_topics) {
        throw DataError("init: checkpoint K=" + std::to_string(params.num_topics()) +
                        " but K=" + std::to_string(num_topics) + " was requested");
      }
      if (params.num_labels() != n_labels) {
        if (params.num_labels() != 0 && n_labels != 0) {
          throw DataError("init: checkpoint L=" + std::to_string(params.num_labels()) +
                          " but corpus L=" + std::to_string(n_labels));
        }
        params.eta = Matrix::Zero(n_labels, num_topics);
        params.intercept.resize(0);
      }
      return UnconstrainedParams::from_params(params);
    }
  }
  throw InvalidParameter("init: unknown kind");
}

RestartsResult train_restarts(const Corpus& train_corpus, const std::vector<UnconstrainedParams>& inits,
                              const TrainConfig& cfg, const Corpus* valid) {
  if (inits.empty()) throw InvalidParameter("train_restarts: no initializations");
  RestartsResult out;
  for (const UnconstrainedParams& init : inits) {
    out.runs.push_back(train(train_corpus, init, cfg, valid));
    const std::size_t i = out.runs.size() - 1;
    if (out.runs[i].trace.final_train.total < out.runs[out.best].trace.final_train.total) out.best = i;
  }
  return out;
}

std::vector<LadderRung> lambda_ladder(const Corpus& train_corpus, const std::vector<double>& grid,
                                      const UnconstrainedParams& base, const TrainConfig& cfg,
                                      const Corpus* valid, bool warm_chain) {
  if (grid.empty()) throw InvalidParameter("lambda_ladder: empty grid");
  if (!std::is_sorted(grid.begin(), grid.end())) throw InvalidParameter("lambda_ladder: grid must ascend");
  std::vector<LadderRung> rungs;
  std::optional<UnconstrainedParams> chain;

  auto run_rung = [&](double lambda, bool warm, const UnconstrainedParams& init) {
    LadderRung rung;
    rung.lambda = lambda;
    rung.warm = warm;
    TrainConfig c = cfg;
    c.lambda = lambda;
    try {
      rung.result = train(train_corpus, init, c, valid);
      const UnconstrainedParams& chosen = rung.result->best_params;
      rung.train_label_nll = predict_nll(train_corpus, chosen, c.embed, c.threads).label_nll;
      if (valid != nullptr) rung.valid_label_nll = predict_nll(*valid, chosen, c.embed, c.threads).label_nll;
    } catch (const std::exception& e) {
      rung.result.reset();
      rung.error = e.what();
    }
    rungs.push_back(std::move(rung));
  };

  for (std::size_t i = 0; i < grid.size(); ++i) {
    run_rung(grid[i], false, base);
    if (i == 0) {
      if (rungs.back().result) chain = rungs.back().result->best_params;
      continue;
    }
    if (!warm_chain) continue;
    run_rung(grid[i], true, chain ? *chain : base);
    if (rungs.back().result) chain = rungs.back().result->best_params;
  }

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    const auto& metric = valid != nullptr ? rungs[i].valid_label_nll : rungs[i].train_label_nll;
    if (!metric) continue;
    const auto& incumbent = best ? (valid != nullptr ? rungs[*best].valid_label_nll : rungs[*best].train_label_nll)
                                 : std::optional<double>{};
    if (!best || *metric < *incumbent) best = i;
  }
  if (best) rungs[*best].best = true;
  return rungs;
}

}  // namespace pclda
