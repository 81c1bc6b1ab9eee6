#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pclda/adam.hpp"
#include "pclda/core_model.hpp"
#include "pclda/gibbs_lda.hpp"
#include "pclda/gradient_engine.hpp"
#include "pclda/map_embedding.hpp"

namespace pclda {

enum class Objective { pc, ml_replicated, bp, unsupervised };

std::string to_string(Objective objective);
// Accepts pc, ml, ml_replicated, bp, unsupervised.
Objective parse_objective(const std::string& name);

struct TrainConfig {
  Objective objective = Objective::pc;
  // Label weight for pc and the replication factor for ml_replicated; bp and
  // unsupervised ignore it. pc accepts 0, which reduces to unsupervised.
  double lambda = 1.0;
  int epochs = 200;
  int batch_size = 0;  // 0 = full batch
  AdamConfig adam;
  Regularization reg;
  EmbedConfig embed;
  std::uint64_t seed = 0;  // minibatch order
  int patience = 20;       // epochs without validation improvement; 0 disables
  int threads = 1;

  void validate() const;
  ObjectiveWeights weights() const;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train;  // at the parameters entering the epoch
  std::optional<double> valid_label_nll;  // per document, predict mode
  std::optional<double> valid_data_nll;   // per token, predict mode
  double seconds = 0.0;

  // Wall-clock time is not compared.
  bool same_values(const EpochRecord& other) const;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  LossBreakdown final_train;
  int best_epoch = -1;  // -1 when no validation split was given
  bool early_stopped = false;

  bool same_values(const TrainTrace& other) const;
};

struct TrainResult {
  UnconstrainedParams final_params;
  // Parameters at the epoch with the lowest validation metric; equal to
  // final_params without a validation split.
  UnconstrainedParams best_params;
  TrainTrace trace;
};

// Adam on pc_loss_grad (generative weight 1, label weight lambda).
TrainResult train_pc(const Corpus& train, const UnconstrainedParams& init, const TrainConfig& cfg,
                     const Corpus* valid = nullptr);

// Alternates train-mode MAP embeddings (label weight lambda) with one Adam
// step on phi and eta holding those embeddings fixed.
TrainResult train_ml_slda(const Corpus& train, const UnconstrainedParams& init,
                          const TrainConfig& cfg, const Corpus* valid = nullptr);

// Label term through the predict-mode embedding only.
TrainResult train_bp_slda(const Corpus& train, const UnconstrainedParams& init,
                          const TrainConfig& cfg, const Corpus* valid = nullptr);

// pc with label weight 0.
TrainResult train_unsupervised(const Corpus& train, const UnconstrainedParams& init,
                               const TrainConfig& cfg, const Corpus* valid = nullptr);

// Dispatches on cfg.objective.
TrainResult train(const Corpus& train, const UnconstrainedParams& init, const TrainConfig& cfg,
                  const Corpus* valid = nullptr);

// Collapsed Gibbs topics followed by a logistic head fitted to the
// predict-mode embeddings of the training documents (when labelled).
TopicModelParams train_gibbs_baseline(const Corpus& train, const GibbsConfig& gibbs,
                                      const LogisticHeadConfig& head, const EmbedConfig& embed);

struct InitSpec {
  enum class Kind { random, from_gibbs, from_file };
  Kind kind = Kind::random;
  std::uint64_t seed = 0;
  std::filesystem::path path;  // from_file
  GibbsConfig gibbs;           // from_gibbs; num_topics and alpha are overridden

  static InitSpec random(std::uint64_t seed);
  static InitSpec from_gibbs(GibbsConfig cfg);
  static InitSpec from_file(std::filesystem::path path);
};

// random: logits ~ N(0, 0.1^2), eta = 0. from_gibbs: gibbs_train topics,
// eta = 0. from_file: checkpoint contents, shapes checked against the corpus.
UnconstrainedParams resolve_init(const InitSpec& spec, const Corpus& corpus, int num_topics,
                                 double alpha);

struct RestartsResult {
  std::vector<TrainResult> runs;
  std::size_t best = 0;  // lowest final training loss
};

RestartsResult train_restarts(const Corpus& train, const std::vector<UnconstrainedParams>& inits,
                              const TrainConfig& cfg, const Corpus* valid = nullptr);

struct LadderRung {
  double lambda = 0.0;
  bool warm = false;
  std::optional<TrainResult> result;
  std::string error;  // non-empty when the rung failed
  std::optional<double> valid_label_nll;
  std::optional<double> train_label_nll;  // predict mode, per document
  bool best = false;
};

// For each lambda in ascending order: a cold rung from `base` and, after the
// first lambda and when `warm_chain` is set, a warm rung continuing the chain
// of previous solutions. Failures are recorded
// and the ladder continues. The best rung has the lowest validation label NLL
// (training label NLL when no validation split is given).
std::vector<LadderRung> lambda_ladder(const Corpus& train, const std::vector<double>& grid,
                                      const UnconstrainedParams& base, const TrainConfig& cfg,
                                      const Corpus* valid = nullptr, bool warm_chain = true);

// Predict-mode per-document label NLL and per-token data NLL.
struct SplitNll {
  std::optional<double> label_nll;  // absent for unlabelled corpora
  double data_nll = 0.0;
};
SplitNll predict_nll(const Corpus& corpus, const UnconstrainedParams& params, const EmbedConfig& embed,
                     int threads = 1);

}  // namespace pclda
