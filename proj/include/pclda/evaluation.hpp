#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pclda/core_model.hpp"
#include "pclda/map_embedding.hpp"

namespace pclda {

// train: embeddings also see the labels (map_embed_joint). predict: words
// only.
enum class EvalMode { train, predict };

std::string to_string(EvalMode mode);
EvalMode parse_eval_mode(const std::string& name);

struct MetricsRecord {
  std::string method;
  double lambda = 0.0;
  int num_topics = 0;
  EvalMode map_mode = EvalMode::predict;
  std::string split;
  double data_nll_per_token = 0.0;
  double label_nll_per_doc = 0.0;
  // One entry per label column; empty when that column holds one class.
  std::vector<std::optional<double>> auc_per_label;
  std::optional<double> auc_mean;  // over the defined columns
  std::vector<std::string> label_names;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

// Normalized Mann-Whitney statistic; ties count one half. Throws DomainError
// unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Embeds every document of `corpus` (which must carry labels) and scores it.
// Train mode uses cfg.joint_label_weight, or 1 when that is zero. Predict mode
// ignores the weight and never hands labels to the embedding.
MetricsRecord heldout_metrics(const Corpus& corpus, const TopicModelParams& params, const EmbedConfig& cfg,
                              EvalMode mode, const std::string& method = "", double lambda = 0.0,
                              const std::string& split_name = "");

struct NamedModel {
  std::string method;
  double lambda = 0.0;
  TopicModelParams params;
  // Train-mode label weight for this model; 0 defers to cfg.
  double joint_weight = 0.0;
};

struct LandscapeResult {
  std::vector<MetricsRecord> records;  // train then predict per successful model
  std::vector<std::string> errors;     // "<method>: <message>" per failed model
};

LandscapeResult fitness_landscape(const std::vector<NamedModel>& models, const Corpus& corpus,
                                  const EmbedConfig& cfg, const std::string& split_name = "train");

struct TopicSummary {
  int topic = 0;
  std::vector<std::pair<int, double>> top_by_word_prob;   // (v, phi_kv)
  std::vector<std::pair<int, double>> top_by_topic_prob;  // (v, p(k | v))
  std::vector<double> eta;                                // eta_lk per label
};

struct TopicReport {
  std::vector<double> topic_weights;  // mean predict-mode pi over the corpus
  std::vector<TopicSummary> topics;
  std::vector<std::string> label_names;
};

TopicReport topic_report(const TopicModelParams& params, const Corpus& corpus, int top_n,
                         const EmbedConfig& cfg = {});
std::string topic_report_text(const TopicReport& report);

// Metrics table. Columns:
//   method,lambda,K,map_mode,split,data_nll_per_token,label_nll_per_doc,auc_mean,auc_<label>...
// Reals use 9 significant digits; absent values are written as NA. All
// records must share the same label names.
std::string metrics_to_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> metrics_from_csv(const std::string& text);
nlohmann::json metrics_to_json(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> metrics_from_json(const nlohmann::json& j);

// printf("%.9g")
std::string format_double9(double x);

}  // namespace pclda
