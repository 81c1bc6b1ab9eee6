#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "pclda/core_model.hpp"

namespace pclda {

// Toy bars on a grid_side x grid_side vocabulary (row-major word ids). Word 0
// (top-left) is the signal word: positive documents contain it exactly
// signal_count times, negative documents never. Horizontal bars are the last
// n_horizontal rows and vertical bars the last n_vertical columns, so no bar
// touches the signal word.
struct ToyBarsConfig {
  int n_docs = 500;
  int grid_side = 3;
  int n_horizontal = 2;
  int n_vertical = 2;
  int min_length = 40;  // bar tokens per document, uniform in [min, max]
  int max_length = 60;
  int signal_count = 1;
  double positive_fraction = 0.5;
  // Share of each bar's mass on its own cells; the rest is spread evenly
  // over the other non-signal cells.
  double bar_mass = 0.95;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ToyBarsData {
  Corpus corpus;
  Matrix bar_topics;  // n_bars x V ground truth
};

// Each document mixes one or two distinct bars (count uniform on {1, 2},
// equal weights) and draws its bar tokens from the mixture.
ToyBarsData gen_toy_bars(const ToyBarsConfig& cfg);

// Planted sLDA instance standing in for a clinical multi-label cohort.
struct SyntheticEhrConfig {
  int n_docs = 2000;
  int vocab_size = 500;
  int num_labels = 11;
  int num_topics = 10;
  double alpha = 1.1;                // doc-topic Dirichlet
  double topic_concentration = 0.05; // sparse topic-word Dirichlet
  double eta_scale = 1.0;            // planted eta ~ N(0, eta_scale^2); 0 gives a null head
  int min_length = 20;
  int max_length = 80;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticEhrData {
  Corpus corpus;
  // Planted phi may contain exact zeros, so it is not validated as a model.
  TopicModelParams planted;
  std::vector<int> doc_lengths;
};

SyntheticEhrData gen_synthetic_ehr(const SyntheticEhrConfig& cfg);

struct CorpusSplit {
  Corpus train;
  Corpus valid;
  Corpus test;
};

// Seeded shuffle, then consecutive blocks of round(f * D) documents for train
// and valid; test takes the rest. Throws InvalidParameter if the fractions do
// not sum to 1 or any split would be empty.
CorpusSplit split(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed);

// Corpus text format:
//   #pclda-corpus v1 V=<int>
//   <doc_id> <tokenId>:<count> ...      (ascending token ids)
std::string corpus_to_string(const Corpus& corpus);
Corpus corpus_from_string(const std::string& text);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

// Labels CSV: header `doc_id,<name>,...`, one 0/1 row per document in
// corpus order.
std::string labels_to_string(const Corpus& corpus);
void write_labels(const Corpus& corpus, const std::filesystem::path& path);
// Returns `corpus` with labels attached; doc ids must match row by row.
Corpus attach_labels(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& corpus_path,
                   const std::optional<std::filesystem::path>& labels_path);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int version = kCheckpointVersion;
  TopicModelParams params;
  nlohmann::json config_echo = nlohmann::json::object();
};

// JSON document with fields version, K, V, L, alpha, phi (row-major), eta
// (row-major), config_echo, plus intercept when enabled. Floats carry 17
// significant digits.
std::string checkpoint_to_string(const TopicModelParams& params, const nlohmann::json& config_echo,
                                 bool validate = true);
Checkpoint checkpoint_from_string(const std::string& text);
void write_checkpoint(const TopicModelParams& params, const nlohmann::json& config_echo,
                      const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// printf("%.17g")
std::string format_double17(double x);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace pclda
