#include "pclda/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <system_error>

#include "pclda/errors.hpp"
#include "pclda/numeric.hpp"

namespace pclda {

namespace {

using Rng = std::mt19937_64;

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Index i with cumulative[i-1] <= u * total < cumulative[i].
int sample_categorical(Rng& rng, const std::vector<double>& cumulative) {
  const double u = uniform01(rng) * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  if (it == cumulative.end()) --it;
  return static_cast<int>(it - cumulative.begin());
}

std::vector<int> draw_counts(Rng& rng, const std::vector<double>& probs, int n_tokens) {
  std::vector<double> cumulative(probs.size());
  std::partial_sum(probs.begin(), probs.end(), cumulative.begin());
  std::vector<int> counts(probs.size(), 0);
  for (int i = 0; i < n_tokens; ++i) ++counts[static_cast<std::size_t>(sample_categorical(rng, cumulative))];
  return counts;
}

std::vector<double> sample_dirichlet(Rng& rng, double concentration, int n) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> out(static_cast<std::size_t>(n));
  double total = 0.0;
  while (!(total > 0.0)) {
    total = 0.0;
    for (double& x : out) {
      x = gamma(rng);
      total += x;
    }
  }
  for (double& x : out) x /= total;
  return out;
}

std::string trim_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  if (s[0] == '-' || s[0] == '+') pos = 1;
  if (pos == s.size()) return false;
  for (std::size_t i = pos; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  try {
    out = std::stoll(s);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

DataError line_error(int line_no, const std::string& msg) {
  return DataError("line " + std::to_string(line_no) + ": " + msg);
}

void check_doc_id(const std::string& id) {
  if (id.empty() || id.find_first_of(" \t,\r\n") != std::string::npos) {
    throw DataError("doc id '" + id + "' is empty or contains whitespace/commas");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Generators

void ToyBarsConfig::validate() const {
  if (n_docs < 1) throw InvalidParameter("toy-bars: n_docs must be >= 1");
  if (grid_side < 2) throw InvalidParameter("toy-bars: grid_side must be >= 2");
  if (n_horizontal < 0 || n_vertical < 0 || n_horizontal + n_vertical < 1 ||
      n_horizontal > grid_side - 1 || n_vertical > grid_side - 1) {
    throw InvalidParameter("toy-bars: bar counts must be in [0, grid_side - 1] with at least one bar");
  }
  if (min_length < 1 || max_length < min_length) throw InvalidParameter("toy-bars: bad length range");
  if (signal_count < 1) throw InvalidParameter("toy-bars: signal_count must be >= 1");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw InvalidParameter("toy-bars: positive_fraction must be in [0, 1]");
  }
  if (!(bar_mass > 0.0 && bar_mass <= 1.0)) throw InvalidParameter("toy-bars: bar_mass must be in (0, 1]");
}

ToyBarsData gen_toy_bars(const ToyBarsConfig& cfg) {
  cfg.validate();
  const int side = cfg.grid_side;
  const int vocab = side * side;
  std::vector<std::vector<int>> bars;
  for (int r = side - cfg.n_horizontal; r < side; ++r) {
    std::vector<int> words;
    for (int c = 0; c < side; ++c) words.push_back(r * side + c);
    bars.push_back(words);
  }
  for (int c = side - cfg.n_vertical; c < side; ++c) {
    std::vector<int> words;
    for (int r = 0; r < side; ++r) words.push_back(r * side + c);
    bars.push_back(words);
  }
  const int n_bars = static_cast<int>(bars.size());
  Matrix topics = Matrix::Zero(n_bars, vocab);
  for (int b = 0; b < n_bars; ++b) {
    std::vector<int> noise;
    for (int v = 1; v < vocab; ++v) {
      if (std::find(bars[b].begin(), bars[b].end(), v) == bars[b].end()) noise.push_back(v);
    }
    const double own = noise.empty() ? 1.0 : cfg.bar_mass;
    for (int v : bars[b]) topics(b, v) = own / static_cast<double>(bars[b].size());
    for (int v : noise) topics(b, v) = (1.0 - own) / static_cast<double>(noise.size());
  }

  Rng rng(cfg.seed);
  std::vector<SparseDoc> docs;
  LabelMatrix labels(cfg.n_docs, 1);
  docs.reserve(static_cast<std::size_t>(cfg.n_docs));
  for (int d = 0; d < cfg.n_docs; ++d) {
    const int n_chosen = (n_bars >= 2 && uniform01(rng) < 0.5) ? 2 : 1;
    const int first = uniform_int(rng, 0, n_bars - 1);
    std::vector<double> probs(static_cast<std::size_t>(vocab), 0.0);
    for (int v = 0; v < vocab; ++v) probs[static_cast<std::size_t>(v)] = topics(first, v);
    if (n_chosen == 2) {
      int second = uniform_int(rng, 0, n_bars - 2);
      if (second >= first) ++second;
      for (int v = 0; v < vocab; ++v) {
        probs[static_cast<std::size_t>(v)] = 0.5 * (topics(first, v) + topics(second, v));
      }
    }
    const int length = uniform_int(rng, cfg.min_length, cfg.max_length);
    std::vector<int> counts = draw_counts(rng, probs, length);
    const bool positive = uniform01(rng) < cfg.positive_fraction;
    if (positive) counts[0] = cfg.signal_count;
    labels(d, 0) = positive ? 1 : 0;

    SparseDoc doc;
    for (int v = 0; v < vocab; ++v) {
      if (counts[static_cast<std::size_t>(v)] > 0) {
        doc.ids.push_back(v);
        doc.counts.push_back(counts[static_cast<std::size_t>(v)]);
      }
    }
    docs.push_back(std::move(doc));
  }
  return ToyBarsData{Corpus(vocab, std::move(docs), std::move(labels), {"signal"}), std::move(topics)};
}

void SyntheticEhrConfig::validate() const {
  if (n_docs < 1 || vocab_size < 1 || num_labels < 1 || num_topics < 1) {
    throw InvalidParameter("ehr-like: sizes must be positive");
  }
  if (!(alpha > 0.0) || !(topic_concentration > 0.0) || !(eta_scale >= 0.0)) {
    throw InvalidParameter("ehr-like: alpha, topic_concentration must be > 0 and eta_scale >= 0");
  }
  if (min_length < 2 || max_length < min_length) {
    throw InvalidParameter("ehr-like: lengths need 2 <= min_length <= max_length");
  }
}

SyntheticEhrData gen_synthetic_ehr(const SyntheticEhrConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  TopicModelParams planted;
  planted.alpha = cfg.alpha;
  planted.phi.resize(cfg.num_topics, cfg.vocab_size);
  for (int k = 0; k < cfg.num_topics; ++k) {
    const std::vector<double> row = sample_dirichlet(rng, cfg.topic_concentration, cfg.vocab_size);
    for (int v = 0; v < cfg.vocab_size; ++v) planted.phi(k, v) = row[static_cast<std::size_t>(v)];
  }
  planted.eta = Matrix::Zero(cfg.num_labels, cfg.num_topics);
  if (cfg.eta_scale > 0.0) {
    std::normal_distribution<double> normal(0.0, cfg.eta_scale);
    for (Eigen::Index i = 0; i < planted.eta.size(); ++i) planted.eta.data()[i] = normal(rng);
  }

  std::vector<SparseDoc> docs;
  std::vector<int> lengths;
  LabelMatrix labels(cfg.n_docs, cfg.num_labels);
  std::vector<double> probs(static_cast<std::size_t>(cfg.vocab_size));
  for (int d = 0; d < cfg.n_docs; ++d) {
    const std::vector<double> pi = sample_dirichlet(rng, cfg.alpha, cfg.num_topics);
    for (int v = 0; v < cfg.vocab_size; ++v) {
      double p = 0.0;
      for (int k = 0; k < cfg.num_topics; ++k) p += pi[static_cast<std::size_t>(k)] * planted.phi(k, v);
      probs[static_cast<std::size_t>(v)] = p;
    }
    const int length = uniform_int(rng, cfg.min_length, cfg.max_length);
    lengths.push_back(length);
    const std::vector<int> counts = draw_counts(rng, probs, length);
    SparseDoc doc;
    for (int v = 0; v < cfg.vocab_size; ++v) {
      if (counts[static_cast<std::size_t>(v)] > 0) {
        doc.ids.push_back(v);
        doc.counts.push_back(counts[static_cast<std::size_t>(v)]);
      }
    }
    docs.push_back(std::move(doc));
    for (int l = 0; l < cfg.num_labels; ++l) {
      double z = 0.0;
      for (int k = 0; k < cfg.num_topics; ++k) z += planted.eta(l, k) * pi[static_cast<std::size_t>(k)];
      labels(d, l) = uniform01(rng) < sigmoid(z) ? 1 : 0;
    }
  }
  std::vector<std::string> names;
  for (int l = 0; l < cfg.num_labels; ++l) names.push_back("label" + std::to_string(l));
  return SyntheticEhrData{Corpus(cfg.vocab_size, std::move(docs), std::move(labels), std::move(names)),
                          std::move(planted), std::move(lengths)};
}

// ---------------------------------------------------------------------------
// Splits

CorpusSplit split(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw InvalidParameter("split: fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidParameter("split: fractions must sum to 1");
  const std::size_t n = corpus.num_docs();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_valid = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  if (n_train == 0 || n_valid == 0 || n_train + n_valid >= n) {
    throw InvalidParameter("split: every split needs at least one document");
  }
  std::span<const std::size_t> all(order);
  return CorpusSplit{corpus.select(all.subspan(0, n_train)),
                     corpus.select(all.subspan(n_train, n_valid)),
                     corpus.select(all.subspan(n_train + n_valid))};
}

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string corpus_to_string(const Corpus& corpus) {
  std::ostringstream out;
  out << "#pclda-corpus v1 V=" << corpus.vocab_size() << '\n';
  for (std::size_t d = 0; d < corpus.num_docs(); ++d) {
    check_doc_id(corpus.doc_ids()[d]);
    out << corpus.doc_ids()[d];
    const SparseDoc& doc = corpus.doc(d);
    for (std::size_t j = 0; j < doc.ids.size(); ++j) out << ' ' << doc.ids[j] << ':' << doc.counts[j];
    out << '\n';
  }
  return out.str();
}

Corpus corpus_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw DataError("line 1: missing corpus header");
  ++line_no;
  line = trim_cr(line);
  const std::string prefix = "#pclda-corpus v1 V=";
  long long vocab = 0;
  if (line.rfind(prefix, 0) != 0 || !parse_int(line.substr(prefix.size()), vocab) || vocab < 1) {
    throw line_error(line_no, "expected header '#pclda-corpus v1 V=<int>'");
  }
  std::vector<SparseDoc> docs;
  std::vector<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim_cr(line);
    const std::vector<std::string> fields = split_on(line, ' ');
    if (fields.empty() || fields[0].empty()) throw line_error(line_no, "missing doc_id");
    if (fields.size() < 2) throw line_error(line_no, "empty document (N_d must be >= 1)");
    SparseDoc doc;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const std::vector<std::string> kv = split_on(fields[i], ':');
      long long id = 0, count = 0;
      if (kv.size() != 2 || !parse_int(kv[0], id) || !parse_int(kv[1], count)) {
        throw line_error(line_no, "malformed token field '" + fields[i] + "'");
      }
      if (id < 0 || id >= vocab) {
        throw line_error(line_no, "token id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
      }
      if (count < 1) throw line_error(line_no, "count must be >= 1");
      if (!doc.ids.empty() && id <= doc.ids.back()) throw line_error(line_no, "token ids must ascend");
      doc.ids.push_back(static_cast<int>(id));
      doc.counts.push_back(static_cast<int>(count));
    }
    docs.push_back(std::move(doc));
    ids.push_back(fields[0]);
  }
  return Corpus(static_cast<int>(vocab), std::move(docs), std::nullopt, {}, std::move(ids));
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, corpus_to_string(corpus));
}

Corpus read_corpus(const std::filesystem::path& path) {
  try {
    return corpus_from_string(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string labels_to_string(const Corpus& corpus) {
  std::ostringstream out;
  out << "doc_id";
  for (const std::string& name : corpus.label_names()) out << ',' << name;
  out << '\n';
  const LabelMatrix& y = corpus.labels();
  for (std::size_t d = 0; d < corpus.num_docs(); ++d) {
    out << corpus.doc_ids()[d];
    for (Eigen::Index l = 0; l < y.cols(); ++l) out << ',' << y(static_cast<Eigen::Index>(d), l);
    out << '\n';
  }
  return out.str();
}

void write_labels(const Corpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, labels_to_string(corpus));
}

Corpus attach_labels(const Corpus& corpus, const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) { return DataError(path.string() + ": " + line_error(line_no, msg).what()); };
  if (!std::getline(in, line)) throw fail("missing header");
  ++line_no;
  const std::vector<std::string> header = split_on(trim_cr(line), ',');
  if (header.size() < 2 || header[0] != "doc_id") throw fail("header must be doc_id,<label>,...");
  std::vector<std::string> names(header.begin() + 1, header.end());
  LabelMatrix labels(static_cast<Eigen::Index>(corpus.num_docs()), static_cast<Eigen::Index>(names.size()));
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::vector<std::string> fields = split_on(trim_cr(line), ',');
    if (fields.size() != header.size()) throw fail("expected " + std::to_string(header.size()) + " fields");
    if (row >= corpus.num_docs()) throw fail("more label rows than documents");
    if (fields[0] != corpus.doc_ids()[row]) {
      throw fail("doc_id '" + fields[0] + "' does not match corpus doc '" + corpus.doc_ids()[row] + "'");
    }
    for (std::size_t l = 0; l < names.size(); ++l) {
      if (fields[l + 1] != "0" && fields[l + 1] != "1") throw fail("label values must be 0 or 1");
      labels(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(l)) = fields[l + 1] == "1" ? 1 : 0;
    }
    ++row;
  }
  if (row != corpus.num_docs()) {
    throw DataError(path.string() + ": " + std::to_string(row) + " label rows for " +
                    std::to_string(corpus.num_docs()) + " documents");
  }
  return Corpus(corpus.vocab_size(), corpus.docs(), std::move(labels), std::move(names), corpus.doc_ids());
}

Corpus load_corpus(const std::filesystem::path& corpus_path,
                   const std::optional<std::filesystem::path>& labels_path) {
  Corpus corpus = read_corpus(corpus_path);
  if (!labels_path) return corpus;
  return attach_labels(corpus, *labels_path);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string format_double17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

namespace {

template <typename Derived>
std::string json_array(const Eigen::DenseBase<Derived>& m) {
  std::string out = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (r != 0 || c != 0) out += ", ";
      out += format_double17(m(r, c));
    }
  }
  return out + "]";
}

}  // namespace

std::string checkpoint_to_string(const TopicModelParams& params, const nlohmann::json& config_echo,
                                 bool validate) {
  if (validate) params.validate();
  std::string out = "{\n";
  out += "  \"version\": " + std::to_string(kCheckpointVersion) + ",\n";
  out += "  \"K\": " + std::to_string(params.num_topics()) + ",\n";
  out += "  \"V\": " + std::to_string(params.vocab_size()) + ",\n";
  out += "  \"L\": " + std::to_string(params.num_labels()) + ",\n";
  out += "  \"alpha\": " + format_double17(params.alpha) + ",\n";
  out += "  \"phi\": " + json_array(params.phi) + ",\n";
  out += "  \"eta\": " + json_array(params.eta) + ",\n";
  if (params.has_intercept()) out += "  \"intercept\": " + json_array(params.intercept) + ",\n";
  out += "  \"config_echo\": " + config_echo.dump() + "\n";
  out += "}\n";
  return out;
}

Checkpoint checkpoint_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  try {
    Checkpoint ck;
    ck.version = j.at("version").get<int>();
    if (ck.version != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported version " + std::to_string(ck.version));
    }
    const int k_topics = j.at("K").get<int>();
    const int vocab = j.at("V").get<int>();
    const int n_labels = j.at("L").get<int>();
    if (k_topics < 1 || vocab < 1 || n_labels < 0) throw DataError("checkpoint: bad dimensions");
    const auto phi = j.at("phi").get<std::vector<double>>();
    const auto eta = j.at("eta").get<std::vector<double>>();
    if (phi.size() != static_cast<std::size_t>(k_topics) * static_cast<std::size_t>(vocab)) {
      throw DataError("checkpoint: phi has " + std::to_string(phi.size()) + " values, expected K*V");
    }
    if (eta.size() != static_cast<std::size_t>(n_labels) * static_cast<std::size_t>(k_topics)) {
      throw DataError("checkpoint: eta has " + std::to_string(eta.size()) + " values, expected L*K");
    }
    ck.params.alpha = j.at("alpha").get<double>();
    ck.params.phi = Eigen::Map<const Matrix>(phi.data(), k_topics, vocab);
    ck.params.eta = Eigen::Map<const Matrix>(eta.data(), n_labels, k_topics);
    if (j.contains("intercept")) {
      const auto b = j.at("intercept").get<std::vector<double>>();
      ck.params.intercept = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    }
    if (j.contains("config_echo")) ck.config_echo = j.at("config_echo");
    ck.params.validate();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const InvalidParameter& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void write_checkpoint(const TopicModelParams& params, const nlohmann::json& config_echo,
                      const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_string(params, config_echo));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_string(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace pclda
