#include "pclda/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pclda/errors.hpp"
#include "pclda/numeric.hpp"

namespace pclda {

std::string to_string(EvalMode mode) { return mode == EvalMode::train ? "train" : "predict"; }

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "train") return EvalMode::train;
  if (name == "predict") return EvalMode::predict;
  throw InvalidParameter("unknown map mode '" + name + "'");
}

std::string format_double9(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidParameter("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (double s : scores) {
    if (std::isnan(s)) throw DomainError("auc: NaN score");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double n_pos = 0.0, n_neg = 0.0;
  for (int y : labels) {
    if (y == 1) {
      n_pos += 1.0;
    } else if (y == 0) {
      n_neg += 1.0;
    } else {
      throw InvalidParameter("auc: labels must be 0 or 1");
    }
  }
  if (n_pos == 0.0 || n_neg == 0.0) throw DomainError("auc: undefined with a single class");

  // Walk tie groups in ascending score order. Each positive beats every
  // negative below its group and half of the negatives tied with it.
  double u = 0.0;
  double neg_below = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double pos = 0.0, neg = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1.0;
      ++j;
    }
    u += pos * neg_below + 0.5 * pos * neg;
    neg_below += neg;
    i = j;
  }
  return u / (n_pos * n_neg);
}

MetricsRecord heldout_metrics(const Corpus& corpus, const TopicModelParams& params, const EmbedConfig& cfg,
                              EvalMode mode, const std::string& method, double lambda,
                              const std::string& split_name) {
  params.validate();
  if (!corpus.has_labels()) throw InvalidParameter("heldout_metrics: corpus has no labels");
  if (corpus.num_docs() == 0) throw InvalidParameter("heldout_metrics: empty corpus");
  if (params.vocab_size() != corpus.vocab_size()) {
    throw InvalidParameter("heldout_metrics: model V=" + std::to_string(params.vocab_size()) +
                           " but corpus V=" + std::to_string(corpus.vocab_size()));
  }
  if (params.num_labels() != corpus.num_labels()) {
    throw InvalidParameter("heldout_metrics: model L=" + std::to_string(params.num_labels()) +
                           " but corpus L=" + std::to_string(corpus.num_labels()));
  }
  EmbedConfig predict_cfg = cfg;
  predict_cfg.joint_label_weight = 0.0;
  EmbedConfig train_cfg = cfg;
  if (train_cfg.joint_label_weight == 0.0) train_cfg.joint_label_weight = 1.0;

  const std::size_t n_docs = corpus.num_docs();
  const int n_labels = corpus.num_labels();
  CompensatedSum data, label;
  std::vector<std::vector<double>> logits(static_cast<std::size_t>(n_labels), std::vector<double>(n_docs));
  for (std::size_t d = 0; d < n_docs; ++d) {
    const SparseDoc& x = corpus.doc(d);
    const DocTopicVector pi = mode == EvalMode::train
                                  ? map_embed_joint(x, corpus.label_row(d), params, train_cfg)
                                  : map_embed(x, params, predict_cfg);
    data.add(doc_data_loglik(x, pi, params));
    label.add(doc_label_loglik(corpus.label_row(d), pi, params));
    for (int l = 0; l < n_labels; ++l) {
      logits[static_cast<std::size_t>(l)][d] = detail::label_logit(l, pi.span(), params.eta, params.intercept);
    }
  }

  MetricsRecord rec;
  rec.method = method;
  rec.lambda = lambda;
  rec.num_topics = params.num_topics();
  rec.map_mode = mode;
  rec.split = split_name;
  rec.data_nll_per_token = -data.value() / static_cast<double>(corpus.total_tokens());
  rec.label_nll_per_doc = -label.value() / static_cast<double>(n_docs);
  rec.label_names = corpus.label_names();
  double auc_sum = 0.0;
  int defined = 0;
  std::vector<int> column(n_docs);
  for (int l = 0; l < n_labels; ++l) {
    for (std::size_t d = 0; d < n_docs; ++d) column[d] = corpus.label_row(d)[static_cast<std::size_t>(l)];
    const int positives = std::accumulate(column.begin(), column.end(), 0);
    if (positives == 0 || positives == static_cast<int>(n_docs)) {
      rec.auc_per_label.emplace_back();
      continue;
    }
    const double a = auc(logits[static_cast<std::size_t>(l)], column);
    rec.auc_per_label.emplace_back(a);
    auc_sum += a;
    ++defined;
  }
  if (defined > 0) rec.auc_mean = auc_sum / defined;
  return rec;
}

LandscapeResult fitness_landscape(const std::vector<NamedModel>& models, const Corpus& corpus,
                                  const EmbedConfig& cfg, const std::string& split_name) {
  if (models.empty()) throw InvalidParameter("fitness_landscape: no models");
  LandscapeResult out;
  for (const NamedModel& m : models) {
    try {
      EmbedConfig train_cfg = cfg;
      if (m.joint_weight > 0.0) train_cfg.joint_label_weight = m.joint_weight;
      MetricsRecord train =
          heldout_metrics(corpus, m.params, train_cfg, EvalMode::train, m.method, m.lambda, split_name);
      MetricsRecord predict =
          heldout_metrics(corpus, m.params, cfg, EvalMode::predict, m.method, m.lambda, split_name);
      out.records.push_back(std::move(train));
      out.records.push_back(std::move(predict));
    } catch (const std::exception& e) {
      out.errors.push_back(m.method + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::vector<std::pair<int, double>> top_entries(const std::vector<double>& values, int top_n) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
  });
  const std::size_t n = std::min(idx.size(), static_cast<std::size_t>(std::max(0, top_n)));
  std::vector<std::pair<int, double>> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(idx[i], values[static_cast<std::size_t>(idx[i])]);
  return out;
}

}  // namespace

TopicReport topic_report(const TopicModelParams& params, const Corpus& corpus, int top_n, const EmbedConfig& cfg) {
  params.validate();
  if (corpus.num_docs() == 0) throw InvalidParameter("topic_report: empty corpus");
  if (params.vocab_size() != corpus.vocab_size()) throw InvalidParameter("topic_report: V mismatch");
  EmbedConfig predict_cfg = cfg;
  predict_cfg.joint_label_weight = 0.0;
  const int k_topics = params.num_topics();
  const int vocab = params.vocab_size();

  Vector weights = Vector::Zero(k_topics);
  for (std::size_t d = 0; d < corpus.num_docs(); ++d) weights += map_embed(corpus.doc(d), params, predict_cfg).values();
  weights /= static_cast<double>(corpus.num_docs());

  TopicReport report;
  report.topic_weights.assign(weights.data(), weights.data() + k_topics);
  if (corpus.has_labels() && corpus.num_labels() == params.num_labels()) {
    report.label_names = corpus.label_names();
  } else {
    for (int l = 0; l < params.num_labels(); ++l) report.label_names.push_back("y" + std::to_string(l));
  }
  std::vector<double> denom(static_cast<std::size_t>(vocab), 0.0);
  for (int v = 0; v < vocab; ++v) {
    for (int k = 0; k < k_topics; ++k) denom[static_cast<std::size_t>(v)] += params.phi(k, v) * weights[k];
  }
  for (int k = 0; k < k_topics; ++k) {
    TopicSummary s;
    s.topic = k;
    std::vector<double> word_prob(static_cast<std::size_t>(vocab));
    std::vector<double> topic_prob(static_cast<std::size_t>(vocab));
    for (int v = 0; v < vocab; ++v) {
      word_prob[static_cast<std::size_t>(v)] = params.phi(k, v);
      const double dv = denom[static_cast<std::size_t>(v)];
      topic_prob[static_cast<std::size_t>(v)] = dv > 0.0 ? params.phi(k, v) * weights[k] / dv : 0.0;
    }
    s.top_by_word_prob = top_entries(word_prob, top_n);
    s.top_by_topic_prob = top_entries(topic_prob, top_n);
    for (int l = 0; l < params.num_labels(); ++l) s.eta.push_back(params.eta(l, k));
    report.topics.push_back(std::move(s));
  }
  return report;
}

std::string topic_report_text(const TopicReport& report) {
  std::ostringstream out;
  char buf[64];
  for (const TopicSummary& s : report.topics) {
    std::snprintf(buf, sizeof(buf), "%.4f", report.topic_weights[static_cast<std::size_t>(s.topic)]);
    out << "topic " << s.topic << "  weight " << buf;
    for (std::size_t l = 0; l < s.eta.size(); ++l) {
      std::snprintf(buf, sizeof(buf), "%+.3f", s.eta[l]);
      out << "  eta[" << report.label_names[l] << "]=" << buf;
    }
    out << "\n  p(word|topic):";
    for (const auto& [v, p] : s.top_by_word_prob) {
      std::snprintf(buf, sizeof(buf), "%.3f", p);
      out << "  " << v << " (" << buf << ")";
    }
    out << "\n  p(topic|word):";
    for (const auto& [v, p] : s.top_by_topic_prob) {
      std::snprintf(buf, sizeof(buf), "%.3f", p);
      out << "  " << v << " (" << buf << ")";
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void check_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\r\n") != std::string::npos) {
    throw InvalidParameter(std::string("metrics: ") + what + " '" + s + "' contains a comma or newline");
  }
}

std::string opt9(const std::optional<double>& x) { return x ? format_double9(*x) : "NA"; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_real(const std::string& s, int line_no) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(s, &pos);
    if (pos == s.size()) return x;
  } catch (const std::exception&) {
  }
  throw DataError("metrics: line " + std::to_string(line_no) + ": bad number '" + s + "'");
}

std::optional<double> parse_opt(const std::string& s, int line_no) {
  if (s == "NA") return std::nullopt;
  return parse_real(s, line_no);
}

const char* const kFixedColumns[] = {"method",       "lambda", "K", "map_mode", "split", "data_nll_per_token",
                                     "label_nll_per_doc", "auc_mean"};

}  // namespace

std::string metrics_to_csv(const std::vector<MetricsRecord>& records) {
  const std::vector<std::string> names = records.empty() ? std::vector<std::string>{} : records.front().label_names;
  std::ostringstream out;
  for (std::size_t i = 0; i < std::size(kFixedColumns); ++i) out << (i ? "," : "") << kFixedColumns[i];
  for (const std::string& n : names) {
    check_field(n, "label name");
    out << ",auc_" << n;
  }
  out << '\n';
  for (const MetricsRecord& r : records) {
    if (r.label_names != names || r.auc_per_label.size() != names.size()) {
      throw InvalidParameter("metrics: records disagree on label columns");
    }
    check_field(r.method, "method");
    check_field(r.split, "split");
    out << r.method << ',' << format_double9(r.lambda) << ',' << r.num_topics << ',' << to_string(r.map_mode)
        << ',' << r.split << ',' << format_double9(r.data_nll_per_token) << ','
        << format_double9(r.label_nll_per_doc) << ',' << opt9(r.auc_mean);
    for (const auto& a : r.auc_per_label) out << ',' << opt9(a);
    out << '\n';
  }
  return out.str();
}

std::vector<MetricsRecord> metrics_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line)) throw DataError("metrics: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv(line);
  const std::size_t fixed = std::size(kFixedColumns);
  if (header.size() < fixed) throw DataError("metrics: header has too few columns");
  for (std::size_t i = 0; i < fixed; ++i) {
    if (header[i] != kFixedColumns[i]) {
      throw DataError(std::string("metrics: missing column '") + kFixedColumns[i] + "'");
    }
  }
  std::vector<std::string> names;
  for (std::size_t i = fixed; i < header.size(); ++i) {
    if (header[i].rfind("auc_", 0) != 0) throw DataError("metrics: unexpected column '" + header[i] + "'");
    names.push_back(header[i].substr(4));
  }
  std::vector<MetricsRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != header.size()) {
      throw DataError("metrics: line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields");
    }
    MetricsRecord r;
    r.method = f[0];
    r.lambda = parse_real(f[1], line_no);
    r.num_topics = static_cast<int>(parse_real(f[2], line_no));
    try {
      r.map_mode = parse_eval_mode(f[3]);
    } catch (const InvalidParameter& e) {
      throw DataError("metrics: line " + std::to_string(line_no) + ": " + e.what());
    }
    r.split = f[4];
    r.data_nll_per_token = parse_real(f[5], line_no);
    r.label_nll_per_doc = parse_real(f[6], line_no);
    r.auc_mean = parse_opt(f[7], line_no);
    for (std::size_t i = fixed; i < f.size(); ++i) r.auc_per_label.push_back(parse_opt(f[i], line_no));
    r.label_names = names;
    records.push_back(std::move(r));
  }
  return records;
}

nlohmann::json metrics_to_json(const std::vector<MetricsRecord>& records) {
  // Values pass through the same 9-digit text as the CSV so both files carry
  // identical numbers.
  auto num = [](double x) { return nlohmann::json(std::stod(format_double9(x))); };
  auto opt = [&](const std::optional<double>& x) { return x ? num(*x) : nlohmann::json(nullptr); };
  nlohmann::json arr = nlohmann::json::array();
  for (const MetricsRecord& r : records) {
    nlohmann::json auc_map = nlohmann::json::object();
    nlohmann::json o;
    o["method"] = r.method;
    o["lambda"] = num(r.lambda);
    o["K"] = r.num_topics;
    o["map_mode"] = to_string(r.map_mode);
    o["split"] = r.split;
    o["data_nll_per_token"] = num(r.data_nll_per_token);
    o["label_nll_per_doc"] = num(r.label_nll_per_doc);
    o["auc_mean"] = opt(r.auc_mean);
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t l = 0; l < r.auc_per_label.size(); ++l) {
      per.push_back({{"label", l < r.label_names.size() ? r.label_names[l] : std::to_string(l)},
                     {"auc", opt(r.auc_per_label[l])}});
    }
    o["auc_per_label"] = per;
    arr.push_back(o);
  }
  return nlohmann::json{{"records", arr}};
}

std::vector<MetricsRecord> metrics_from_json(const nlohmann::json& j) {
  std::vector<MetricsRecord> out;
  try {
    for (const auto& o : j.at("records")) {
      MetricsRecord r;
      r.method = o.at("method").get<std::string>();
      r.lambda = o.at("lambda").get<double>();
      r.num_topics = o.at("K").get<int>();
      r.map_mode = parse_eval_mode(o.at("map_mode").get<std::string>());
      r.split = o.at("split").get<std::string>();
      r.data_nll_per_token = o.at("data_nll_per_token").get<double>();
      r.label_nll_per_doc = o.at("label_nll_per_doc").get<double>();
      if (!o.at("auc_mean").is_null()) r.auc_mean = o.at("auc_mean").get<double>();
      for (const auto& a : o.at("auc_per_label")) {
        r.label_names.push_back(a.at("label").get<std::string>());
        if (a.at("auc").is_null()) {
          r.auc_per_label.emplace_back();
        } else {
          r.auc_per_label.emplace_back(a.at("auc").get<double>());
        }
      }
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics json: ") + e.what());
  } catch (const InvalidParameter& e) {
    throw DataError(std::string("metrics json: ") + e.what());
  }
  return out;
}

}  // namespace pclda
