#include "pclda/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "pclda/errors.hpp"
#include "pclda/numeric.hpp"

namespace pclda {

int SparseDoc::total() const { return std::accumulate(counts.begin(), counts.end(), 0); }

SparseDoc make_doc(std::vector<std::pair<int, int>> entries) {
  std::map<int, int> merged;
  for (auto [id, count] : entries) merged[id] += count;
  SparseDoc doc;
  for (auto [id, count] : merged) {
    if (count == 0) continue;
    doc.ids.push_back(id);
    doc.counts.push_back(count);
  }
  return doc;
}

namespace {

std::vector<std::string> default_doc_ids(std::size_t n) {
  std::vector<std::string> ids(n);
  for (std::size_t d = 0; d < n; ++d) ids[d] = std::to_string(d);
  return ids;
}

}  // namespace

Corpus::Corpus(int vocab_size, std::vector<SparseDoc> docs)
    : Corpus(vocab_size, std::move(docs), std::nullopt, {}, {}) {}

Corpus::Corpus(int vocab_size, std::vector<SparseDoc> docs, LabelMatrix labels,
               std::vector<std::string> label_names)
    : Corpus(vocab_size, std::move(docs), std::optional<LabelMatrix>(std::move(labels)),
             std::move(label_names), {}) {}

Corpus::Corpus(int vocab_size, std::vector<SparseDoc> docs,
               std::optional<LabelMatrix> labels, std::vector<std::string> label_names,
               std::vector<std::string> doc_ids)
    : vocab_size_(vocab_size),
      docs_(std::move(docs)),
      labels_(std::move(labels)),
      label_names_(std::move(label_names)),
      doc_ids_(std::move(doc_ids)) {
  if (vocab_size_ < 1) throw InvalidParameter("corpus: vocab_size must be positive");
  if (doc_ids_.empty()) doc_ids_ = default_doc_ids(docs_.size());
  if (doc_ids_.size() != docs_.size()) {
    throw InvalidParameter("corpus: doc_ids size does not match document count");
  }
  for (std::size_t d = 0; d < docs_.size(); ++d) {
    const SparseDoc& doc = docs_[d];
    if (doc.ids.size() != doc.counts.size()) {
      throw InvalidParameter("corpus: document " + std::to_string(d) + " has mismatched ids/counts");
    }
    if (doc.ids.empty()) {
      throw InvalidParameter("corpus: document " + std::to_string(d) + " is empty");
    }
    for (std::size_t j = 0; j < doc.ids.size(); ++j) {
      if (doc.ids[j] < 0 || doc.ids[j] >= vocab_size_) {
        throw InvalidParameter("corpus: document " + std::to_string(d) + " has token id " +
                               std::to_string(doc.ids[j]) + " outside [0, " +
                               std::to_string(vocab_size_) + ")");
      }
      if (j > 0 && doc.ids[j] <= doc.ids[j - 1]) {
        throw InvalidParameter("corpus: document " + std::to_string(d) +
                               " token ids are not strictly ascending");
      }
      if (doc.counts[j] < 1) {
        throw InvalidParameter("corpus: document " + std::to_string(d) + " has a count < 1");
      }
    }
    total_tokens_ += doc.total();
  }
  if (labels_) {
    if (static_cast<std::size_t>(labels_->rows()) != docs_.size()) {
      throw InvalidParameter("corpus: label rows (" + std::to_string(labels_->rows()) +
                             ") != documents (" + std::to_string(docs_.size()) + ")");
    }
    if (labels_->cols() < 1) throw InvalidParameter("corpus: labels need at least one column");
    if ((labels_->array() != 0 && labels_->array() != 1).any()) {
      throw InvalidParameter("corpus: labels must be 0 or 1");
    }
    if (label_names_.empty()) {
      for (int l = 0; l < labels_->cols(); ++l) label_names_.push_back("y" + std::to_string(l));
    }
    if (static_cast<Eigen::Index>(label_names_.size()) != labels_->cols()) {
      throw InvalidParameter("corpus: label_names size does not match label columns");
    }
  } else if (!label_names_.empty()) {
    throw InvalidParameter("corpus: label names given without labels");
  }
}

int Corpus::num_labels() const { return labels_ ? static_cast<int>(labels_->cols()) : 0; }

const LabelMatrix& Corpus::labels() const {
  if (!labels_) throw InvalidParameter("corpus has no labels");
  return *labels_;
}

std::span<const int> Corpus::label_row(std::size_t d) const {
  const LabelMatrix& y = labels();
  return {y.data() + d * static_cast<std::size_t>(y.cols()), static_cast<std::size_t>(y.cols())};
}

Corpus Corpus::select(std::span<const std::size_t> indices) const {
  std::vector<SparseDoc> docs;
  std::vector<std::string> ids;
  docs.reserve(indices.size());
  ids.reserve(indices.size());
  std::optional<LabelMatrix> labels;
  if (labels_) labels = LabelMatrix(static_cast<Eigen::Index>(indices.size()), labels_->cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t d = indices[i];
    if (d >= docs_.size()) throw InvalidParameter("corpus: select index out of range");
    docs.push_back(docs_[d]);
    ids.push_back(doc_ids_[d]);
    if (labels) labels->row(static_cast<Eigen::Index>(i)) = labels_->row(static_cast<Eigen::Index>(d));
  }
  return Corpus(vocab_size_, std::move(docs), std::move(labels), label_names_, std::move(ids));
}

Corpus Corpus::with_label_permutation(std::span<const int> perm) const {
  const LabelMatrix& y = labels();
  if (static_cast<Eigen::Index>(perm.size()) != y.cols()) {
    throw InvalidParameter("corpus: label permutation has wrong length");
  }
  LabelMatrix out(y.rows(), y.cols());
  std::vector<std::string> names(perm.size());
  for (std::size_t l = 0; l < perm.size(); ++l) {
    out.col(static_cast<Eigen::Index>(l)) = y.col(perm[l]);
    names[l] = label_names_[static_cast<std::size_t>(perm[l])];
  }
  return Corpus(vocab_size_, docs_, std::move(out), std::move(names), doc_ids_);
}

Corpus Corpus::without_labels() const {
  return Corpus(vocab_size_, docs_, std::nullopt, {}, doc_ids_);
}

bool operator==(const Corpus& a, const Corpus& b) {
  if (a.vocab_size_ != b.vocab_size_ || a.docs_ != b.docs_ || a.doc_ids_ != b.doc_ids_ ||
      a.label_names_ != b.label_names_ || a.labels_.has_value() != b.labels_.has_value()) {
    return false;
  }
  return !a.labels_ || *a.labels_ == *b.labels_;
}

void TopicModelParams::validate() const {
  if (phi.rows() < 1 || phi.cols() < 1) throw InvalidParameter("params: phi must be non-empty");
  for (Eigen::Index k = 0; k < phi.rows(); ++k) {
    double sum = 0.0;
    for (Eigen::Index v = 0; v < phi.cols(); ++v) {
      const double p = phi(k, v);
      if (!(p > 0.0) || !std::isfinite(p)) {
        throw InvalidParameter("params: phi(" + std::to_string(k) + "," + std::to_string(v) +
                               ") is not strictly positive");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw InvalidParameter("params: phi row " + std::to_string(k) + " does not sum to 1");
    }
  }
  if (eta.cols() != phi.rows()) throw InvalidParameter("params: eta must be L x K");
  if (!eta.allFinite()) throw InvalidParameter("params: eta must be finite");
  if (intercept.size() != 0 && intercept.size() != eta.rows()) {
    throw InvalidParameter("params: intercept must have one entry per label");
  }
  if (!intercept.allFinite()) throw InvalidParameter("params: intercept must be finite");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidParameter("params: alpha must be > 0");
}

DocTopicVector::DocTopicVector(Vector pi) : pi_(std::move(pi)) {
  if (pi_.size() < 1) throw InvalidParameter("topic vector must be non-empty");
  if ((pi_.array() < 0.0).any() || !pi_.allFinite()) {
    throw InvalidParameter("topic vector entries must be finite and >= 0");
  }
  if (std::abs(pi_.sum() - 1.0) > 1e-9) throw InvalidParameter("topic vector must sum to 1");
}

DocTopicVector DocTopicVector::uniform(int k) {
  return DocTopicVector(Vector::Constant(k, 1.0 / k));
}

namespace detail {

double data_loglik(const SparseDoc& x, std::span<const double> pi, const Matrix& phi) {
  const std::size_t k_topics = pi.size();
  double total = 0.0;
  for (std::size_t j = 0; j < x.ids.size(); ++j) {
    const int v = x.ids[j];
    double mix = 0.0;
    for (std::size_t k = 0; k < k_topics; ++k) mix += pi[k] * phi(static_cast<Eigen::Index>(k), v);
    if (!(mix > 0.0)) {
      throw InvalidParameter("mixture probability underflow for observed word " + std::to_string(v));
    }
    total += x.counts[j] * std::log(mix);
  }
  return total;
}

double label_logit(int l, std::span<const double> pi, const Matrix& eta, const Vector& intercept) {
  double z = intercept.size() > 0 ? intercept[l] : 0.0;
  for (std::size_t k = 0; k < pi.size(); ++k) z += eta(l, static_cast<Eigen::Index>(k)) * pi[k];
  return z;
}

double label_loglik(std::span<const int> y, std::span<const double> pi, const Matrix& eta,
                    const Vector& intercept) {
  double total = 0.0;
  for (std::size_t l = 0; l < y.size(); ++l) {
    const double z = label_logit(static_cast<int>(l), pi, eta, intercept);
    total += y[l] ? log_sigmoid(z) : log_sigmoid(-z);
  }
  return total;
}

double dirichlet_logpdf(std::span<const double> pi, double alpha) {
  const double k = static_cast<double>(pi.size());
  double log_norm = std::lgamma(k * alpha) - k * std::lgamma(alpha);
  if (alpha == 1.0) return log_norm;
  double sum_log = 0.0;
  for (double p : pi) {
    if (p <= 0.0) {
      if (alpha < 1.0) throw DomainError("dirichlet_logpdf: zero entry with alpha < 1");
      return -std::numeric_limits<double>::infinity();
    }
    sum_log += std::log(p);
  }
  return log_norm + (alpha - 1.0) * sum_log;
}

}  // namespace detail

double doc_data_loglik(const SparseDoc& x, const DocTopicVector& pi, const TopicModelParams& params) {
  if (pi.size() != params.num_topics()) throw InvalidParameter("doc_data_loglik: K mismatch");
  for (int v : x.ids) {
    if (v < 0 || v >= params.vocab_size()) throw InvalidParameter("doc_data_loglik: token id out of range");
  }
  return detail::data_loglik(x, pi.span(), params.phi);
}

double doc_label_loglik(std::span<const int> y, const DocTopicVector& pi,
                        const TopicModelParams& params) {
  if (pi.size() != params.num_topics()) throw InvalidParameter("doc_label_loglik: K mismatch");
  if (static_cast<int>(y.size()) != params.num_labels() || y.empty()) {
    throw InvalidParameter("doc_label_loglik: label count mismatch");
  }
  return detail::label_loglik(y, pi.span(), params.eta, params.intercept);
}

double dirichlet_logpdf(const DocTopicVector& pi, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("dirichlet_logpdf: alpha must be > 0");
  return detail::dirichlet_logpdf(pi.span(), alpha);
}

}  // namespace pclda
