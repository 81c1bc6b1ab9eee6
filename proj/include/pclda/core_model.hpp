#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pclda {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using LabelMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Bag of words: parallel arrays of strictly ascending token ids and their
// positive counts.
struct SparseDoc {
  std::vector<int> ids;
  std::vector<int> counts;

  int total() const;
  std::size_t nnz() const { return ids.size(); }

  friend bool operator==(const SparseDoc&, const SparseDoc&) = default;
};

// Builds a SparseDoc from (id, count) pairs in any order; duplicate ids are
// merged and zero counts dropped.
SparseDoc make_doc(std::vector<std::pair<int, int>> entries);

// Document collection over a fixed vocabulary with optional binary labels.
// Immutable once constructed; the constructor validates every invariant.
class Corpus {
 public:
  Corpus(int vocab_size, std::vector<SparseDoc> docs);
  Corpus(int vocab_size, std::vector<SparseDoc> docs, LabelMatrix labels,
         std::vector<std::string> label_names);
  Corpus(int vocab_size, std::vector<SparseDoc> docs,
         std::optional<LabelMatrix> labels, std::vector<std::string> label_names,
         std::vector<std::string> doc_ids);

  int vocab_size() const { return vocab_size_; }
  std::size_t num_docs() const { return docs_.size(); }
  const SparseDoc& doc(std::size_t d) const { return docs_[d]; }
  const std::vector<SparseDoc>& docs() const { return docs_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  long long total_tokens() const { return total_tokens_; }

  bool has_labels() const { return labels_.has_value(); }
  int num_labels() const;
  const LabelMatrix& labels() const;
  std::span<const int> label_row(std::size_t d) const;
  const std::vector<std::string>& label_names() const { return label_names_; }

  // Sub-corpus with the given documents, in the given order; labels follow.
  Corpus select(std::span<const std::size_t> indices) const;
  // Same documents with the label columns reordered by `perm`.
  Corpus with_label_permutation(std::span<const int> perm) const;
  Corpus without_labels() const;

  friend bool operator==(const Corpus& a, const Corpus& b);

 private:
  int vocab_size_;
  std::vector<SparseDoc> docs_;
  std::optional<LabelMatrix> labels_;
  std::vector<std::string> label_names_;
  std::vector<std::string> doc_ids_;
  long long total_tokens_ = 0;
};

// Topic-word rows phi (K x V), regression weights eta (L x K), symmetric
// Dirichlet concentration alpha. `intercept` is either empty (no intercept,
// the default) or holds one offset per label.
struct TopicModelParams {
  Matrix phi;
  Matrix eta;
  double alpha = 1.1;
  Vector intercept;

  int num_topics() const { return static_cast<int>(phi.rows()); }
  int vocab_size() const { return static_cast<int>(phi.cols()); }
  int num_labels() const { return static_cast<int>(eta.rows()); }
  bool has_intercept() const { return intercept.size() > 0; }

  // Throws InvalidParameter unless rows of phi are strictly positive and sum
  // to one within 1e-9, eta is finite and shaped L x K, and alpha > 0.
  void validate() const;
};

// A point on the K-simplex.
class DocTopicVector {
 public:
  // Throws InvalidParameter if entries are negative or do not sum to 1
  // within 1e-9.
  explicit DocTopicVector(Vector pi);
  static DocTopicVector uniform(int k);

  const Vector& values() const { return pi_; }
  int size() const { return static_cast<int>(pi_.size()); }
  double operator[](int k) const { return pi_[k]; }
  std::span<const double> span() const { return {pi_.data(), static_cast<std::size_t>(pi_.size())}; }

 private:
  Vector pi_;
};

// sum_v x_v log(sum_k pi_k phi_kv). The multinomial coefficient is excluded
// throughout the library; it is constant in every trainable quantity.
double doc_data_loglik(const SparseDoc& x, const DocTopicVector& pi,
                       const TopicModelParams& params);

// sum_l y_l log s(z_l) + (1 - y_l) log(1 - s(z_l)) with z_l = eta_l . pi
// (+ intercept_l when enabled).
double doc_label_loglik(std::span<const int> y, const DocTopicVector& pi,
                        const TopicModelParams& params);

// Symmetric Dirichlet log-density including the normalizer.
double dirichlet_logpdf(const DocTopicVector& pi, double alpha);

namespace detail {

// Span-level kernels shared by the embedding and gradient code. Callers
// guarantee shapes.
double data_loglik(const SparseDoc& x, std::span<const double> pi, const Matrix& phi);
double label_loglik(std::span<const int> y, std::span<const double> pi,
                    const Matrix& eta, const Vector& intercept);
double label_logit(int l, std::span<const double> pi, const Matrix& eta,
                   const Vector& intercept);
double dirichlet_logpdf(std::span<const double> pi, double alpha);

}  // namespace detail

}  // namespace pclda
