#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pclda {

// log(sigmoid(z)) without overflow for large |z|.
inline double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Element-wise compensated accumulation of equally sized buffers.
class CompensatedBuffer {
 public:
  explicit CompensatedBuffer(std::size_t n) : sum_(n, 0.0), comp_(n, 0.0) {}

  void add(std::span<const double> x) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = sum_[i];
      const double t = s + x[i];
      if (std::abs(s) >= std::abs(x[i])) {
        comp_[i] += (s - t) + x[i];
      } else {
        comp_[i] += (x[i] - t) + s;
      }
      sum_[i] = t;
    }
  }

  void add_at(std::size_t i, double x) {
    const double s = sum_[i];
    const double t = s + x;
    if (std::abs(s) >= std::abs(x)) {
      comp_[i] += (s - t) + x;
    } else {
      comp_[i] += (x - t) + s;
    }
    sum_[i] = t;
  }

  std::vector<double> values() const {
    std::vector<double> out(sum_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sum_[i] + comp_[i];
    return out;
  }

 private:
  std::vector<double> sum_;
  std::vector<double> comp_;
};

}  // namespace pclda
