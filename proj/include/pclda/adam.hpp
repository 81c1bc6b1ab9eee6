#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pclda {

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

// Adam with bias-corrected moments:
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   x <- x - lr * m_hat / (sqrt(v_hat) + eps_hat)
class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg);

  void step(std::span<double> params, std::span<const double> grad);
  long long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long long t_ = 0;
};

}  // namespace pclda
