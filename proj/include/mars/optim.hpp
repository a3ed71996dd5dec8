#pragma once

#include <vector>

#include "mars/numerics.hpp"

namespace mars::num {

// Adam over leaf tensors. step() consumes the gradients accumulated by
// backward(); call zero_grad() before the next pass.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 0.01,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Scales gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_gradients(const std::vector<Tensor>& params, double max_norm);

}  // namespace mars::num
