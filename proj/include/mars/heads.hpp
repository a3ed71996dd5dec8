#pragma once

#include <array>
#include <vector>

#include "mars/numerics.hpp"
#include "mars/rng.hpp"

// Scoring heads: inner-product recommendation with pairwise ranking loss,
// and a small MLP predicting the price-movement probability, combined by a
// loss weight alpha plus L2 regularization.

namespace mars::heads {

// Mean over modalities of an item's final representations.
num::Tensor item_final_embedding(const std::array<num::Tensor, 4>& modal);

num::Tensor rec_score(const num::Tensor& e_u, const num::Tensor& e_i);

// mean of -ln sigmoid(pos - neg) over aligned score vectors
num::Tensor bpr_loss(const num::Tensor& pos_scores,
                     const num::Tensor& neg_scores);

struct PriceHead {
  num::Tensor w1;  // d x 2*L*d
  num::Tensor b1;  // d
  num::Tensor w2;  // d
  num::Tensor b2;  // scalar

  std::vector<num::Tensor> trainable() const { return {w1, b1, w2, b2}; }
  // weight matrices only; biases stay unregularized
  std::vector<num::Tensor> regularized() const { return {w1, w2}; }
};

PriceHead init_price_head(int ld, int hidden, Rng& rng);

// sigmoid(MLP(e_u || e_i)), in (0,1)
num::Tensor price_predict(const num::Tensor& e_u, const num::Tensor& e_i,
                          const PriceHead& head);

// mean binary cross entropy; predictions clamped away from {0,1} at 1e-12
num::Tensor bce_loss(const num::Tensor& predictions, const num::Tensor& labels);

// (1-alpha)*l_rec + alpha*l_price + lambda*sum of squared parameter entries
num::Tensor combined_loss(const num::Tensor& l_rec, const num::Tensor& l_price,
                          double alpha, double lambda,
                          const std::vector<num::Tensor>& reg_params);

}  // namespace mars::heads
