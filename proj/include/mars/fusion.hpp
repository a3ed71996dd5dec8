#pragma once

#include <array>
#include <vector>

#include "mars/numerics.hpp"
#include "mars/rng.hpp"

// User-wise cross-modal attention: the user's averaged representation
// queries four modality slots built from the batch's positive items, giving
// the fused user embedding and per-modality attention scores.

namespace mars::fusion {

struct FusionWeights {
  num::Tensor wq;  // d_k x L*d
  num::Tensor wk;  // d_k x L*d
  num::Tensor wv;  // L*d x L*d

  std::vector<num::Tensor> trainable() const { return {wq, wk, wv}; }
};

FusionWeights init_fusion_weights(int ld, int d_k, Rng& rng);

// Elementwise mean of the four modality embeddings of one user.
num::Tensor fuse_query(const std::array<num::Tensor, 4>& user_modal);

// Per modality, the mean item representation over the positive items of the
// batch (training) or the user's own training positives (evaluation).
std::array<num::Tensor, 4> build_keys_values(
    const std::array<const std::vector<num::Tensor>*, 4>& item_modal,
    const std::vector<int>& positive_items);

struct FusionOutput {
  num::Tensor e_u;      // L*d fused user embedding
  num::Tensor scores;   // 4 raw attention scores, may be negative
  num::Tensor weights;  // softmax(scores), sums to 1
};

FusionOutput cross_attend(const num::Tensor& query_input,
                          const std::array<num::Tensor, 4>& slots,
                          const FusionWeights& w);

}  // namespace mars::fusion
