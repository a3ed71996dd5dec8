#include "mars/fusion.hpp"

#include <cmath>

#include "mars/errors.hpp"

namespace mars::fusion {

using num::Tensor;

namespace {

Tensor glorot(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / (rows + cols));
  std::vector<double> w(static_cast<std::size_t>(rows) * cols);
  for (auto& x : w) x = rng.uniform(-a, a);
  return Tensor::matrix(rows, cols, std::move(w), true);
}

}  // namespace

FusionWeights init_fusion_weights(int ld, int d_k, Rng& rng) {
  FusionWeights w;
  w.wq = glorot(d_k, ld, rng);
  w.wk = glorot(d_k, ld, rng);
  w.wv = glorot(ld, ld, rng);
  return w;
}

num::Tensor fuse_query(const std::array<num::Tensor, 4>& user_modal) {
  const auto n = user_modal[0].size();
  for (const auto& e : user_modal) {
    if (e.size() != n) {
      throw DataError("fusion: modality embeddings differ in length");
    }
  }
  Tensor sum = num::add(user_modal[0], user_modal[1]);
  sum = num::add(sum, user_modal[2]);
  sum = num::add(sum, user_modal[3]);
  return num::scalar_mul(sum, 0.25);
}

std::array<num::Tensor, 4> build_keys_values(
    const std::array<const std::vector<num::Tensor>*, 4>& item_modal,
    const std::vector<int>& positive_items) {
  if (positive_items.empty()) {
    throw DataError("fusion: empty positive set for keys/values");
  }
  std::array<Tensor, 4> slots;
  const double inv = 1.0 / static_cast<double>(positive_items.size());
  const Tensor mean_weights =
      Tensor::full({static_cast<int>(positive_items.size())}, inv);
  for (int m = 0; m < 4; ++m) {
    std::vector<Tensor> rows;
    rows.reserve(positive_items.size());
    for (int i : positive_items) {
      const Tensor& e = (*item_modal[m])[i];
      if (!e.defined()) {
        throw DataError("fusion: positive item " + std::to_string(i) +
                        " has no representation");
      }
      rows.push_back(e);
    }
    slots[m] = positive_items.size() == 1
                   ? rows[0]
                   : num::matmul(mean_weights, num::stack_rows(rows));
  }
  return slots;
}

FusionOutput cross_attend(const num::Tensor& query_input,
                          const std::array<num::Tensor, 4>& slots,
                          const FusionWeights& w) {
  const int d_k = w.wq.shape()[0];
  const Tensor q = num::matmul(w.wq, query_input);
  std::vector<Tensor> raw;
  std::vector<Tensor> values;
  raw.reserve(4);
  values.reserve(4);
  for (int m = 0; m < 4; ++m) {
    const Tensor k = num::matmul(w.wk, slots[m]);
    raw.push_back(num::inner(q, k));
    values.push_back(num::matmul(w.wv, slots[m]));
  }
  FusionOutput out;
  out.scores = num::scalar_mul(num::concat(raw),
                               1.0 / std::sqrt(static_cast<double>(d_k)));
  out.weights = num::softmax(out.scores);
  out.e_u = num::matmul(out.weights, num::stack_rows(values));
  return out;
}

}  // namespace mars::fusion
