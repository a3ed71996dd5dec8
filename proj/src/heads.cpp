#include "mars/heads.hpp"

#include <array>
#include <cmath>

#include "mars/errors.hpp"

namespace mars::heads {

using num::Tensor;

num::Tensor item_final_embedding(const std::array<num::Tensor, 4>& modal) {
  Tensor sum = num::add(modal[0], modal[1]);
  sum = num::add(sum, modal[2]);
  sum = num::add(sum, modal[3]);
  return num::scalar_mul(sum, 0.25);
}

num::Tensor rec_score(const num::Tensor& e_u, const num::Tensor& e_i) {
  return num::inner(e_u, e_i);
}

num::Tensor bpr_loss(const num::Tensor& pos_scores,
                     const num::Tensor& neg_scores) {
  if (pos_scores.shape() != neg_scores.shape() || pos_scores.rank() != 1) {
    throw DataError("bpr: score vectors must be 1-D and aligned");
  }
  const Tensor diff = num::add(pos_scores, num::scalar_mul(neg_scores, -1.0));
  const Tensor sig = num::clamp(num::sigmoid(diff), 1e-12, 1.0);
  return num::scalar_mul(num::mean(num::log(sig)), -1.0);
}

PriceHead init_price_head(int ld, int hidden, Rng& rng) {
  PriceHead head;
  const int in = 2 * ld;
  const double a1 = std::sqrt(6.0 / (hidden + in));
  std::vector<double> w1(static_cast<std::size_t>(hidden) * in);
  for (auto& x : w1) x = rng.uniform(-a1, a1);
  head.w1 = Tensor::matrix(hidden, in, std::move(w1), true);
  head.b1 = Tensor::zeros({hidden}, true);
  const double a2 = std::sqrt(6.0 / (hidden + 1));
  std::vector<double> w2(static_cast<std::size_t>(hidden));
  for (auto& x : w2) x = rng.uniform(-a2, a2);
  head.w2 = Tensor::vector(std::move(w2), true);
  head.b2 = Tensor::zeros({}, true);
  return head;
}

num::Tensor price_predict(const num::Tensor& e_u, const num::Tensor& e_i,
                          const PriceHead& head) {
  const Tensor x = num::concat({e_u, e_i});
  const Tensor h = num::leaky_relu(num::add(num::matmul(head.w1, x), head.b1));
  const Tensor logit = num::add(num::inner(head.w2, h), head.b2);
  return num::sigmoid(logit);
}

num::Tensor bce_loss(const num::Tensor& predictions,
                     const num::Tensor& labels) {
  if (predictions.shape() != labels.shape() || predictions.rank() != 1) {
    throw DataError("bce: predictions and labels must be 1-D and aligned");
  }
  const Tensor p = num::clamp(predictions, 1e-12, 1.0 - 1e-12);
  const Tensor one_minus =
      num::add(Tensor::full(p.shape(), 1.0), num::scalar_mul(p, -1.0));
  const Tensor flipped =
      num::add(Tensor::full(labels.shape(), 1.0), num::scalar_mul(labels, -1.0));
  const Tensor per_example = num::add(num::mul(labels, num::log(p)),
                                      num::mul(flipped, num::log(one_minus)));
  return num::scalar_mul(num::mean(per_example), -1.0);
}

num::Tensor combined_loss(const num::Tensor& l_rec, const num::Tensor& l_price,
                          double alpha, double lambda,
                          const std::vector<num::Tensor>& reg_params) {
  if (alpha < 0.0 || alpha > 1.0) throw DataError("loss: alpha outside [0,1]");
  if (lambda < 0.0) throw DataError("loss: negative regularization weight");
  Tensor total = num::add(num::scalar_mul(l_rec, 1.0 - alpha),
                          num::scalar_mul(l_price, alpha));
  if (lambda > 0.0 && !reg_params.empty()) {
    Tensor sq;
    for (const auto& p : reg_params) {
      const Tensor s = num::scalar_mul(num::mean(num::mul(p, p)),
                                       static_cast<double>(p.size()));
      sq = sq.defined() ? num::add(sq, s) : s;
    }
    total = num::add(total, num::scalar_mul(sq, lambda));
  }
  return total;
}

}  // namespace mars::heads
