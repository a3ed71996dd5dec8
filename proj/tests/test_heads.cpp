#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>

#include "mars/errors.hpp"
#include "mars/heads.hpp"

using namespace mars;
using namespace mars::heads;
using num::Tensor;

namespace {

Tensor vec(std::vector<double> v, bool rg = false) {
  return Tensor::vector(std::move(v), rg);
}

}  // namespace

TEST_CASE("item embedding is the exact mean over modalities") {
  std::array<Tensor, 4> modal = {vec({1, 2}), vec({3, 6}), vec({5, -4}),
                                 vec({-1, 0})};
  auto e = item_final_embedding(modal);
  CHECK(e[0] == 2.0);
  CHECK(e[1] == 1.0);
}

TEST_CASE("recommendation score is the inner product") {
  CHECK(rec_score(vec({1, 0}), vec({0, 1})).item() == 0.0);
  CHECK(rec_score(vec({1, 0}), vec({1, 0})).item() == 1.0);
  CHECK(rec_score(vec({1, 2}), vec({3, -1})).item() == 1.0);
  CHECK_THROWS(rec_score(vec({1, 2}), vec({1, 2, 3})));
}

TEST_CASE("score is linear in either argument") {
  auto u = vec({0.3, -1.2, 2.0});
  auto i = vec({1.5, 0.4, -0.7});
  const double s = rec_score(u, i).item();
  auto scaled = vec({0.3 * 3.5, -1.2 * 3.5, 2.0 * 3.5});
  CHECK(rec_score(scaled, i).item() == doctest::Approx(3.5 * s).epsilon(1e-12));
  auto iscaled = vec({1.5 * -2.0, 0.4 * -2.0, -0.7 * -2.0});
  CHECK(rec_score(u, iscaled).item() ==
        doctest::Approx(-2.0 * s).epsilon(1e-12));
}

TEST_CASE("pairwise ranking loss values") {
  // equal scores: -ln(1/2) per pair
  auto l = bpr_loss(vec({1.0, -2.0}), vec({1.0, -2.0}));
  CHECK(l.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // margin of one: ln(1 + e^-1)
  auto l1 = bpr_loss(vec({1.0}), vec({0.0}));
  CHECK(l1.item() ==
        doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(l1.item() == doctest::Approx(0.3133).epsilon(1e-3));

  // huge margin drives the loss to zero
  auto l2 = bpr_loss(vec({100.0}), vec({0.0}));
  CHECK(l2.item() >= 0.0);
  CHECK(l2.item() < 1e-12);

  // averaged, not summed
  auto lm = bpr_loss(vec({1.0, 1.0, 1.0}), vec({0.0, 0.0, 0.0}));
  CHECK(lm.item() == doctest::Approx(l1.item()).epsilon(1e-12));

  CHECK_THROWS_AS(bpr_loss(vec({1.0}), vec({1.0, 2.0})), DataError);
}

TEST_CASE("ranking loss is nonnegative and decreasing in the margin") {
  double prev = 1e300;
  for (double margin = -4.0; margin <= 4.0; margin += 0.5) {
    double cur = bpr_loss(vec({margin}), vec({0.0})).item();
    CHECK(cur >= 0.0);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("price head outputs probabilities") {
  const int ld = 3;
  PriceHead zero;
  zero.w1 = Tensor::zeros({ld, 2 * ld}, true);
  zero.b1 = Tensor::zeros({ld}, true);
  zero.w2 = Tensor::zeros({ld}, true);
  zero.b2 = Tensor::zeros({}, true);
  auto p = price_predict(vec({1, 2, 3}), vec({4, 5, 6}), zero);
  CHECK(p.item() == 0.5);

  Rng rng(5);
  auto head = init_price_head(ld, ld, rng);
  CHECK(head.w1.shape() == num::Shape{ld, 2 * ld});
  CHECK(head.b1.shape() == num::Shape{ld});
  for (double v : head.b1.values()) CHECK(v == 0.0);

  Rng again(5);
  auto head2 = init_price_head(ld, ld, again);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> u(ld), i(ld);
    for (auto& x : u) x = rng.uniform(-3.0, 3.0);
    for (auto& x : i) x = rng.uniform(-3.0, 3.0);
    auto q = price_predict(vec(u), vec(i), head);
    CHECK(q.item() > 0.0);
    CHECK(q.item() < 1.0);
    // same weights, same inputs, same output
    CHECK(price_predict(vec(u), vec(i), head2).item() == q.item());
  }
}

TEST_CASE("binary cross entropy values") {
  CHECK(bce_loss(vec({0.5}), vec({1.0})).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(vec({0.5}), vec({0.0})).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK(bce_loss(vec({0.75}), vec({1.0})).item() ==
        doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  CHECK(bce_loss(vec({0.75}), vec({1.0})).item() ==
        doctest::Approx(0.2877).epsilon(1e-3));

  // perfect confident predictions, loss collapses to ~0 through the clamp
  CHECK(bce_loss(vec({1.0}), vec({1.0})).item() ==
        doctest::Approx(0.0).epsilon(1e-9));
  CHECK(bce_loss(vec({0.0}), vec({0.0})).item() ==
        doctest::Approx(0.0).epsilon(1e-9));
  CHECK(bce_loss(vec({1.0}), vec({1.0})).item() >= 0.0);

  // mean over examples
  auto two = bce_loss(vec({0.5, 0.75}), vec({1.0, 1.0}));
  CHECK(two.item() == doctest::Approx((std::log(2.0) - std::log(0.75)) / 2.0)
                          .epsilon(1e-12));

  CHECK_THROWS_AS(bce_loss(vec({0.5}), vec({1.0, 0.0})), DataError);
}

TEST_CASE("extreme predictions stay finite through the clamp") {
  auto l = bce_loss(vec({1.0, 0.0}), vec({0.0, 1.0}));
  CHECK(std::isfinite(l.item()));
  CHECK(l.item() > 20.0);  // -ln(1e-12) / 1 each, huge but finite
}

TEST_CASE("combined loss arithmetic") {
  auto lr = Tensor::scalar(1.0);
  auto lp = Tensor::scalar(0.5);
  CHECK(combined_loss(lr, lp, 0.2, 0.0, {}).item() ==
        doctest::Approx(0.9).epsilon(1e-12));
  CHECK(combined_loss(lr, lp, 0.0, 0.0, {}).item() == 1.0);
  CHECK(combined_loss(lr, lp, 1.0, 0.0, {}).item() == 0.5);

  CHECK_THROWS_AS(combined_loss(lr, lp, -0.1, 0.0, {}), DataError);
  CHECK_THROWS_AS(combined_loss(lr, lp, 1.1, 0.0, {}), DataError);
  CHECK_THROWS_AS(combined_loss(lr, lp, 0.5, -1.0, {}), DataError);
}

TEST_CASE("combined loss is linear in both losses for fixed weights") {
  std::vector<Tensor> params = {vec({1.0, -2.0}, true)};
  const double alpha = 0.3, lambda = 0.01;
  auto at = [&](double a, double b) {
    return combined_loss(Tensor::scalar(a), Tensor::scalar(b), alpha, lambda,
                         params)
        .item();
  };
  const double reg = at(0.0, 0.0);
  CHECK(reg == doctest::Approx(lambda * 5.0).epsilon(1e-12));
  CHECK(at(2.0, 0.0) - reg ==
        doctest::Approx(2.0 * (at(1.0, 0.0) - reg)).epsilon(1e-12));
  CHECK(at(0.0, 3.0) - reg ==
        doctest::Approx(3.0 * (at(0.0, 1.0) - reg)).epsilon(1e-12));
  CHECK(at(2.0, 3.0) ==
        doctest::Approx(at(2.0, 0.0) + at(0.0, 3.0) - reg).epsilon(1e-12));
}

TEST_CASE("regularization term sums squared entries over all parameters") {
  std::vector<Tensor> params = {vec({1.0, 2.0}, true),
                                Tensor::matrix(2, 2, {1, 1, 1, 1}, true)};
  auto total = combined_loss(Tensor::scalar(0.0), Tensor::scalar(0.0), 0.5,
                             0.1, params);
  CHECK(total.item() == doctest::Approx(0.1 * (1 + 4 + 4)).epsilon(1e-12));
}

TEST_CASE("alpha zero sends exactly zero gradient into the price branch") {
  const int ld = 2;
  Rng rng(11);
  auto head = init_price_head(ld, ld, rng);
  auto e_u = vec({0.4, -0.3}, true);
  auto e_i = vec({1.0, 0.2}, true);

  auto pred = price_predict(e_u, e_i, head);
  auto l_price = bce_loss(num::concat({pred}), vec({1.0}));
  auto l_rec = bpr_loss(num::concat({rec_score(e_u, e_i)}),
                        num::concat({Tensor::scalar(0.0)}));
  auto total = combined_loss(l_rec, l_price, 0.0, 0.0, {});
  num::backward(total);

  for (const auto& p : head.trainable()) {
    for (double g : p.grad()) CHECK(g == 0.0);
  }
  // the ranking branch still trains
  bool any = false;
  for (double g : e_u.grad()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("price head passes a numeric gradient check") {
  const int ld = 2;
  Rng rng(13);
  auto base = init_price_head(ld, ld, rng);
  auto e_u = vec({0.4, -0.3});
  auto e_i = vec({1.0, 0.2});

  for (int which = 0; which < 4; ++which) {
    const Tensor& target = which == 0   ? base.w1
                           : which == 1 ? base.b1
                           : which == 2 ? base.w2
                                        : base.b2;
    auto f = [&](const Tensor& p) {
      PriceHead probe = base;
      (which == 0   ? probe.w1
       : which == 1 ? probe.b1
       : which == 2 ? probe.w2
                    : probe.b2) = p;
      auto pred = price_predict(e_u, e_i, probe);
      return bce_loss(num::concat({pred}), vec({1.0}));
    };
    auto point = Tensor::from_values(
        target.shape(),
        std::vector<double>(target.values().begin(), target.values().end()));
    CHECK(num::gradient_check(f, point, 1e-5) < 1e-3);
  }
}
