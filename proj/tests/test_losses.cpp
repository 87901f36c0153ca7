#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "weakheight/errors.hpp"
#include "weakheight/losses.hpp"

using namespace weakheight;

namespace {

torch::Tensor dvec(const std::vector<double>& v) {
  return torch::tensor(v, torch::kDouble);
}

double softplus_ref(double x) { return std::log(1.0 + std::exp(x)); }

// Central differences of a scalar tensor function over every element of x.
std::vector<double> finite_difference(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x,
                                      double step) {
  std::vector<double> grad;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    auto up = x.clone();
    auto down = x.clone();
    up.reshape({-1})[i] += step;
    down.reshape({-1})[i] -= step;
    grad.push_back((f(up) - f(down)) / (2.0 * step));
  }
  return grad;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("total is the unweighted sum and rejects non-finite parts") {
    LossBreakdown parts{0.5, 1.0, 2.0, 0.25, 0.0};
    CHECK(with_total(parts).total == 3.75);
    parts.l_bsh = std::numeric_limits<double>::quiet_NaN();
    try {
      total_loss(parts);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.component() == "l_bsh");
    }
    parts.l_bsh = 0.0;
    parts.l_oc = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(total_loss(parts), NumericError);
  }

  TEST_CASE("classification loss") {
    const auto probs = dvec({0.7, 0.2, 0.1, 0.1, 0.1, 0.8}).reshape({2, 3});
    const auto targets = torch::tensor({0, 2}, torch::kLong);
    const double expected = -(std::log(0.7) + std::log(0.8)) / 2.0;
    CHECK(domain_classification_loss(probs, targets).item<double>() == doctest::Approx(expected).epsilon(1e-12));

    const auto zero = dvec({1.0, 0.0}).reshape({1, 2});
    CHECK(domain_classification_loss(zero, torch::tensor({1}, torch::kLong)).item<double>() ==
          doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(domain_classification_loss(zero, torch::tensor({2}, torch::kLong)), std::out_of_range);
  }

  TEST_CASE("hard height loss is the mean absolute error") {
    CHECK(hard_height_loss(dvec({1, 2, 3}), dvec({2, 2, 5})).item<double>() == doctest::Approx(1.0));
    CHECK_THROWS_AS(hard_height_loss(dvec({1, 2}), dvec({1, 2, 3})), DataError);
  }

  TEST_CASE("soft residual buffer") {
    CHECK(soft_height_residual(10.0, 10.0, 0.3) == 0.0);
    CHECK(soft_height_residual(7.0, 10.0, 0.3) == 0.0);  // boundary is inside
    CHECK(soft_height_residual(13.0, 10.0, 0.3) == 0.0);
    CHECK(soft_height_residual(6.9, 10.0, 0.3) == doctest::Approx(3.1));
    CHECK(soft_height_residual(14.0, 10.0, 0.3) == doctest::Approx(4.0));
    CHECK(soft_height_residual(0.5, 0.0, 0.3) == 0.5);  // background has no buffer
  }

  TEST_CASE("element-wise soft residuals match the scalar form") {
    const std::vector<double> pred{1, 6, 7, 7.5, 14, 20, 0.2};
    const std::vector<double> gt{1, 10, 10, 10, 10, 10, 0};
    const auto r = soft_height_residuals(dvec(pred), dvec(gt), 0.3);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      CHECK(r[static_cast<std::int64_t>(i)].item<double>() == doctest::Approx(soft_height_residual(pred[i], gt[i], 0.3)));
    }
  }

  TEST_CASE("no gradient flows from inside the buffer") {
    auto pred = dvec({8.0, 5.0, 16.0}).requires_grad_(true);
    const auto gt = dvec({10.0, 10.0, 10.0});
    soft_height_residuals(pred, gt, 0.3).sum().backward();
    const auto g = pred.grad();
    CHECK(g[0].item<double>() == 0.0);
    CHECK(g[1].item<double>() == -1.0);
    CHECK(g[2].item<double>() == 1.0);
  }

  TEST_CASE("balanced soft loss uses the balanced pixel subset") {
    const std::vector<double> gt{0, 0, 0, 5, 5, 10, 10, 20, 20, 40};
    const std::vector<double> pred{1, 0, 2, 5, 1, 10, 3, 20, 30, 0};
    Rng a(17), b(17);
    const double loss = balanced_soft_height_loss(dvec(pred), dvec(gt), 0.3, 0.5, a).item<double>();
    const auto picks = balanced_pixel_sample(std::span<const double>(gt), 0.5, b);
    double expected = 0.0;
    for (auto i : picks) expected += soft_height_residual(pred[i], gt[i], 0.3);
    expected /= static_cast<double>(picks.size());
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("ordinal pair loss is softplus of the order violation") {
    CHECK(ordinal_pair_loss(5.0, 2.0, 3, 1) == doctest::Approx(softplus_ref(-3.0)));
    CHECK(ordinal_pair_loss(2.0, 5.0, 3, 1) == doctest::Approx(softplus_ref(3.0)));
    CHECK(ordinal_pair_loss(2.0, 5.0, 1, 3) == doctest::Approx(softplus_ref(-3.0)));
    CHECK(ordinal_pair_loss(0.0, 0.0, 0, 1) == doctest::Approx(std::log(2.0)));
    CHECK(ordinal_pair_loss(1000.0, 0.0, 0, 1) == doctest::Approx(1000.0));
    CHECK(std::isfinite(ordinal_pair_loss(0.0, 1000.0, 0, 1)));
  }

  TEST_CASE("ordinal constraint loss averages the pair losses") {
    const std::vector<double> pred{3.0, 1.0, 4.0, 1.5};
    PixelPairSet set;
    set.pairs = {{0, 1, 2, 0}, {1, 2, 0, 3}, {3, 2, 1, 2}};
    double expected = 0.0;
    for (const auto& p : set.pairs) expected += ordinal_pair_loss(pred[p.index_a], pred[p.index_b], p.class_a, p.class_b);
    expected /= 3.0;
    CHECK(ordinal_constraint_loss(dvec(pred), set).item<double>() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(ordinal_constraint_loss(dvec(pred), PixelPairSet{}).item<double>() == 0.0);
  }

  TEST_CASE("autograd matches finite differences") {
    const auto gt = dvec({3.0, 10.0, 10.0, 25.0, 0.0, 7.0});
    const auto x0 = dvec({1.0, 5.0, 15.5, 24.0, 2.0, 4.0});

    auto check_grad = [&](const std::function<torch::Tensor(const torch::Tensor&)>& loss) {
      auto x = x0.clone().requires_grad_(true);
      loss(x).backward();
      const auto fd = finite_difference([&](const torch::Tensor& t) { return loss(t).item<double>(); }, x0, 1e-4);
      for (std::size_t i = 0; i < fd.size(); ++i) {
        CHECK(x.grad()[static_cast<std::int64_t>(i)].item<double>() == doctest::Approx(fd[i]).epsilon(1e-4));
      }
    };
    check_grad([&](const torch::Tensor& x) { return hard_height_loss(x, gt); });
    check_grad([&](const torch::Tensor& x) { return soft_height_residuals(x, gt, 0.3).mean(); });
    PixelPairSet set;
    set.pairs = {{0, 1, 0, 3}, {2, 3, 2, 4}, {5, 1, 1, 3}, {4, 0, 0, 1}};
    check_grad([&](const torch::Tensor& x) { return ordinal_constraint_loss(x, set); });
    const auto targets = torch::tensor({1, 0}, torch::kLong);
    check_grad([&](const torch::Tensor& x) {
      return domain_classification_loss(torch::softmax(x.reshape({2, 3}), 1), targets);
    });
  }
}
