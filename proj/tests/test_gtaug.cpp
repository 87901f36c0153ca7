#include <doctest.h>

#include "weakheight/errors.hpp"
#include "weakheight/gtaug.hpp"

using namespace weakheight;

TEST_SUITE("gtaug") {
  TEST_CASE("eta decays geometrically to its floor") {
    AugmentationState s;
    int epochs_to_floor = 0;
    double expected = 1.0;
    while (s.eta > kEtaFloor) {
      s = decay_eta(s);
      expected *= 0.99;
      ++epochs_to_floor;
      CHECK(s.eta == doctest::Approx(std::max(expected, 0.5)));
    }
    CHECK(epochs_to_floor == 69);
    CHECK(decay_eta(s).eta == 0.5);
  }

  TEST_CASE("state validation") {
    AugmentationState s;
    s.eta = 0.4;
    CHECK_THROWS_AS(validate_augmentation(s), ConfigError);
    s = {};
    s.alpha = 0.0;
    CHECK_THROWS_AS(validate_augmentation(s), ConfigError);
    s = {};
    s.dropout_p = 1.0;
    CHECK_THROWS_AS(validate_augmentation(s), ConfigError);
    s = {};
    CHECK_NOTHROW(validate_augmentation(s));
  }

  TEST_CASE("trusted pixels are blended, the rest keep their label") {
    AugmentationState s;
    s.eta = 0.6;
    s.dropout_p = 0.0;
    const auto label = torch::tensor({10.0, 10.0, 10.0, 0.0, 20.0}, torch::kDouble);
    const auto pred = torch::tensor({10.5, 12.0, 9.2, 1.0, 19.0}, torch::kDouble);
    Rng rng(1);
    const auto out = augment_ground_truth(label, pred, s, rng);
    CHECK_FALSE(out.dropped);
    CHECK(out.trusted == 3);
    CHECK(out.height[0].item<double>() == doctest::Approx(0.6 * 10 + 0.4 * 10.5));
    CHECK(out.height[1].item<double>() == 10.0);  // |diff| = 2 > 1
    CHECK(out.height[2].item<double>() == doctest::Approx(0.6 * 10 + 0.4 * 9.2));
    CHECK(out.height[3].item<double>() == 0.0);   // background is never trusted
    CHECK(out.height[4].item<double>() == doctest::Approx(0.6 * 20 + 0.4 * 19));
  }

  TEST_CASE("identity cases") {
    const auto label = torch::tensor({5.0, 8.0, 12.0}, torch::kDouble);
    const auto pred = torch::tensor({5.2, 7.9, 12.5}, torch::kDouble);
    Rng rng(2);

    AugmentationState s;
    s.dropout_p = 0.0;
    s.eta = 1.0;
    CHECK(torch::equal(augment_ground_truth(label, pred, s, rng).height, label));

    s.eta = 0.5;
    s.omega_rel = 0.0;
    CHECK(torch::equal(augment_ground_truth(label, pred, s, rng).height, label));

    s.omega_rel = 0.1;
    CHECK(torch::equal(augment_ground_truth(label, label.clone(), s, rng).height, label));
  }

  TEST_CASE("dropout keeps the original label") {
    AugmentationState s;
    s.eta = 0.5;
    s.dropout_p = 0.3;
    const auto label = torch::full({16}, 10.0, torch::kDouble);
    const auto pred = torch::full({16}, 10.5, torch::kDouble);
    Rng rng(3);
    int dropped = 0;
    for (int i = 0; i < 2000; ++i) {
      const auto out = augment_ground_truth(label, pred, s, rng);
      if (out.dropped) {
        ++dropped;
        CHECK(torch::equal(out.height, label));
      }
    }
    CHECK(dropped > 500);
    CHECK(dropped < 700);
  }

  TEST_CASE("augmented values stay between label and prediction") {
    AugmentationState s;
    s.eta = 0.7;
    s.dropout_p = 0.0;
    s.omega_rel = 0.5;
    Rng rng(4);
    const auto label = torch::rand({200}, torch::kDouble) * 50;
    const auto pred = label * (0.6 + torch::rand({200}, torch::kDouble) * 0.8);
    const auto h = augment_ground_truth(label, pred, s, rng).height;
    const auto lo = torch::minimum(label, pred);
    const auto hi = torch::maximum(label, pred);
    CHECK(torch::all(h >= lo - 1e-12).item<bool>());
    CHECK(torch::all(h <= hi + 1e-12).item<bool>());
  }

  TEST_CASE("the high-branch prediction must be detached") {
    Rng rng(5);
    const auto label = torch::ones({4});
    const auto pred = torch::ones({4}).requires_grad_(true);
    CHECK_THROWS_AS(augment_ground_truth(label, pred, AugmentationState{}, rng), std::invalid_argument);
    CHECK_THROWS_AS(augment_ground_truth(label, torch::ones({5}), AugmentationState{}, rng), DataError);
  }
}
