#include <doctest.h>

#include <cmath>

#include "fagg/errors.hpp"
#include "fagg/metrics.hpp"
#include "gap_cases.hpp"

using namespace fagg;
using namespace fagg::testing;

TEST_CASE("worked two-video case") {
  const auto c = worked_gap_case();
  CHECK(std::abs(gap_at(c.preds, c.truth) - 0.8055555555555556) < 1e-9);
  CHECK(std::abs(gap_oracle(c.preds, c.truth) - 0.8055555555555556) < 1e-9);
}

TEST_CASE("trivial cases") {
  PredictionSet one;
  one.videos = {{"x", {{0, 0.5}}}};
  CHECK(gap_at(one, {{"x", {0}}}) == 1.0);
  CHECK(gap_oracle(one, {{"x", {0}}}) == 1.0);
  CHECK(gap_at(one, {{"x", {1}}}) == 0.0);
  CHECK(gap_oracle(one, {{"x", {1}}}) == 0.0);
  CHECK(gap_at(PredictionSet{}, {}) == 0.0);
}

TEST_CASE("ground-truth m mode counts capped positives") {
  const auto c = worked_gap_case();
  // Three truth positives, all within k: same as the default here.
  CHECK(gap_at(c.preds, c.truth, 20, GapMMode::ground_truth) ==
        doctest::Approx(gap_at(c.preds, c.truth)));
  auto truth = c.truth;
  truth["A"] = {1, 5, 6};  // two positives never predicted
  CHECK(gap_at(c.preds, truth, 20, GapMMode::ground_truth) ==
        doctest::Approx((1.0 + 2.0 / 3.0 + 0.75) / 5.0));
  // With k = 1 each video contributes at most one positive.
  CHECK(gap_at(c.preds, truth, 1, GapMMode::ground_truth) ==
        doctest::Approx((1.0 + 1.0) / 2.0));
  CHECK(gap_m_mode_from_string(to_string(GapMMode::ground_truth)) == GapMMode::ground_truth);
  CHECK_THROWS_AS(gap_m_mode_from_string("maybe"), ArgumentError);
}

TEST_CASE("top-k truncation happens per video before pooling") {
  const auto c = worked_gap_case();
  // k = 1: A keeps l1 (hit), B keeps l3 (hit).
  CHECK(gap_at(c.preds, c.truth, 1) == 1.0);
  CHECK(gap_oracle(c.preds, c.truth, 1) == 1.0);
}

TEST_CASE("pooling order breaks ties by video then label") {
  PredictionSet p;
  p.videos = {{"b", {{2, 0.5}, {1, 0.5}}}, {"a", {{7, 0.5}}}};
  const auto pooled = pool_predictions(p, {{"a", {}}, {"b", {1}}}, 20);
  REQUIRE(pooled.size() == 3);
  CHECK(pooled[0].video == "a");
  CHECK(pooled[1].label == 1);
  CHECK(pooled[1].correct);
  CHECK(pooled[2].label == 2);
}

TEST_CASE("errors") {
  PredictionSet p;
  p.videos = {{"zz", {{0, 0.5}}}};
  CHECK_THROWS_AS(gap_at(p, {}), DataError);
  CHECK_THROWS_AS(gap_oracle(p, {}), DataError);
  p.videos.push_back({"zz", {{1, 0.5}}});
  CHECK_THROWS_AS(gap_at(p, {{"zz", {0}}}), DataError);
  CHECK_THROWS_AS(gap_at(p, {{"zz", {0}}}, 0), ArgumentError);
}

TEST_CASE("fast and literal evaluators agree on random instances") {
  SeededRng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_gap_case(rng);
    for (auto mode : {GapMMode::in_predictions, GapMMode::ground_truth}) {
      const double fast = gap_at(c.preds, c.truth, 3, mode);
      CHECK(std::abs(fast - gap_oracle(c.preds, c.truth, 3, mode)) <= 1e-12);
      CHECK(fast >= 0.0);
      CHECK(fast <= 1.0);
    }
  }
}

TEST_CASE("gap depends only on the ranking") {
  SeededRng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_gap_case(rng);
    const double before = gap_at(c.preds, c.truth);
    for (auto& v : c.preds.videos) {
      for (auto& s : v.labels) s.confidence = std::pow(s.confidence, 3.0) * 0.5 + 0.1;
    }
    CHECK(gap_at(c.preds, c.truth) == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("a trailing wrong prediction never raises gap") {
  SeededRng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_gap_case(rng);
    const double before = gap_at(c.preds, c.truth);
    auto& v = c.preds.videos.front();
    int wrong = 100;
    v.labels.push_back({wrong, -1.0});
    CHECK(gap_at(c.preds, c.truth) <= before + 1e-15);
  }
}

TEST_CASE("input order of equal-confidence entries is irrelevant") {
  SeededRng rng(34);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_gap_case(rng);
    const double oracle = gap_oracle(c.preds, c.truth);
    const double fast = gap_at(c.preds, c.truth);
    std::reverse(c.preds.videos.begin(), c.preds.videos.end());
    for (auto& v : c.preds.videos) std::reverse(v.labels.begin(), v.labels.end());
    CHECK(gap_oracle(c.preds, c.truth) == oracle);
    CHECK(gap_at(c.preds, c.truth) == fast);
  }
}
