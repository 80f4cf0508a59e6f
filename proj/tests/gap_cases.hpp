#pragma once

#include <string>

#include "fagg/metrics.hpp"
#include "fagg/numeric.hpp"

namespace fagg::testing {

struct GapCase {
  PredictionSet preds;
  GroundTruth truth;
};

/// A = [(1, .9, hit), (2, .8, miss)], B = [(3, .7, hit), (4, .6, hit)].
inline GapCase worked_gap_case() {
  GapCase c;
  c.preds.videos = {{"A", {{1, 0.9}, {2, 0.8}}}, {"B", {{3, 0.7}, {4, 0.6}}}};
  c.truth = {{"A", {1}}, {"B", {3, 4}}};
  return c;
}

/// ≤ 10 videos, ≤ 8 labels, ≤ 5 predictions per video. Confidences come from
/// a coarse grid so ties are common.
inline GapCase random_gap_case(SeededRng& rng) {
  GapCase c;
  const std::size_t videos = 1 + rng.uniform_index(10);
  const std::size_t labels = 1 + rng.uniform_index(8);
  for (std::size_t v = 0; v < videos; ++v) {
    const std::string id = "v" + std::to_string(rng.uniform_index(1000)) + "_" + std::to_string(v);
    std::vector<int> truth;
    for (std::size_t l = 0; l < labels; ++l) {
      if (rng.uniform() < 0.3) truth.push_back(static_cast<int>(l));
    }
    c.truth[id] = truth;
    VideoPredictions p{id, {}};
    const auto order = rng.permutation(labels);
    const std::size_t n = std::min<std::size_t>(labels, rng.uniform_index(6));
    for (std::size_t i = 0; i < n; ++i) {
      p.labels.push_back({static_cast<int>(order[i]), static_cast<double>(rng.uniform_index(6)) / 5.0});
    }
    c.preds.videos.push_back(std::move(p));
  }
  return c;
}

}  // namespace fagg::testing
