#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace fagg {

struct ScoredLabel {
  int label = 0;
  double confidence = 0.0;

  friend bool operator==(const ScoredLabel&, const ScoredLabel&) = default;
};

struct VideoPredictions {
  std::string id;
  std::vector<ScoredLabel> labels;  // distinct labels

  friend bool operator==(const VideoPredictions&, const VideoPredictions&) = default;
};

/// Per-video ranked (label, confidence) lists: the unit of fusion and evaluation.
struct PredictionSet {
  std::vector<VideoPredictions> videos;

  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

/// Orders by descending confidence, ties by ascending label.
bool ranks_before(const ScoredLabel& a, const ScoredLabel& b) noexcept;

/// Sorts in place by ranks_before and keeps at most k entries (k == 0 keeps all).
void rank_and_truncate(std::vector<ScoredLabel>& labels, std::size_t k);

}  // namespace fagg
