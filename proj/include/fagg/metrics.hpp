#pragma once

// Global average precision over pooled top-k predictions:
//
//   GAP = Σ_i p(i) Δr(i),   Δr(i) = [prediction i correct] / m
//
// where p(i) is the precision of the first i pooled predictions sorted by
// confidence (descending; ties by video id, then label).

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fagg/data.hpp"
#include "fagg/predictions.hpp"

namespace fagg {

enum class GapMMode {
  /// m = correct entries among the pooled predictions.
  in_predictions,
  /// m = Σ over truth videos of min(|labels|, k), as the challenge evaluator counts.
  ground_truth,
};

std::string to_string(GapMMode mode);
GapMMode gap_m_mode_from_string(const std::string& name);

using GroundTruth = std::map<std::string, std::vector<int>>;

GroundTruth ground_truth_of(const std::vector<FrameSequence>& samples);

struct GapEntry {
  std::string video;
  int label = 0;
  double confidence = 0.0;
  bool correct = false;
};

/// Per-video top-k, pooled and sorted into evaluation order.
std::vector<GapEntry> pool_predictions(const PredictionSet& preds, const GroundTruth& truth,
                                       std::size_t k);

/// Throws DataError for a predicted video without a truth entry.
double gap_at(const PredictionSet& preds, const GroundTruth& truth, std::size_t k = 20,
              GapMMode mode = GapMMode::in_predictions);

/// Same contract as gap_at, evaluated literally in O(N²) for cross-checking.
double gap_oracle(const PredictionSet& preds, const GroundTruth& truth, std::size_t k = 20,
                  GapMMode mode = GapMMode::in_predictions);

}  // namespace fagg
