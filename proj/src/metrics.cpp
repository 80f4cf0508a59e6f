#include "fagg/metrics.hpp"

#include <algorithm>
#include <set>

#include "fagg/errors.hpp"

namespace fagg {

std::string to_string(GapMMode mode) {
  return mode == GapMMode::in_predictions ? "in_predictions" : "ground_truth";
}

GapMMode gap_m_mode_from_string(const std::string& name) {
  if (name == "in_predictions") return GapMMode::in_predictions;
  if (name == "ground_truth") return GapMMode::ground_truth;
  throw ArgumentError("unknown m mode \"" + name + "\"");
}

GroundTruth ground_truth_of(const std::vector<FrameSequence>& samples) {
  GroundTruth out;
  for (const auto& s : samples) {
    if (!out.emplace(s.id, s.labels).second) throw DataError("duplicate video id " + s.id);
  }
  return out;
}

namespace {

void check_k(std::size_t k) {
  if (k < 1) throw ArgumentError("gap: k must be at least 1");
}

bool evaluation_order(const GapEntry& a, const GapEntry& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.video != b.video) return a.video < b.video;
  return a.label < b.label;
}

double truth_positive_count(const GroundTruth& truth, std::size_t k) {
  double m = 0.0;
  for (const auto& [id, labels] : truth) m += static_cast<double>(std::min(labels.size(), k));
  return m;
}

}  // namespace

std::vector<GapEntry> pool_predictions(const PredictionSet& preds, const GroundTruth& truth,
                                       std::size_t k) {
  check_k(k);
  std::vector<GapEntry> pooled;
  std::set<std::string> seen;
  for (const auto& video : preds.videos) {
    auto it = truth.find(video.id);
    if (it == truth.end()) throw DataError("gap: no ground truth for video " + video.id);
    if (!seen.insert(video.id).second) throw DataError("gap: duplicate video id " + video.id);
    auto ranked = video.labels;
    rank_and_truncate(ranked, k);
    for (const auto& s : ranked) {
      const bool correct = std::binary_search(it->second.begin(), it->second.end(), s.label);
      pooled.push_back({video.id, s.label, s.confidence, correct});
    }
  }
  std::sort(pooled.begin(), pooled.end(), evaluation_order);
  return pooled;
}

double gap_at(const PredictionSet& preds, const GroundTruth& truth, std::size_t k,
              GapMMode mode) {
  const auto pooled = pool_predictions(preds, truth, k);
  double m = 0.0;
  if (mode == GapMMode::in_predictions) {
    m = static_cast<double>(std::count_if(pooled.begin(), pooled.end(),
                                          [](const GapEntry& e) { return e.correct; }));
  } else {
    m = truth_positive_count(truth, k);
  }
  if (m == 0.0) return 0.0;

  double precision_sum = 0.0;
  double hits = 0.0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (!pooled[i].correct) continue;
    hits += 1.0;
    precision_sum += hits / static_cast<double>(i + 1);
  }
  return precision_sum / m;
}

double gap_oracle(const PredictionSet& preds, const GroundTruth& truth, std::size_t k,
                  GapMMode mode) {
  check_k(k);
  // Pool: each video's k best by repeated selection.
  std::vector<GapEntry> remaining;
  std::set<std::string> seen;
  for (const auto& video : preds.videos) {
    auto it = truth.find(video.id);
    if (it == truth.end()) throw DataError("gap: no ground truth for video " + video.id);
    if (!seen.insert(video.id).second) throw DataError("gap: duplicate video id " + video.id);
    std::vector<ScoredLabel> pool = video.labels;
    for (std::size_t taken = 0; taken < k && !pool.empty(); ++taken) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < pool.size(); ++j) {
        if (ranks_before(pool[j], pool[best])) best = j;
      }
      const auto& s = pool[best];
      const bool correct =
          std::find(it->second.begin(), it->second.end(), s.label) != it->second.end();
      remaining.push_back({video.id, s.label, s.confidence, correct});
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
    }
  }

  // Global order by repeated selection.
  std::vector<GapEntry> ordered;
  while (!remaining.empty()) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < remaining.size(); ++j) {
      if (evaluation_order(remaining[j], remaining[best])) best = j;
    }
    ordered.push_back(remaining[best]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }

  double m = 0.0;
  if (mode == GapMMode::in_predictions) {
    for (const auto& e : ordered) m += e.correct ? 1.0 : 0.0;
  } else {
    m = truth_positive_count(truth, k);
  }
  if (m == 0.0) return 0.0;

  double gap = 0.0;
  for (std::size_t i = 1; i <= ordered.size(); ++i) {
    double correct_so_far = 0.0;
    for (std::size_t j = 0; j < i; ++j) correct_so_far += ordered[j].correct ? 1.0 : 0.0;
    const double precision = correct_so_far / static_cast<double>(i);
    const double delta_recall = ordered[i - 1].correct ? 1.0 / m : 0.0;
    gap += precision * delta_recall;
  }
  return gap;
}

}  // namespace fagg
