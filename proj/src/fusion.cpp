#include "fagg/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include "fagg/data.hpp"
#include "fagg/errors.hpp"

namespace fagg {

using json = nlohmann::json;

namespace {

// Σw slightly above 1 from rounding (0.4+0.3+0.2+0.1) must not rescale.
constexpr double kRenormalizeSlack = 1e-9;

void check_weights(std::size_t sets, std::span<const double> weights) {
  if (sets == 0) throw ArgumentError("fusion: no prediction sets");
  if (weights.size() != sets) {
    throw ArgumentError("fusion: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(sets) + " sets");
  }
  bool positive = false;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw ArgumentError("fusion: weights must be finite and >= 0");
    positive = positive || w > 0.0;
  }
  if (!positive) throw ArgumentError("fusion: at least one weight must be positive");
}

using VideoIndex = std::unordered_map<std::string, const VideoPredictions*>;

VideoIndex index_of(const PredictionSet& set) {
  VideoIndex out;
  for (const auto& v : set.videos) {
    if (!out.emplace(v.id, &v).second) throw DataError("fusion: duplicate video id " + v.id);
  }
  return out;
}

std::vector<VideoIndex> check_universe(std::span<const PredictionSet> sets) {
  std::vector<VideoIndex> indices;
  for (const auto& s : sets) indices.push_back(index_of(s));
  for (std::size_t j = 1; j < sets.size(); ++j) {
    if (indices[j].size() != indices[0].size()) {
      throw DataError("fusion: source " + std::to_string(j) + " covers " +
                      std::to_string(indices[j].size()) + " videos, source 0 covers " +
                      std::to_string(indices[0].size()));
    }
    for (const auto& [id, _] : indices[0]) {
      if (!indices[j].count(id)) {
        throw DataError("fusion: video " + id + " missing from source " + std::to_string(j));
      }
    }
  }
  return indices;
}

}  // namespace

PredictionSet fuse_linear(std::span<const PredictionSet> sets, std::span<const double> weights,
                          std::size_t top_k) {
  check_weights(sets.size(), weights);
  const auto indices = check_universe(sets);
  double total = 0.0;
  for (double w : weights) total += w;
  const double norm = total > 1.0 + kRenormalizeSlack ? total : 1.0;

  PredictionSet out;
  out.videos.reserve(sets[0].videos.size());
  for (const auto& first : sets[0].videos) {
    std::map<int, double> scores;
    for (std::size_t j = 0; j < sets.size(); ++j) {
      if (weights[j] == 0.0) continue;
      for (const auto& s : indices[j].at(first.id)->labels) {
        scores[s.label] += weights[j] * s.confidence;
      }
    }
    VideoPredictions video{first.id, {}};
    video.labels.reserve(scores.size());
    for (const auto& [label, score] : scores) video.labels.push_back({label, score / norm});
    rank_and_truncate(video.labels, top_k);
    out.videos.push_back(std::move(video));
  }
  return out;
}

PredictionSet fuse_two_stage(std::span<const ModelCheckpointSets> models,
                             std::span<const double> inter_weights, std::size_t top_k) {
  if (models.empty()) throw ArgumentError("fusion: no models");
  std::vector<PredictionSet> stage1;
  stage1.reserve(models.size());
  for (const auto& m : models) stage1.push_back(fuse_linear(m.checkpoints, m.intra_weights, 0));
  return fuse_linear(stage1, inter_weights, top_k);
}

std::vector<double> grid_search_weights(std::span<const PredictionSet> sets,
                                        const GroundTruth& truth, double step, std::size_t k,
                                        GapMMode mode) {
  if (sets.size() < 2 || sets.size() > 5) {
    throw ArgumentError("grid search: needs 2 to 5 prediction sets, got " +
                        std::to_string(sets.size()));
  }
  static constexpr double allowed[] = {0.05, 0.1, 0.25, 0.5};
  if (std::none_of(std::begin(allowed), std::end(allowed),
                   [&](double a) { return std::abs(a - step) < 1e-12; })) {
    throw ArgumentError("grid search: step must be one of 0.05, 0.1, 0.25, 0.5");
  }
  check_universe(sets);
  const int units = static_cast<int>(std::lround(1.0 / step));
  const std::size_t n = sets.size();

  std::vector<int> counts(n, 0);
  std::vector<double> weights(n), best;
  double best_gap = -1.0;

  // Compositions of `units` into n parts, lexicographically ascending.
  auto visit = [&](auto&& self, std::size_t pos, int left) -> void {
    if (pos + 1 == n) {
      counts[pos] = left;
      for (std::size_t j = 0; j < n; ++j) weights[j] = static_cast<double>(counts[j]) / units;
      const double gap = gap_at(fuse_linear(sets, weights, k), truth, k, mode);
      if (gap > best_gap) {
        best_gap = gap;
        best = weights;
      }
      return;
    }
    for (int c = 0; c <= left; ++c) {
      counts[pos] = c;
      self(self, pos + 1, left - c);
    }
  };
  visit(visit, 0, units);
  return best;
}

std::vector<double> regress_weights(std::span<const PredictionSet> sets, const GroundTruth& truth) {
  if (sets.empty()) throw ArgumentError("regression: no prediction sets");
  const auto indices = check_universe(sets);
  const std::size_t n = sets.size();

  std::vector<double> gram(n * n, 0.0), rhs(n, 0.0);
  std::vector<double> row(n);
  for (const auto& first : sets[0].videos) {
    auto t = truth.find(first.id);
    if (t == truth.end()) throw DataError("regression: no ground truth for video " + first.id);
    std::map<int, std::vector<double>> rows;
    for (std::size_t j = 0; j < n; ++j) {
      for (const auto& s : indices[j].at(first.id)->labels) {
        auto& r = rows[s.label];
        r.resize(n, 0.0);
        r[j] = s.confidence;
      }
    }
    for (const auto& [label, x] : rows) {
      const double y =
          std::binary_search(t->second.begin(), t->second.end(), label) ? 1.0 : 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        rhs[a] += x[a] * y;
        for (std::size_t b = 0; b < n; ++b) gram[a * n + b] += x[a] * x[b];
      }
    }
  }
  for (std::size_t a = 0; a < n; ++a) gram[a * n + a] += kRegressionRidge;

  // Cholesky: gram = L Lᵀ.
  std::vector<double> L(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = gram[i * n + j];
      for (std::size_t p = 0; p < j; ++p) s -= L[i * n + p] * L[j * n + p];
      if (i == j) {
        if (!(s > 0.0)) throw NumericError("regression: normal equations are singular");
        L[i * n + i] = std::sqrt(s);
      } else {
        L[i * n + j] = s / L[j * n + j];
      }
    }
  }
  std::vector<double> z(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = rhs[i];
    for (std::size_t p = 0; p < i; ++p) s -= L[i * n + p] * z[p];
    z[i] = s / L[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = z[i];
    for (std::size_t p = i + 1; p < n; ++p) s -= L[p * n + i] * w[p];
    w[i] = s / L[i * n + i];
  }

  double total = 0.0;
  for (double& v : w) {
    if (!std::isfinite(v)) throw NumericError("regression: non-finite weight");
    v = std::max(v, 0.0);
    total += v;
  }
  if (total == 0.0) return std::vector<double>(n, 1.0 / static_cast<double>(n));
  for (double& v : w) v /= total;
  return w;
}

namespace fusion_defaults {

std::vector<double> intra_template(std::size_t checkpoints) {
  switch (checkpoints) {
    case 1: return {1.0};
    case 3: return {0.5, 0.3, 0.2};
    case 4: return {0.4, 0.3, 0.2, 0.1};
    case 5: return {0.4, 0.3, 0.2, 0.05, 0.05};
    default:
      throw ArgumentError("no default intra-model weights for " + std::to_string(checkpoints) +
                          " checkpoints");
  }
}

const std::vector<ReferenceModel>& reference_ensemble() {
  static const std::vector<ReferenceModel> models = {
      {"LSTM", {353, 323, 300, 280}, intra_template(4), 1.0},
      {"GRU", {69, 65, 60, 55}, intra_template(4), 1.0},
      {"RWA", {114, 87, 75, 50}, intra_template(4), 1.0},
      {"GRU w. recurrent dropout", {56, 50, 46, 40, 35}, intra_template(5), 1.0},
      {"NetVLAD", {24, 21, 19, 16, 13}, intra_template(5), 1.0},
      {"MoE", {127, 115, 102, 90}, intra_template(4), 0.5},
      {"DBoF", {175, 150, 137, 122, 112}, intra_template(5), 0.5},
      {"GRU w. batch normalization", {86, 74, 65, 49}, intra_template(4), 0.25},
      {"Bidirectional GRU", {53, 45, 35}, intra_template(3), 0.25},
  };
  return models;
}

}  // namespace fusion_defaults

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ConfigError(std::string(what) + ": unknown key \"" + key + "\"");
    }
  }
}

template <typename T>
T get_as(const json& j, const char* what) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("fusion plan: bad value for ") + what);
  }
}

}  // namespace

FusionPlanFile parse_fusion_plan(const json& j) {
  check_keys(j, {"stage1", "stage2", "strategy"}, "fusion plan");
  FusionPlanFile plan;
  if (!j.contains("stage1") || !j.at("stage1").is_array() || j.at("stage1").empty()) {
    throw ConfigError("fusion plan: \"stage1\" must be a non-empty array");
  }
  for (const auto& entry : j.at("stage1")) {
    check_keys(entry, {"sets", "weights"}, "fusion plan stage1 entry");
    FusionPlanStage stage;
    if (!entry.contains("sets")) throw ConfigError("fusion plan: stage1 entry needs \"sets\"");
    stage.sets = get_as<std::vector<std::string>>(entry.at("sets"), "sets");
    if (stage.sets.empty()) throw ConfigError("fusion plan: empty \"sets\"");
    if (entry.contains("weights")) {
      stage.weights = get_as<std::vector<double>>(entry.at("weights"), "weights");
      if (stage.weights.size() != stage.sets.size()) {
        throw ConfigError("fusion plan: stage1 weights and sets differ in length");
      }
    }
    plan.stage1.push_back(std::move(stage));
  }
  if (j.contains("strategy")) {
    const auto name = get_as<std::string>(j.at("strategy"), "strategy");
    if (name == "empirical") {
      plan.strategy = FusionStrategy::empirical;
    } else if (name == "grid") {
      plan.strategy = FusionStrategy::grid;
    } else if (name == "regress") {
      plan.strategy = FusionStrategy::regress;
    } else {
      throw ConfigError("fusion plan: unknown strategy \"" + name + "\"");
    }
  }
  if (j.contains("stage2")) {
    check_keys(j.at("stage2"), {"weights"}, "fusion plan stage2");
    if (j.at("stage2").contains("weights")) {
      plan.stage2_weights = get_as<std::vector<double>>(j.at("stage2").at("weights"), "weights");
      if (plan.stage2_weights.size() != plan.stage1.size()) {
        throw ConfigError("fusion plan: stage2 needs one weight per stage1 entry");
      }
      if (plan.strategy != FusionStrategy::empirical) {
        throw ConfigError("fusion plan: stage2 weights are learned by this strategy");
      }
    }
  }
  return plan;
}

FusionPlanFile load_fusion_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open fusion plan " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse_fusion_plan(j);
}

FusionOutcome run_fusion_plan(const FusionPlanFile& plan, const std::filesystem::path& base_dir,
                              const GroundTruth* truth, const FusionRunOptions& options) {
  FusionOutcome out;
  std::vector<PredictionSet> stage1;
  for (const auto& stage : plan.stage1) {
    std::vector<PredictionSet> sets;
    for (const auto& p : stage.sets) {
      const std::filesystem::path path(p);
      sets.push_back(read_predictions(path.is_absolute() ? path : base_dir / path));
    }
    auto weights = stage.weights.empty() ? fusion_defaults::intra_template(sets.size())
                                         : stage.weights;
    stage1.push_back(fuse_linear(sets, weights, 0));
    out.stage1_weights.push_back(std::move(weights));
  }

  if (plan.strategy == FusionStrategy::empirical || stage1.size() == 1) {
    out.stage2_weights = plan.stage2_weights.empty() ? std::vector<double>(stage1.size(), 1.0)
                                                     : plan.stage2_weights;
  } else {
    if (!truth) throw ArgumentError("fusion: this strategy needs ground truth");
    out.stage2_weights = plan.strategy == FusionStrategy::grid
                             ? grid_search_weights(stage1, *truth, options.grid_step, options.k,
                                                   options.mode)
                             : regress_weights(stage1, *truth);
  }
  out.fused = fuse_linear(stage1, out.stage2_weights, 0);
  return out;
}

}  // namespace fagg
