#pragma once

// Linear weighted fusion of prediction sets, in two stages: checkpoints of one
// model first (intra-model), then the per-model results (inter-model).

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fagg/metrics.hpp"
#include "fagg/predictions.hpp"

namespace fagg {

/// Per video and label: Σ_j w_j · score_j, where a label missing from a
/// source scores 0 and zero-weight sources are ignored. Scores are divided by
/// Σ w when Σ w > 1. Each video keeps its top_k labels (0 keeps all).
/// Throws DataError unless every source covers the same videos.
PredictionSet fuse_linear(std::span<const PredictionSet> sets, std::span<const double> weights,
                          std::size_t top_k = 0);

struct ModelCheckpointSets {
  std::vector<PredictionSet> checkpoints;
  std::vector<double> intra_weights;
};

/// Stage 1 fuses each model's checkpoints, stage 2 fuses the models.
PredictionSet fuse_two_stage(std::span<const ModelCheckpointSets> models,
                             std::span<const double> inter_weights, std::size_t top_k = 0);

/// Exhaustive search over the simplex grid {w_j ∈ {0, step, 2·step, ...}, Σ w = 1}
/// maximizing gap_at; ties go to the lexicographically smallest vector.
/// Accepts 2 to 5 sets and step ∈ {0.05, 0.1, 0.25, 0.5}.
std::vector<double> grid_search_weights(std::span<const PredictionSet> sets,
                                        const GroundTruth& truth, double step,
                                        std::size_t k = 20,
                                        GapMMode mode = GapMMode::in_predictions);

/// Least squares of Σ_j w_j · score_j against binary relevance over every
/// (video, label) scored by any source, via ridge-regularized (1e-6) normal
/// equations. Negative weights are clamped to 0 and the rest rescaled to sum
/// to 1 (uniform if all vanish).
std::vector<double> regress_weights(std::span<const PredictionSet> sets, const GroundTruth& truth);

inline constexpr double kRegressionRidge = 1e-6;

namespace fusion_defaults {

/// Intra-model weights shipped for 3, 4 and 5 checkpoints (newest first).
/// One checkpoint gets {1.0}; other counts throw ArgumentError.
std::vector<double> intra_template(std::size_t checkpoints);

struct ReferenceModel {
  std::string name;
  std::vector<std::size_t> checkpoint_iterations;  // thousands of steps
  std::vector<double> intra_weights;
  double inter_weight;
};

/// The nine-model reference ensemble with its intra- and inter-model weights.
const std::vector<ReferenceModel>& reference_ensemble();

}  // namespace fusion_defaults

enum class FusionStrategy { empirical, grid, regress };

struct FusionPlanStage {
  std::vector<std::string> sets;  // prediction CSV paths
  std::vector<double> weights;    // empty: use intra_template
};

/// {"stage1":[{"sets":[paths],"weights":[...]}],"stage2":{"weights":[...]},
///  "strategy":"empirical|grid|regress"}
struct FusionPlanFile {
  std::vector<FusionPlanStage> stage1;
  std::vector<double> stage2_weights;  // empty: all 1.0 (empirical) or learned
  FusionStrategy strategy = FusionStrategy::empirical;
};

/// Strict: unknown keys raise ConfigError.
FusionPlanFile parse_fusion_plan(const nlohmann::json& j);
FusionPlanFile load_fusion_plan(const std::filesystem::path& path);

struct FusionRunOptions {
  double grid_step = 0.05;
  std::size_t k = 20;
  GapMMode mode = GapMMode::in_predictions;
};

struct FusionOutcome {
  PredictionSet fused;
  std::vector<std::vector<double>> stage1_weights;
  std::vector<double> stage2_weights;
};

/// Loads every set (relative paths resolve against base_dir) and runs both
/// stages. The grid and regress strategies learn the stage-2 weights and
/// need `truth`.
FusionOutcome run_fusion_plan(const FusionPlanFile& plan, const std::filesystem::path& base_dir,
                              const GroundTruth* truth, const FusionRunOptions& options);

}  // namespace fagg
