#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fagg/data.hpp"
#include "fagg/model.hpp"
#include "fagg/numeric.hpp"

namespace fagg {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  double learning_rate = 0.001;
  double decay = 0.95;  // per epoch
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 1000;  // optimizer steps
  std::optional<std::size_t> label_filter_keep;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Global gradient-norm limit, applied to recurrent models only.
  double clip_norm = 5.0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Strict: unknown keys raise ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// learning_rate · decay^epoch
double lr_at(const TrainConfig& config, std::size_t epoch);

struct LabelFilter {
  std::size_t keep = 0;
  std::vector<int> kept;  // sorted ascending

  bool contains(int label) const;
};

/// Label-space size of the large-scale challenge vocabulary and the two
/// filter sizes used for its rare-label specialists.
inline constexpr std::size_t kChallengeVocabulary = 4716;
inline constexpr std::size_t kChallengeFilterKeeps[] = {2534, 3571};

/// Keeps the `keep` labels with the fewest positives, ties by ascending index.
LabelFilter build_label_filter(const LabelVocabulary& vocab, std::size_t keep);

/// Returns the global L2 norm of all gradients before clipping.
double clip_global_norm(std::span<const ParamRef> params, double max_norm);

/// θ ← θ − lr·∇θ
void sgd_step(std::span<const ParamRef> params, double lr);

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1, double beta2, double epsilon)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(std::span<const ParamRef> params, double lr);

 private:
  double beta1_, beta2_, epsilon_;
  std::uint64_t t_ = 0;
  std::vector<Tensor2D> m_, v_;
};

struct NamedTensor {
  std::string name;
  Tensor2D value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Parameters and training metadata at one step.
struct Checkpoint {
  std::size_t step = 0;
  std::size_t epoch = 0;
  nlohmann::json config;  // {"model": ..., "train": ...}
  std::vector<NamedTensor> tensors;
  std::uint64_t rng_state = 0;
};

/// Binary layout: "FAGG", version byte 1, u32 LE metadata length, UTF-8 JSON
/// metadata (step, epoch, config, rng_state, ordered tensor directory), then
/// every tensor as little-endian f64 in directory order.
std::string encode_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError with the byte offset of the problem.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(VideoModel& model, const TrainConfig& config, std::size_t step,
                           std::size_t epoch, std::uint64_t rng_state);
VideoModel model_from_checkpoint(const Checkpoint& checkpoint);

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<double> epoch_losses;  // mean mini-batch loss per epoch
  double initial_loss = 0.0;         // full training set, before any update
  double final_loss = 0.0;           // full training set, after the last update
  std::optional<LabelFilter> filter;
  std::size_t steps = 0;
};

/// Mean inference-mode loss of `model` over `samples`.
double dataset_loss(const VideoModel& model, const std::vector<FrameSequence>& samples);

/// Seeded mini-batch training. Emits a checkpoint every `checkpoint_every`
/// steps and one at the end (with zero epochs, the initialization).
/// `spec.meta` must describe `samples`; kept labels and seed are set here.
TrainResult train(ModelSpec spec, const std::vector<FrameSequence>& samples,
                  const TrainConfig& config);

}  // namespace fagg
