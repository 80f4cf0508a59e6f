#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fagg/classifiers.hpp"
#include "fagg/data.hpp"
#include "fagg/netvlad.hpp"
#include "fagg/numeric.hpp"
#include "fagg/rnn.hpp"
#include "fagg/transforms.hpp"

namespace fagg {

enum class ModelKind { moe_meanpool, gru, lstm, netvlad };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Everything needed to rebuild a (transforms → aggregator → MoE) pipeline.
struct ModelSpec {
  ModelKind kind = ModelKind::moe_meanpool;
  RnnStackConfig rnn;                          // gru / lstm; cell follows `kind`
  NetVladConfig vlad_visual{64, 300, false};   // netvlad
  NetVladConfig vlad_audio{16, 300, false};    // netvlad, used when meta.audio_dim > 0
  std::size_t mixtures = 2;
  bool null_gate = false;
  std::vector<TransformSpec> transforms;
  DatasetMeta meta;
  std::vector<int> kept_labels;  // sorted; empty means every label
  std::uint64_t seed = 0;

  void validate() const;
  /// Number of classes the head scores.
  std::size_t output_classes() const;
};

nlohmann::json model_spec_to_json(const ModelSpec& spec);
/// Strict: unknown keys raise ConfigError.
ModelSpec model_spec_from_json(const nlohmann::json& j);

nlohmann::json transforms_to_json(const std::vector<TransformSpec>& specs);
std::vector<TransformSpec> transforms_from_json(const nlohmann::json& j);

struct ModelTrace {
  Vector descriptor;
  RnnTrace rnn;
  NetVladTrace vlad;
  MoETrace moe;
};

class VideoModel {
 public:
  /// Zero-initialized parameters.
  explicit VideoModel(ModelSpec spec);

  /// Random initialization derived from `seed`.
  void init(std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t output_classes() const noexcept { return spec_.output_classes(); }
  std::size_t descriptor_dim() const;

  /// Applies the configured transforms.
  Tensor2D transform(const Tensor2D& frames) const;

  /// Head probabilities for already-transformed frames.
  Vector class_probs(const Tensor2D& transformed, bool training, SeededRng& rng,
                     ModelTrace* trace = nullptr) const;

  /// Inference over the full vocabulary; labels outside the filter score 0.
  Vector vocab_probs(const FrameSequence& video) const;
  VideoPredictions predict(const FrameSequence& video, std::size_t top_k) const;
  PredictionSet predict(const std::vector<FrameSequence>& videos, std::size_t top_k) const;

  /// Maps vocabulary labels to head class indices, dropping filtered labels.
  std::vector<int> to_class_labels(std::span<const int> labels) const;

  /// Loss for one sample of transformed frames; `class_labels` in head indices.
  double loss(const Tensor2D& transformed, std::span<const int> class_labels, bool training,
              SeededRng& rng) const;
  /// Forward + backward; adds to parameter gradients and returns the loss.
  double accumulate_gradient(const Tensor2D& transformed, std::span<const int> class_labels,
                             SeededRng& rng);

  std::vector<ParamRef> parameters();
  void zero_grad();

  /// Inference stream for a video: a pure function of the model seed and the id.
  SeededRng inference_rng(const std::string& video_id) const;

 private:
  ModelSpec spec_;
  RnnAggregator rnn_;
  NetVladAggregator vlad_;
  MoEParams moe_;
  std::vector<int> class_of_label_;  // vocab → head index or −1
};

}  // namespace fagg
