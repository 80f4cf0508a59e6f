#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fagg/numeric.hpp"
#include "fagg/predictions.hpp"

namespace fagg {

/// One video: T×D frame features (frame t is row t) and its label set.
struct FrameSequence {
  std::string id;
  Tensor2D frames;
  std::vector<int> labels;  // sorted, distinct

  friend bool operator==(const FrameSequence&, const FrameSequence&) = default;
};

struct DatasetMeta {
  std::size_t dim = 0;
  std::size_t visual_dim = 0;
  std::size_t audio_dim = 0;
  std::size_t vocab = 1;
  std::size_t samples = 0;  // not stored in the file header; filled by readers

  void validate() const;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<FrameSequence> samples;
};

struct LabelVocabulary {
  std::size_t size = 0;
  std::vector<std::size_t> positive_counts;
};

/// Streams samples from a line-delimited JSON dataset file.
///
/// Line 1: {"version":1,"dim":D,"visual_dim":V,"audio_dim":A,"vocab":C}
/// Line n: {"id":"...","labels":[...],"frames":[[D reals], ...]}
///
/// Frame values are stored at 32-bit precision and widened on read.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);

  const DatasetMeta& meta() const noexcept { return meta_; }
  /// Next sample in file order, or nullopt at end of file.
  std::optional<FrameSequence> next();

 private:
  std::ifstream in_;
  std::string path_;
  DatasetMeta meta_;
  std::size_t line_ = 0;
};

Dataset load_dataset(const std::filesystem::path& path);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// Rounds to float precision, as stored on disk.
double to_storage_precision(double v) noexcept;

/// Formats a confidence with six decimals, ties to even.
std::string format_confidence(double v);

/// CSV with header "VideoId,LabelConfidencePairs" and rows "id,label conf label conf ...".
/// Each row holds min(top_k, scored labels) pairs ranked by ranks_before.
void write_predictions(const PredictionSet& preds, const std::filesystem::path& path,
                       std::size_t top_k = 20);
std::string format_predictions(const PredictionSet& preds, std::size_t top_k = 20);
PredictionSet read_predictions(const std::filesystem::path& path);

LabelVocabulary build_vocabulary(const std::vector<FrameSequence>& samples, std::size_t vocab);

struct SyntheticOptions {
  std::size_t classes = 5;
  std::size_t videos = 500;
  std::size_t frames = 20;
  std::size_t dim = 16;
  std::size_t audio_dim = 0;
  double noise = 0.1;
  double multilabel_rate = 0.1;
  std::uint64_t seed = 7;
};

struct SyntheticDataset {
  Dataset dataset;
  Tensor2D prototypes;  // classes × D
  Tensor2D drifts;      // classes × D
  std::size_t frames = 0;

  /// Class c's noiseless trajectory value at frame t, before storage rounding.
  Vector trajectory(std::size_t c, std::size_t t) const;
};

/// Each class owns a prototype vector plus a linear drift over time. A video's
/// frame t is the sum of its classes' trajectories plus noise·N(0,1). Labels
/// are one primary class plus each other class with probability multilabel_rate.
SyntheticDataset generate_synthetic(const SyntheticOptions& options);

}  // namespace fagg
