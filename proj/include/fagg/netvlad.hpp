#pragma once

// Temporal NetVLAD.
//
// S frames R (S×D) are sampled from the sequence, softly assigned to K
// clusters by a width-1 convolution followed by a row softmax,
//
//   A = softmax_rows(R·kernel + bias)                    (S×K)
//
// and pooled into per-cluster residual sums
//
//   v_k = Σ_i a_ik (r_i − u_k)
//
// concatenated as v_1 ... v_K into a fixed K·D descriptor.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fagg/data.hpp"
#include "fagg/numeric.hpp"

namespace fagg {

struct NetVladConfig {
  std::size_t clusters = 4;
  /// Frames sampled per video; the effective count is min(T, sample_size).
  std::size_t sample_size = 300;
  /// L2-normalizes each v_k. Off by default.
  bool intra_normalize = false;

  friend bool operator==(const NetVladConfig&, const NetVladConfig&) = default;
};

struct NetVladParams {
  NetVladConfig config;
  std::size_t dim = 0;
  Param centers;  // K × D
  Param kernel;   // D × K
  Param bias;     // 1 × K

  NetVladParams() = default;
  /// Zero-initialized parameters.
  NetVladParams(NetVladConfig config, std::size_t dim);

  std::size_t clusters() const noexcept { return config.clusters; }
  std::size_t descriptor_dim() const noexcept { return config.clusters * dim; }
  /// Centers and kernel from N(0, 1/D), zero bias.
  void init(SeededRng& rng);
  void append_parameters(const std::string& prefix, std::vector<ParamRef>& out);
};

/// Row-softmaxed assignment strengths, S×K.
Tensor2D netvlad_assign(const Tensor2D& samples, const NetVladParams& params);

/// v_1 ... v_K laid out over D each.
Vector netvlad_aggregate(const Tensor2D& samples, const Tensor2D& assign, const Tensor2D& centers);

struct NetVladLayerTrace {
  Tensor2D samples;
  Tensor2D assign;
  Tensor2D raw;      // unnormalized v_k rows, K×D
  Vector norms;      // per-cluster norms when intra_normalize
};

/// Assign + aggregate (+ optional normalization) on already-sampled frames.
Vector netvlad_layer_forward(const NetVladParams& params, const Tensor2D& samples,
                             NetVladLayerTrace* trace = nullptr);
/// Accumulates parameter gradients from dL/d(descriptor).
void netvlad_layer_backward(NetVladParams& params, const NetVladLayerTrace& trace,
                            std::span<const double> d_descriptor);

struct NetVladTrace {
  NetVladLayerTrace visual;
  std::optional<NetVladLayerTrace> audio;
};

/// Separate VLAD layers over the visual and audio column blocks, concatenated
/// visual first. An audio block of width zero is skipped.
class NetVladAggregator {
 public:
  NetVladAggregator() = default;
  NetVladAggregator(const DatasetMeta& meta, NetVladConfig visual, NetVladConfig audio);

  void init(SeededRng& rng);

  Vector forward(const Tensor2D& frames, SeededRng& rng) const;
  Vector forward(const Tensor2D& frames, SeededRng& rng, NetVladTrace& trace) const;
  void backward(const NetVladTrace& trace, std::span<const double> d_descriptor);

  std::vector<ParamRef> parameters();
  std::size_t descriptor_dim() const;

  NetVladParams& visual() { return visual_; }
  std::optional<NetVladParams>& audio() { return audio_; }

 private:
  std::size_t visual_dim_ = 0;
  NetVladParams visual_;
  std::optional<NetVladParams> audio_;
};

Vector netvlad_forward(const Tensor2D& frames, const DatasetMeta& meta,
                       const NetVladParams& visual, const NetVladParams* audio, SeededRng& rng);

/// Column-wise mean of the frames.
Vector mean_pool(const Tensor2D& frames);

}  // namespace fagg
