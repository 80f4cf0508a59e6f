#include "fagg/transforms.hpp"

#include <algorithm>

#include "fagg/errors.hpp"

namespace fagg {

Tensor2D temporal_difference(const Tensor2D& frames) {
  if (frames.rows() < 2) throw ArgumentError("temporal_difference: needs at least 2 frames");
  Tensor2D out(frames.rows() - 1, frames.cols());
  for (std::size_t t = 0; t + 1 < frames.rows(); ++t) {
    for (std::size_t d = 0; d < frames.cols(); ++d) out(t, d) = frames(t + 1, d) - frames(t, d);
  }
  return out;
}

Tensor2D multiscale_pool(const Tensor2D& frames, std::size_t window) {
  if (window < 1) throw ArgumentError("multiscale_pool: window must be at least 1");
  const std::size_t n = (frames.rows() + window - 1) / window;
  Tensor2D out(n, frames.cols());
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t begin = j * window;
    const std::size_t end = std::min(begin + window, frames.rows());
    auto dst = out.row(j);
    for (std::size_t t = begin; t < end; ++t) {
      auto src = frames.row(t);
      for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += src[d];
    }
    for (double& v : dst) v /= static_cast<double>(end - begin);
  }
  return out;
}

std::pair<Tensor2D, Tensor2D> split_halves(const Tensor2D& frames) {
  if (frames.rows() < 2) throw ArgumentError("split_halves: needs at least 2 frames");
  const std::size_t half = frames.rows() / 2;
  return {frames.slice_rows(0, half), frames.slice_rows(half, frames.rows()).reversed_rows()};
}

Tensor2D sample_frames(const Tensor2D& frames, std::size_t count, SeededRng& rng) {
  if (count < 1) throw ArgumentError("sample_frames: count must be at least 1");
  const std::size_t total = frames.rows();
  if (total == 0) throw ArgumentError("sample_frames: empty sequence");
  if (count == total) return frames;

  std::vector<std::size_t> picks;
  picks.reserve(count);
  if (count < total) {
    // Partial Fisher-Yates.
    std::vector<std::size_t> pool(total);
    for (std::size_t i = 0; i < total; ++i) pool[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      std::swap(pool[i], pool[i + rng.uniform_index(total - i)]);
      picks.push_back(pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) picks.push_back(rng.uniform_index(total));
  }
  std::sort(picks.begin(), picks.end());

  Tensor2D out(count, frames.cols());
  for (std::size_t i = 0; i < count; ++i) {
    auto src = frames.row(picks[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void validate_transforms(std::span<const TransformSpec> specs) {
  for (const auto& s : specs) {
    if (s.kind == TransformKind::multiscale && s.window < 1) {
      throw ConfigError("multiscale transform needs window >= 1");
    }
  }
}

Tensor2D apply_transforms(const Tensor2D& frames, std::span<const TransformSpec> specs) {
  Tensor2D out = frames;
  for (const auto& s : specs) {
    switch (s.kind) {
      case TransformKind::identity:
        break;
      case TransformKind::temporal_difference:
        out = temporal_difference(out);
        break;
      case TransformKind::multiscale:
        out = multiscale_pool(out, s.window);
        break;
    }
  }
  return out;
}

std::size_t transformed_length(std::size_t frames, std::span<const TransformSpec> specs) {
  for (const auto& s : specs) {
    if (frames == 0) return 0;
    switch (s.kind) {
      case TransformKind::identity:
        break;
      case TransformKind::temporal_difference:
        frames = frames >= 2 ? frames - 1 : 0;
        break;
      case TransformKind::multiscale:
        if (s.window < 1) return 0;
        frames = (frames + s.window - 1) / s.window;
        break;
    }
  }
  return frames;
}

}  // namespace fagg
