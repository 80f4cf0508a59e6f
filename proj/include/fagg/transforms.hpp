#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fagg/numeric.hpp"

namespace fagg {

enum class TransformKind { identity, temporal_difference, multiscale };

struct TransformSpec {
  TransformKind kind = TransformKind::identity;
  std::size_t window = 1;  // multiscale only

  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

/// Row t of the result is frames[t+1] − frames[t]; T−1 rows, no padding.
Tensor2D temporal_difference(const Tensor2D& frames);

/// Mean of consecutive windows of `window` frames. The final window may be
/// shorter and is averaged over its true length.
Tensor2D multiscale_pool(const Tensor2D& frames, std::size_t window);

/// First half frames[0, T/2) in order, second half frames[T/2, T) reversed.
/// For odd T the second half holds the extra frame.
std::pair<Tensor2D, Tensor2D> split_halves(const Tensor2D& frames);

/// S frames in ascending temporal order. Without replacement when S ≤ T
/// (S == T returns the input untouched), with replacement when S > T.
Tensor2D sample_frames(const Tensor2D& frames, std::size_t count, SeededRng& rng);

/// Applies the transforms left to right.
Tensor2D apply_transforms(const Tensor2D& frames, std::span<const TransformSpec> specs);

/// Output length after applying `specs` to a length-T sequence; 0 if invalid.
std::size_t transformed_length(std::size_t frames, std::span<const TransformSpec> specs);

void validate_transforms(std::span<const TransformSpec> specs);

}  // namespace fagg
