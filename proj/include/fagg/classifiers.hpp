#pragma once

// Video-level classification heads.
//
// Mixture of experts, per class c with M experts:
//
//   p_c = Σ_m softmax(x·G_c + g_c)_m · σ(x·E_cm + e_cm)
//
// With the optional null gate the softmax runs over M+1 logits and the extra
// gate carries no expert, letting a class abstain.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fagg/numeric.hpp"
#include "fagg/predictions.hpp"

namespace fagg {

struct MoEParams {
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  std::size_t mixtures = 1;
  bool null_gate = false;
  Param gate_w;    // input_dim × classes·gates
  Param gate_b;    // 1 × classes·gates
  Param expert_w;  // input_dim × classes·mixtures
  Param expert_b;  // 1 × classes·mixtures

  MoEParams() = default;
  /// Zero-initialized parameters.
  MoEParams(std::size_t input_dim, std::size_t classes, std::size_t mixtures,
            bool null_gate = false);

  std::size_t gates() const noexcept { return mixtures + (null_gate ? 1 : 0); }
  void init(SeededRng& rng);
  void append_parameters(const std::string& prefix, std::vector<ParamRef>& out);
};

/// True for the mixture counts used in practice (1, 2, 4, 8, 16).
bool is_standard_mixture_count(std::size_t mixtures) noexcept;

struct MoETrace {
  Vector input;
  Tensor2D gates;    // classes × gates
  Tensor2D experts;  // classes × mixtures, after sigmoid
};

Vector moe_forward(const MoEParams& params, std::span<const double> descriptor);
Vector moe_forward(const MoEParams& params, std::span<const double> descriptor, MoETrace& trace);
/// Accumulates parameter gradients and returns dL/d(descriptor).
Vector moe_backward(MoEParams& params, const MoETrace& trace, std::span<const double> d_probs);

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean over classes of −[y log p + (1−y) log(1−p)], p clamped to [1e-7, 1−1e-7].
/// `labels` holds the positive class indices.
double bce_loss(std::span<const double> probs, std::span<const int> labels, std::size_t vocab);
/// dL/dp for bce_loss; zero where the clamp is active.
Vector bce_gradient(std::span<const double> probs, std::span<const int> labels, std::size_t vocab);

/// The k highest-probability labels, descending, ties by ascending label.
std::vector<ScoredLabel> predict_topk(std::span<const double> probs, std::size_t k);

}  // namespace fagg
