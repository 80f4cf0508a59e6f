#pragma once

// GRU and LSTM cells, stacked recurrent aggregators and their backward passes.
//
// Cells follow the standard formulations:
//
//   GRU   z = σ(x·Wz + h·Uz + bz)        LSTM  i = σ(x·Wi + h·Ui + bi)
//         r = σ(x·Wr + h·Ur + br)              f = σ(x·Wf + h·Uf + bf)
//         n = tanh(x·Wn + (r⊙h)·Un + bn)       g = tanh(x·Wg + h·Ug + bg)
//         h' = (1−z)⊙h + z⊙n                   o = σ(x·Wo + h·Uo + bo)
//                                              c' = f⊙c + i⊙g,  h' = o⊙tanh(c')
//
// Gate blocks are laid out along the columns of the weight matrices in the
// order shown (z r n / i f g o).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fagg/numeric.hpp"

namespace fagg {

enum class CellKind { gru, lstm };
enum class RnnMode { forward, bidirectional, split_bidirectional };

struct RnnCellParams {
  CellKind kind = CellKind::gru;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Param w_input;      // input_dim × gates·H
  Param w_recurrent;  // H × gates·H
  Param bias;         // 1 × gates·H

  RnnCellParams() = default;
  /// Zero-initialized parameters.
  RnnCellParams(CellKind kind, std::size_t input_dim, std::size_t hidden_dim);

  std::size_t gates() const noexcept { return kind == CellKind::gru ? 3 : 4; }
  /// Weights from N(0, 1/fan_in); biases zero except the LSTM forget gate (1.0).
  void init(SeededRng& rng);
  void append_parameters(const std::string& prefix, std::vector<ParamRef>& out);
};

struct GruStepCache {
  Vector x, h_prev, z, r, n;
};

struct LstmStepCache {
  Vector x, h_prev, c_prev, i, f, g, o, c, tanh_c;
};

struct LstmState {
  Vector h;
  Vector c;
};

Vector gru_step(const RnnCellParams& params, std::span<const double> x,
                std::span<const double> h_prev);
Vector gru_step(const RnnCellParams& params, std::span<const double> x,
                std::span<const double> h_prev, GruStepCache& cache);
/// Accumulates parameter gradients for one step given dL/dh'.
void gru_step_backward(RnnCellParams& params, const GruStepCache& cache,
                       std::span<const double> dh, Vector& dx, Vector& dh_prev);

LstmState lstm_step(const RnnCellParams& params, std::span<const double> x,
                    std::span<const double> h_prev, std::span<const double> c_prev);
LstmState lstm_step(const RnnCellParams& params, std::span<const double> x,
                    std::span<const double> h_prev, std::span<const double> c_prev,
                    LstmStepCache& cache);
/// Accumulates parameter gradients for one step given dL/dh' and dL/dc'.
void lstm_step_backward(RnnCellParams& params, const LstmStepCache& cache,
                        std::span<const double> dh, std::span<const double> dc, Vector& dx,
                        Vector& dh_prev, Vector& dc_prev);

struct RnnStackConfig {
  CellKind cell = CellKind::gru;
  std::vector<std::size_t> layers{64, 64};
  /// Adds each layer's input sequence to its output sequence (layers above the first).
  bool residual = false;
  /// Inverted dropout on cell inputs and outputs at every step, training only.
  double recurrent_dropout = 0.0;
  RnnMode mode = RnnMode::forward;

  /// Throws ConfigError.
  void validate() const;
  /// Mode multiplier (1 or 2) times the sum of layer widths.
  std::size_t descriptor_dim() const;
};

struct RnnLayerTrace {
  std::vector<GruStepCache> gru;
  std::vector<LstmStepCache> lstm;
  std::vector<Vector> input_mask;   // empty without dropout
  std::vector<Vector> output_mask;  // empty without dropout
};

struct RnnDirectionTrace {
  std::vector<RnnLayerTrace> layers;
  std::size_t steps = 0;
};

struct RnnTrace {
  std::vector<RnnDirectionTrace> directions;
};

/// A recurrent stack (or a pair of stacks for the bidirectional modes) that
/// maps a T×D sequence to the concatenation of every layer's final state.
/// GRU layers contribute h_T, LSTM layers contribute c_T.
class RnnAggregator {
 public:
  RnnAggregator() = default;
  RnnAggregator(RnnStackConfig config, std::size_t input_dim);

  void init(SeededRng& rng);

  Vector forward(const Tensor2D& frames, bool training, SeededRng& rng) const;
  Vector forward(const Tensor2D& frames, bool training, SeededRng& rng, RnnTrace& trace) const;
  /// Accumulates parameter gradients from dL/d(descriptor).
  void backward(const RnnTrace& trace, std::span<const double> d_descriptor);

  std::vector<ParamRef> parameters();

  const RnnStackConfig& config() const noexcept { return config_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t descriptor_dim() const { return config_.descriptor_dim(); }

  /// Cells of direction 0 (forward) or 1 (reverse / second half).
  std::vector<RnnCellParams>& direction(std::size_t i) { return directions_.at(i); }

 private:
  Vector run_direction(std::size_t dir, const Tensor2D& seq, bool training, SeededRng& rng,
                       RnnDirectionTrace* trace) const;
  void backward_direction(std::size_t dir, const RnnDirectionTrace& trace,
                          std::span<const double> d_descriptor);

  RnnStackConfig config_;
  std::size_t input_dim_ = 0;
  std::vector<std::vector<RnnCellParams>> directions_;
};

Vector rnn_aggregate(const RnnAggregator& stack, const Tensor2D& frames, bool training,
                     SeededRng& rng);

}  // namespace fagg
