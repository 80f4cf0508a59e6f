#pragma once

// Dense kernels, deterministic random numbers and gradient checking.
//
// All trainable code runs in 64-bit floating point. Finite-difference
// verification needs that headroom; 32-bit is only acceptable for inference.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fagg {

using Vector = std::vector<double>;

/// Row-major dense matrix.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Throws ArgumentError when values.size() != rows * cols.
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor2D from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2D from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  void fill(double v);
  bool all_finite() const noexcept;

  /// Rows [begin, end) as a new tensor.
  Tensor2D slice_rows(std::size_t begin, std::size_t end) const;
  /// Columns [begin, end) as a new tensor.
  Tensor2D slice_cols(std::size_t begin, std::size_t end) const;
  /// Rows in reverse order.
  Tensor2D reversed_rows() const;

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// A trainable tensor and its accumulated gradient.
struct Param {
  Tensor2D value;
  Tensor2D grad;

  Param() = default;
  Param(std::size_t rows, std::size_t cols) : value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad.fill(0.0); }
};

struct ParamRef {
  std::string name;
  Param* param;
};

/// splitmix64 stream.
///
///   state += 0x9E3779B97F4A7C15
///   z = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   out = z ^ (z >> 31)
///
/// Uses only 64-bit integer arithmetic, so streams match on every platform.
/// A stream has a single owner; parallel users derive child streams with split().
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Standard normal via Box-Muller (one draw pair per call).
  double normal() noexcept;
  /// Unbiased integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t state() const noexcept { return state_; }

  /// Independent child stream keyed by `key`; does not advance this stream.
  SeededRng split(std::uint64_t key) const noexcept;

 private:
  std::uint64_t state_;
};

/// The splitmix64 output finalizer.
std::uint64_t mix64(std::uint64_t z) noexcept;

/// 64-bit FNV-1a hash.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Max-subtracted softmax. Throws ArgumentError on empty input.
Vector softmax(std::span<const double> v);

double sigmoid(double x) noexcept;
double tanh_act(double x) noexcept;

/// Draws every element from N(0, stddev^2).
void fill_normal(Tensor2D& t, SeededRng& rng, double stddev);

/// A scalar-valued function of its parameters, used by grad_check.
class Differentiable {
 public:
  virtual ~Differentiable() = default;
  virtual std::vector<ParamRef> parameters() = 0;
  /// Forward pass only.
  virtual double loss(const Tensor2D& inputs) = 0;
  /// Forward and backward pass; overwrites parameter gradients.
  virtual double loss_and_gradient(const Tensor2D& inputs) = 0;
};

struct GradReport {
  std::map<std::string, double> per_parameter;
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

/// Compares analytic gradients with central differences
/// (f(θ+ε) − f(θ−ε)) / 2ε for every scalar parameter. Relative error is
/// |analytic − numeric| / max(1, |analytic|, |numeric|).
GradReport grad_check(Differentiable& layer, const Tensor2D& inputs, double epsilon = 1e-5);

}  // namespace fagg
