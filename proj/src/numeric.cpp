#include "fagg/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fagg/errors.hpp"

namespace fagg {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ArgumentError("Tensor2D: " + std::to_string(values_.size()) + " values for shape " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Tensor2D Tensor2D::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<Vector> copy;
  for (const auto& r : rows) copy.emplace_back(r);
  return from_rows(copy);
}

Tensor2D Tensor2D::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ArgumentError("Tensor2D::from_rows: ragged rows");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor2D(rows.size(), cols, std::move(values));
}

void Tensor2D::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor2D::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor2D Tensor2D::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) throw ArgumentError("Tensor2D::slice_rows: bad range");
  return Tensor2D(end - begin, cols_,
                  std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                                      values_.begin() + static_cast<std::ptrdiff_t>(end * cols_)));
}

Tensor2D Tensor2D::slice_cols(std::size_t begin, std::size_t end) const {
  if (begin > end || end > cols_) throw ArgumentError("Tensor2D::slice_cols: bad range");
  Tensor2D out(rows_, end - begin);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = (*this)(r, c);
  }
  return out;
}

Tensor2D Tensor2D::reversed_rows() const {
  Tensor2D out(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    auto src = row(rows_ - 1 - r);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t SeededRng::next_u64() noexcept {
  state_ += 0x9E3779B97F4A7C15ULL;
  return mix64(state_);
}

double SeededRng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() noexcept {
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t SeededRng::uniform_index(std::size_t n) {
  if (n == 0) throw ArgumentError("uniform_index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Reject the top partial block so every residue is equally likely.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
  std::uint64_t draw = next_u64();
  while (draw > limit) draw = next_u64();
  return static_cast<std::size_t>(draw % bound);
}

std::vector<std::size_t> SeededRng::permutation(std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(i)]);
  }
  return order;
}

SeededRng SeededRng::split(std::uint64_t key) const noexcept {
  return SeededRng(mix64(state_ ^ mix64(key + 0x9E3779B97F4A7C15ULL)));
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("softmax: empty vector");
  const double peak = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double tanh_act(double x) noexcept { return std::tanh(x); }

void fill_normal(Tensor2D& t, SeededRng& rng, double stddev) {
  for (double& v : t.values()) v = stddev * rng.normal();
}

GradReport grad_check(Differentiable& layer, const Tensor2D& inputs, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw ArgumentError("grad_check: epsilon must lie in [1e-7, 1e-3]");
  }
  auto params = layer.parameters();
  for (auto& p : params) p.param->zero_grad();
  layer.loss_and_gradient(inputs);

  std::vector<Tensor2D> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.param->grad);

  GradReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& ref = params[pi];
    auto values = ref.param->value.values();
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + epsilon;
      const double plus = layer.loss(inputs);
      values[i] = original - epsilon;
      const double minus = layer.loss(inputs);
      values[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite loss while probing " + ref.name);
      }
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = analytic[pi].values()[i];
      const double scale = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
    report.per_parameter[ref.name] = worst;
    if (worst >= report.max_relative_error) {
      report.max_relative_error = worst;
      report.worst_parameter = ref.name;
    }
  }
  return report;
}

}  // namespace fagg
