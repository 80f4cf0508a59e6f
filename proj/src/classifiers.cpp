#include "fagg/classifiers.hpp"

#include <algorithm>
#include <cmath>

#include "fagg/errors.hpp"

namespace fagg {

MoEParams::MoEParams(std::size_t in, std::size_t c, std::size_t m, bool null)
    : input_dim(in), classes(c), mixtures(m), null_gate(null) {
  if (in == 0 || c == 0 || m == 0) throw ConfigError("moe: dimensions must be positive");
  gate_w = Param(in, c * gates());
  gate_b = Param(1, c * gates());
  expert_w = Param(in, c * m);
  expert_b = Param(1, c * m);
}

void MoEParams::init(SeededRng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(input_dim));
  fill_normal(gate_w.value, rng, stddev);
  fill_normal(expert_w.value, rng, stddev);
  gate_b.value.fill(0.0);
  expert_b.value.fill(0.0);
}

void MoEParams::append_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "gate_w", &gate_w});
  out.push_back({prefix + "gate_b", &gate_b});
  out.push_back({prefix + "expert_w", &expert_w});
  out.push_back({prefix + "expert_b", &expert_b});
}

bool is_standard_mixture_count(std::size_t m) noexcept {
  return m == 1 || m == 2 || m == 4 || m == 8 || m == 16;
}

Vector moe_forward(const MoEParams& params, std::span<const double> descriptor) {
  MoETrace trace;
  return moe_forward(params, descriptor, trace);
}

Vector moe_forward(const MoEParams& params, std::span<const double> x, MoETrace& trace) {
  if (x.size() != params.input_dim) {
    throw ArgumentError("moe_forward: descriptor has " + std::to_string(x.size()) +
                        " values, expected " + std::to_string(params.input_dim));
  }
  const std::size_t C = params.classes, M = params.mixtures, G = params.gates();

  Vector gate_logits(params.gate_b.value.values().begin(), params.gate_b.value.values().end());
  Vector expert_logits(params.expert_b.value.values().begin(),
                       params.expert_b.value.values().end());
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double xd = x[d];
    if (xd == 0.0) continue;
    const auto grow = params.gate_w.value.row(d);
    for (std::size_t j = 0; j < gate_logits.size(); ++j) gate_logits[j] += xd * grow[j];
    const auto erow = params.expert_w.value.row(d);
    for (std::size_t j = 0; j < expert_logits.size(); ++j) expert_logits[j] += xd * erow[j];
  }

  trace.input.assign(x.begin(), x.end());
  trace.gates = Tensor2D(C, G);
  trace.experts = Tensor2D(C, M);
  Vector probs(C);
  for (std::size_t c = 0; c < C; ++c) {
    const Vector g = softmax(std::span<const double>(gate_logits).subspan(c * G, G));
    double p = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      const double e = sigmoid(expert_logits[c * M + m]);
      trace.experts(c, m) = e;
      p += g[m] * e;
    }
    std::copy(g.begin(), g.end(), trace.gates.row(c).begin());
    probs[c] = p;
  }
  return probs;
}

Vector moe_backward(MoEParams& params, const MoETrace& trace, std::span<const double> d_probs) {
  const std::size_t C = params.classes, M = params.mixtures, G = params.gates();
  if (d_probs.size() != C) throw ArgumentError("moe_backward: gradient size mismatch");

  Vector d_gate_logits(C * G, 0.0);
  Vector d_expert_logits(C * M, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double dp = d_probs[c];
    // dL/dgate_m = dp · e_m (null gate has e = 0)
    double weighted = 0.0;
    for (std::size_t m = 0; m < M; ++m) weighted += trace.gates(c, m) * dp * trace.experts(c, m);
    for (std::size_t m = 0; m < G; ++m) {
      const double dg = m < M ? dp * trace.experts(c, m) : 0.0;
      d_gate_logits[c * G + m] = trace.gates(c, m) * (dg - weighted);
    }
    for (std::size_t m = 0; m < M; ++m) {
      const double e = trace.experts(c, m);
      d_expert_logits[c * M + m] = dp * trace.gates(c, m) * e * (1.0 - e);
    }
  }

  Vector dx(params.input_dim, 0.0);
  for (std::size_t d = 0; d < params.input_dim; ++d) {
    const double xd = trace.input[d];
    auto ggrad = params.gate_w.grad.row(d);
    auto egrad = params.expert_w.grad.row(d);
    const auto gw = params.gate_w.value.row(d);
    const auto ew = params.expert_w.value.row(d);
    double s = 0.0;
    for (std::size_t j = 0; j < d_gate_logits.size(); ++j) {
      ggrad[j] += xd * d_gate_logits[j];
      s += gw[j] * d_gate_logits[j];
    }
    for (std::size_t j = 0; j < d_expert_logits.size(); ++j) {
      egrad[j] += xd * d_expert_logits[j];
      s += ew[j] * d_expert_logits[j];
    }
    dx[d] = s;
  }
  auto gb = params.gate_b.grad.row(0);
  for (std::size_t j = 0; j < d_gate_logits.size(); ++j) gb[j] += d_gate_logits[j];
  auto eb = params.expert_b.grad.row(0);
  for (std::size_t j = 0; j < d_expert_logits.size(); ++j) eb[j] += d_expert_logits[j];
  return dx;
}

namespace {

std::vector<char> indicator(std::span<const int> labels, std::size_t vocab) {
  std::vector<char> y(vocab, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= vocab) {
      throw ArgumentError("bce: label " + std::to_string(l) + " outside vocabulary");
    }
    y[static_cast<std::size_t>(l)] = 1;
  }
  return y;
}

void check_probs(std::span<const double> probs, std::size_t vocab) {
  if (probs.size() != vocab) throw ArgumentError("bce: probability vector length != vocab");
  if (vocab == 0) throw ArgumentError("bce: empty vocabulary");
}

}  // namespace

double bce_loss(std::span<const double> probs, std::span<const int> labels, std::size_t vocab) {
  check_probs(probs, vocab);
  const auto y = indicator(labels, vocab);
  double total = 0.0;
  for (std::size_t c = 0; c < vocab; ++c) {
    const double p = std::clamp(probs[c], kProbabilityClamp, 1.0 - kProbabilityClamp);
    total -= y[c] ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(vocab);
}

Vector bce_gradient(std::span<const double> probs, std::span<const int> labels, std::size_t vocab) {
  check_probs(probs, vocab);
  const auto y = indicator(labels, vocab);
  Vector grad(vocab, 0.0);
  const double scale = 1.0 / static_cast<double>(vocab);
  for (std::size_t c = 0; c < vocab; ++c) {
    const double p = probs[c];
    if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) continue;
    grad[c] = scale * (y[c] ? -1.0 / p : 1.0 / (1.0 - p));
  }
  return grad;
}

std::vector<ScoredLabel> predict_topk(std::span<const double> probs, std::size_t k) {
  if (k < 1) throw ArgumentError("predict_topk: k must be at least 1");
  std::vector<ScoredLabel> out;
  out.reserve(probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c) out.push_back({static_cast<int>(c), probs[c]});
  rank_and_truncate(out, k);
  return out;
}

}  // namespace fagg
