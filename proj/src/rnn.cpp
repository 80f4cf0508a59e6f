#include "fagg/rnn.hpp"

#include <cmath>

#include "fagg/errors.hpp"
#include "fagg/transforms.hpp"

namespace fagg {

RnnCellParams::RnnCellParams(CellKind k, std::size_t in, std::size_t hidden)
    : kind(k), input_dim(in), hidden_dim(hidden) {
  if (in == 0 || hidden == 0) throw ArgumentError("RnnCellParams: dimensions must be positive");
  const std::size_t width = gates() * hidden;
  w_input = Param(in, width);
  w_recurrent = Param(hidden, width);
  bias = Param(1, width);
}

void RnnCellParams::init(SeededRng& rng) {
  fill_normal(w_input.value, rng, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  fill_normal(w_recurrent.value, rng, 1.0 / std::sqrt(static_cast<double>(hidden_dim)));
  bias.value.fill(0.0);
  if (kind == CellKind::lstm) {
    for (std::size_t j = 0; j < hidden_dim; ++j) bias.value(0, hidden_dim + j) = 1.0;
  }
}

void RnnCellParams::append_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "w_input", &w_input});
  out.push_back({prefix + "w_recurrent", &w_recurrent});
  out.push_back({prefix + "bias", &bias});
}

namespace {

void check_dims(const RnnCellParams& p, CellKind kind, std::size_t x, std::size_t h) {
  if (p.kind != kind) throw ArgumentError("rnn step: cell kind mismatch");
  if (x != p.input_dim) {
    throw ArgumentError("rnn step: input has " + std::to_string(x) + " values, expected " +
                        std::to_string(p.input_dim));
  }
  if (h != p.hidden_dim) {
    throw ArgumentError("rnn step: state has " + std::to_string(h) + " values, expected " +
                        std::to_string(p.hidden_dim));
  }
}

// out[j] += Σ_i v[i] · m(i, offset + j) for j < out.size()
void accumulate_vm(std::span<const double> v, const Tensor2D& m, std::size_t offset,
                   std::span<double> out) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    const double* row = m.row(i).data() + offset;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += vi * row[j];
  }
}

// out[i] += Σ_j m(i, offset + j) · g[j]
void accumulate_mv(const Tensor2D& m, std::size_t offset, std::span<const double> g,
                   std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = m.row(i).data() + offset;
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) s += row[j] * g[j];
    out[i] += s;
  }
}

// grad(i, offset + j) += v[i] · g[j]
void accumulate_outer(std::span<const double> v, std::span<const double> g, std::size_t offset,
                      Tensor2D& grad) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    double* row = grad.row(i).data() + offset;
    for (std::size_t j = 0; j < g.size(); ++j) row[j] += vi * g[j];
  }
}

}  // namespace

Vector gru_step(const RnnCellParams& params, std::span<const double> x,
                std::span<const double> h_prev) {
  GruStepCache cache;
  return gru_step(params, x, h_prev, cache);
}

Vector gru_step(const RnnCellParams& params, std::span<const double> x,
                std::span<const double> h_prev, GruStepCache& cache) {
  check_dims(params, CellKind::gru, x.size(), h_prev.size());
  const std::size_t H = params.hidden_dim;
  const auto& W = params.w_input.value;
  const auto& U = params.w_recurrent.value;
  const auto b = params.bias.value.row(0);

  Vector pre(3 * H);
  for (std::size_t j = 0; j < 3 * H; ++j) pre[j] = b[j];
  accumulate_vm(x, W, 0, pre);
  accumulate_vm(h_prev, U, 0, std::span<double>(pre).first(2 * H));

  cache.x.assign(x.begin(), x.end());
  cache.h_prev.assign(h_prev.begin(), h_prev.end());
  cache.z.resize(H);
  cache.r.resize(H);
  cache.n.resize(H);
  Vector rh(H);
  for (std::size_t j = 0; j < H; ++j) {
    cache.z[j] = sigmoid(pre[j]);
    cache.r[j] = sigmoid(pre[H + j]);
    rh[j] = cache.r[j] * h_prev[j];
  }
  accumulate_vm(rh, U, 2 * H, std::span<double>(pre).subspan(2 * H));

  Vector h(H);
  for (std::size_t j = 0; j < H; ++j) {
    cache.n[j] = tanh_act(pre[2 * H + j]);
    h[j] = (1.0 - cache.z[j]) * h_prev[j] + cache.z[j] * cache.n[j];
  }
  return h;
}

void gru_step_backward(RnnCellParams& params, const GruStepCache& cache,
                       std::span<const double> dh, Vector& dx, Vector& dh_prev) {
  const std::size_t H = params.hidden_dim;
  const auto& W = params.w_input.value;
  const auto& U = params.w_recurrent.value;

  Vector da(3 * H);  // pre-activation gradients, blocks z r n
  dh_prev.assign(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    const double z = cache.z[j];
    const double n = cache.n[j];
    da[j] = dh[j] * (n - cache.h_prev[j]) * z * (1.0 - z);
    da[2 * H + j] = dh[j] * z * (1.0 - n * n);
    dh_prev[j] = dh[j] * (1.0 - z);
  }

  // Candidate path through r ⊙ h_prev.
  Vector rh(H);
  for (std::size_t j = 0; j < H; ++j) rh[j] = cache.r[j] * cache.h_prev[j];
  const auto da_n = std::span<const double>(da).subspan(2 * H);
  Vector d_rh(H, 0.0);
  accumulate_mv(U, 2 * H, da_n, d_rh);
  accumulate_outer(rh, da_n, 2 * H, params.w_recurrent.grad);
  for (std::size_t j = 0; j < H; ++j) {
    const double r = cache.r[j];
    da[H + j] = d_rh[j] * cache.h_prev[j] * r * (1.0 - r);
    dh_prev[j] += d_rh[j] * r;
  }

  const auto da_zr = std::span<const double>(da).first(2 * H);
  accumulate_outer(cache.h_prev, da_zr, 0, params.w_recurrent.grad);
  accumulate_mv(U, 0, da_zr, dh_prev);

  accumulate_outer(cache.x, da, 0, params.w_input.grad);
  auto db = params.bias.grad.row(0);
  for (std::size_t j = 0; j < 3 * H; ++j) db[j] += da[j];

  dx.assign(params.input_dim, 0.0);
  accumulate_mv(W, 0, da, dx);
}

LstmState lstm_step(const RnnCellParams& params, std::span<const double> x,
                    std::span<const double> h_prev, std::span<const double> c_prev) {
  LstmStepCache cache;
  return lstm_step(params, x, h_prev, c_prev, cache);
}

LstmState lstm_step(const RnnCellParams& params, std::span<const double> x,
                    std::span<const double> h_prev, std::span<const double> c_prev,
                    LstmStepCache& cache) {
  check_dims(params, CellKind::lstm, x.size(), h_prev.size());
  if (c_prev.size() != params.hidden_dim) throw ArgumentError("lstm_step: cell state size");
  const std::size_t H = params.hidden_dim;
  const auto b = params.bias.value.row(0);

  Vector pre(b.begin(), b.end());
  accumulate_vm(x, params.w_input.value, 0, pre);
  accumulate_vm(h_prev, params.w_recurrent.value, 0, pre);

  cache.x.assign(x.begin(), x.end());
  cache.h_prev.assign(h_prev.begin(), h_prev.end());
  cache.c_prev.assign(c_prev.begin(), c_prev.end());
  cache.i.resize(H);
  cache.f.resize(H);
  cache.g.resize(H);
  cache.o.resize(H);
  cache.c.resize(H);
  cache.tanh_c.resize(H);

  LstmState out{Vector(H), Vector(H)};
  for (std::size_t j = 0; j < H; ++j) {
    cache.i[j] = sigmoid(pre[j]);
    cache.f[j] = sigmoid(pre[H + j]);
    cache.g[j] = tanh_act(pre[2 * H + j]);
    cache.o[j] = sigmoid(pre[3 * H + j]);
    cache.c[j] = cache.f[j] * c_prev[j] + cache.i[j] * cache.g[j];
    cache.tanh_c[j] = tanh_act(cache.c[j]);
    out.c[j] = cache.c[j];
    out.h[j] = cache.o[j] * cache.tanh_c[j];
  }
  return out;
}

void lstm_step_backward(RnnCellParams& params, const LstmStepCache& cache,
                        std::span<const double> dh, std::span<const double> dc, Vector& dx,
                        Vector& dh_prev, Vector& dc_prev) {
  const std::size_t H = params.hidden_dim;
  Vector da(4 * H);
  dc_prev.assign(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    const double tc = cache.tanh_c[j];
    const double dct = dc[j] + dh[j] * cache.o[j] * (1.0 - tc * tc);
    const double i = cache.i[j], f = cache.f[j], g = cache.g[j], o = cache.o[j];
    da[j] = dct * g * i * (1.0 - i);
    da[H + j] = dct * cache.c_prev[j] * f * (1.0 - f);
    da[2 * H + j] = dct * i * (1.0 - g * g);
    da[3 * H + j] = dh[j] * tc * o * (1.0 - o);
    dc_prev[j] = dct * f;
  }
  accumulate_outer(cache.x, da, 0, params.w_input.grad);
  accumulate_outer(cache.h_prev, da, 0, params.w_recurrent.grad);
  auto db = params.bias.grad.row(0);
  for (std::size_t j = 0; j < 4 * H; ++j) db[j] += da[j];

  dx.assign(params.input_dim, 0.0);
  accumulate_mv(params.w_input.value, 0, da, dx);
  dh_prev.assign(H, 0.0);
  accumulate_mv(params.w_recurrent.value, 0, da, dh_prev);
}

void RnnStackConfig::validate() const {
  if (layers.empty()) throw ConfigError("rnn: at least one layer required");
  for (std::size_t h : layers) {
    if (h == 0) throw ConfigError("rnn: layer width must be positive");
  }
  if (!(recurrent_dropout >= 0.0 && recurrent_dropout < 1.0)) {
    throw ConfigError("rnn: recurrent dropout must lie in [0, 1)");
  }
  if (residual) {
    for (std::size_t l = 1; l < layers.size(); ++l) {
      if (layers[l] != layers[l - 1]) {
        throw ConfigError("rnn: residual connections need equal adjacent layer widths (" +
                          std::to_string(layers[l - 1]) + " vs " + std::to_string(layers[l]) +
                          ")");
      }
    }
  }
}

std::size_t RnnStackConfig::descriptor_dim() const {
  std::size_t total = 0;
  for (std::size_t h : layers) total += h;
  return mode == RnnMode::forward ? total : 2 * total;
}

RnnAggregator::RnnAggregator(RnnStackConfig config, std::size_t input_dim)
    : config_(std::move(config)), input_dim_(input_dim) {
  config_.validate();
  if (input_dim_ == 0) throw ConfigError("rnn: input dimension must be positive");
  const std::size_t n_dirs = config_.mode == RnnMode::forward ? 1 : 2;
  directions_.resize(n_dirs);
  for (auto& cells : directions_) {
    std::size_t in = input_dim_;
    for (std::size_t h : config_.layers) {
      cells.emplace_back(config_.cell, in, h);
      in = h;
    }
  }
}

void RnnAggregator::init(SeededRng& rng) {
  for (auto& cells : directions_) {
    for (auto& cell : cells) cell.init(rng);
  }
}

std::vector<ParamRef> RnnAggregator::parameters() {
  std::vector<ParamRef> out;
  static const char* names[] = {"fw", "bw"};
  for (std::size_t d = 0; d < directions_.size(); ++d) {
    for (std::size_t l = 0; l < directions_[d].size(); ++l) {
      directions_[d][l].append_parameters(
          std::string("rnn/") + names[d] + "/layer" + std::to_string(l) + "/", out);
    }
  }
  return out;
}

namespace {

Vector dropout_mask(std::size_t n, double rate, SeededRng& rng) {
  Vector m(n);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : m) v = rng.uniform() < rate ? 0.0 : keep_scale;
  return m;
}

}  // namespace

Vector RnnAggregator::run_direction(std::size_t dir, const Tensor2D& seq, bool training,
                                    SeededRng& rng, RnnDirectionTrace* trace) const {
  const auto& cells = directions_[dir];
  const std::size_t T = seq.rows();
  if (T == 0) throw ArgumentError("rnn: empty sequence");
  if (seq.cols() != input_dim_) {
    throw ArgumentError("rnn: frames have " + std::to_string(seq.cols()) +
                        " features, expected " + std::to_string(input_dim_));
  }
  const bool dropout = training && config_.recurrent_dropout > 0.0;
  if (trace) {
    trace->layers.assign(cells.size(), {});
    trace->steps = T;
  }

  Vector descriptor;
  Tensor2D input = seq;
  for (std::size_t l = 0; l < cells.size(); ++l) {
    const auto& cell = cells[l];
    const std::size_t H = cell.hidden_dim;
    const bool residual = config_.residual && l > 0;
    RnnLayerTrace* lt = trace ? &trace->layers[l] : nullptr;

    Tensor2D output(T, H);
    Vector h(H, 0.0), c(H, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      Vector x(input.row(t).begin(), input.row(t).end());
      Vector in_mask, out_mask;
      if (dropout) {
        in_mask = dropout_mask(x.size(), config_.recurrent_dropout, rng);
        out_mask = dropout_mask(H, config_.recurrent_dropout, rng);
        for (std::size_t d = 0; d < x.size(); ++d) x[d] *= in_mask[d];
      }
      if (cell.kind == CellKind::gru) {
        if (lt) {
          lt->gru.emplace_back();
          h = gru_step(cell, x, h, lt->gru.back());
        } else {
          h = gru_step(cell, x, h);
        }
      } else {
        LstmState s;
        if (lt) {
          lt->lstm.emplace_back();
          s = lstm_step(cell, x, h, c, lt->lstm.back());
        } else {
          s = lstm_step(cell, x, h, c);
        }
        h = std::move(s.h);
        c = std::move(s.c);
      }
      auto out = output.row(t);
      for (std::size_t j = 0; j < H; ++j) out[j] = dropout ? h[j] * out_mask[j] : h[j];
      if (residual) {
        auto in = input.row(t);
        for (std::size_t j = 0; j < H; ++j) out[j] += in[j];
      }
      if (lt && dropout) {
        lt->input_mask.push_back(std::move(in_mask));
        lt->output_mask.push_back(std::move(out_mask));
      }
    }
    const Vector& final_state = cell.kind == CellKind::gru ? h : c;
    descriptor.insert(descriptor.end(), final_state.begin(), final_state.end());
    input = std::move(output);
  }
  return descriptor;
}

Vector RnnAggregator::forward(const Tensor2D& frames, bool training, SeededRng& rng) const {
  RnnTrace unused;
  return forward(frames, training, rng, unused);
}

Vector RnnAggregator::forward(const Tensor2D& frames, bool training, SeededRng& rng,
                              RnnTrace& trace) const {
  trace.directions.assign(directions_.size(), {});
  switch (config_.mode) {
    case RnnMode::forward:
      return run_direction(0, frames, training, rng, &trace.directions[0]);
    case RnnMode::bidirectional: {
      Vector out = run_direction(0, frames, training, rng, &trace.directions[0]);
      Vector back = run_direction(1, frames.reversed_rows(), training, rng, &trace.directions[1]);
      out.insert(out.end(), back.begin(), back.end());
      return out;
    }
    case RnnMode::split_bidirectional: {
      auto [first, second] = split_halves(frames);
      Vector out = run_direction(0, first, training, rng, &trace.directions[0]);
      Vector back = run_direction(1, second, training, rng, &trace.directions[1]);
      out.insert(out.end(), back.begin(), back.end());
      return out;
    }
  }
  return {};
}

void RnnAggregator::backward_direction(std::size_t dir, const RnnDirectionTrace& trace,
                                       std::span<const double> d_descriptor) {
  auto& cells = directions_[dir];
  const std::size_t T = trace.steps;
  const std::size_t L = cells.size();

  std::vector<std::size_t> offsets(L);
  std::size_t total = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offsets[l] = total;
    total += cells[l].hidden_dim;
  }
  if (d_descriptor.size() != total) throw ArgumentError("rnn backward: gradient size mismatch");

  Tensor2D d_output(T, cells.back().hidden_dim);
  for (std::size_t l = L; l-- > 0;) {
    auto& cell = cells[l];
    const auto& lt = trace.layers[l];
    const std::size_t H = cell.hidden_dim;
    const bool residual = config_.residual && l > 0;
    const bool dropout = !lt.input_mask.empty();
    const auto d_final = d_descriptor.subspan(offsets[l], H);

    Tensor2D d_input(T, cell.input_dim);
    Vector dh_next(H, 0.0), dc_next(H, 0.0), dh(H), dx, dh_prev, dc_prev;
    for (std::size_t t = T; t-- > 0;) {
      const auto d_out = d_output.row(t);
      if (residual) {
        auto di = d_input.row(t);
        for (std::size_t j = 0; j < H; ++j) di[j] += d_out[j];
      }
      for (std::size_t j = 0; j < H; ++j) {
        dh[j] = (dropout ? d_out[j] * lt.output_mask[t][j] : d_out[j]) + dh_next[j];
      }
      if (cell.kind == CellKind::gru) {
        if (t == T - 1) {
          for (std::size_t j = 0; j < H; ++j) dh[j] += d_final[j];
        }
        gru_step_backward(cell, lt.gru[t], dh, dx, dh_prev);
      } else {
        if (t == T - 1) {
          for (std::size_t j = 0; j < H; ++j) dc_next[j] += d_final[j];
        }
        lstm_step_backward(cell, lt.lstm[t], dh, dc_next, dx, dh_prev, dc_prev);
        dc_next = dc_prev;
      }
      dh_next = dh_prev;
      auto di = d_input.row(t);
      for (std::size_t k = 0; k < dx.size(); ++k) {
        di[k] += dropout ? dx[k] * lt.input_mask[t][k] : dx[k];
      }
    }
    d_output = std::move(d_input);
  }
}

void RnnAggregator::backward(const RnnTrace& trace, std::span<const double> d_descriptor) {
  if (trace.directions.size() != directions_.size()) {
    throw ArgumentError("rnn backward: trace does not match aggregator");
  }
  std::size_t offset = 0;
  for (std::size_t d = 0; d < directions_.size(); ++d) {
    std::size_t width = 0;
    for (const auto& cell : directions_[d]) width += cell.hidden_dim;
    backward_direction(d, trace.directions[d], d_descriptor.subspan(offset, width));
    offset += width;
  }
}

Vector rnn_aggregate(const RnnAggregator& stack, const Tensor2D& frames, bool training,
                     SeededRng& rng) {
  return stack.forward(frames, training, rng);
}

}  // namespace fagg
