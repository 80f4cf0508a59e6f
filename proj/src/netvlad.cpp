#include "fagg/netvlad.hpp"

#include <algorithm>
#include <cmath>

#include "fagg/errors.hpp"
#include "fagg/transforms.hpp"

namespace fagg {

namespace {

constexpr double kNormFloor = 1e-12;

}  // namespace

NetVladParams::NetVladParams(NetVladConfig c, std::size_t d) : config(c), dim(d) {
  if (config.clusters < 1) throw ConfigError("netvlad: at least one cluster required");
  if (config.sample_size < 1) throw ConfigError("netvlad: sample size must be positive");
  if (dim < 1) throw ConfigError("netvlad: feature dimension must be positive");
  centers = Param(config.clusters, dim);
  kernel = Param(dim, config.clusters);
  bias = Param(1, config.clusters);
}

void NetVladParams::init(SeededRng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  fill_normal(centers.value, rng, stddev);
  fill_normal(kernel.value, rng, stddev);
  bias.value.fill(0.0);
}

void NetVladParams::append_parameters(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "centers", &centers});
  out.push_back({prefix + "kernel", &kernel});
  out.push_back({prefix + "bias", &bias});
}

Tensor2D netvlad_assign(const Tensor2D& samples, const NetVladParams& params) {
  if (samples.cols() != params.dim) {
    throw ArgumentError("netvlad_assign: samples have " + std::to_string(samples.cols()) +
                        " columns, expected " + std::to_string(params.dim));
  }
  const std::size_t K = params.clusters();
  const auto& kernel = params.kernel.value;
  const auto bias = params.bias.value.row(0);
  Tensor2D out(samples.rows(), K);
  Vector logits(K);
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const auto r = samples.row(i);
    for (std::size_t k = 0; k < K; ++k) logits[k] = bias[k];
    for (std::size_t d = 0; d < r.size(); ++d) {
      const auto krow = kernel.row(d);
      for (std::size_t k = 0; k < K; ++k) logits[k] += r[d] * krow[k];
    }
    const Vector a = softmax(logits);
    std::copy(a.begin(), a.end(), out.row(i).begin());
  }
  return out;
}

Vector netvlad_aggregate(const Tensor2D& samples, const Tensor2D& assign, const Tensor2D& centers) {
  const std::size_t S = samples.rows(), D = samples.cols(), K = centers.rows();
  if (assign.rows() != S || assign.cols() != K || centers.cols() != D) {
    throw ArgumentError("netvlad_aggregate: shape mismatch");
  }
  Vector v(K * D, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double mass = 0.0;
    double* vk = v.data() + k * D;
    for (std::size_t i = 0; i < S; ++i) {
      const double a = assign(i, k);
      mass += a;
      const auto r = samples.row(i);
      for (std::size_t d = 0; d < D; ++d) vk[d] += a * r[d];
    }
    const auto u = centers.row(k);
    for (std::size_t d = 0; d < D; ++d) vk[d] -= mass * u[d];
  }
  return v;
}

Vector netvlad_layer_forward(const NetVladParams& params, const Tensor2D& samples,
                             NetVladLayerTrace* trace) {
  Tensor2D assign = netvlad_assign(samples, params);
  Vector v = netvlad_aggregate(samples, assign, params.centers.value);
  const std::size_t K = params.clusters(), D = params.dim;
  Vector norms;
  Tensor2D raw;
  if (params.config.intra_normalize) {
    raw = Tensor2D(K, D, v);
    norms.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += v[k * D + d] * v[k * D + d];
      norms[k] = std::max(std::sqrt(s), kNormFloor);
      for (std::size_t d = 0; d < D; ++d) v[k * D + d] /= norms[k];
    }
  }
  if (trace) {
    trace->samples = samples;
    trace->assign = std::move(assign);
    trace->raw = std::move(raw);
    trace->norms = std::move(norms);
  }
  return v;
}

void netvlad_layer_backward(NetVladParams& params, const NetVladLayerTrace& trace,
                            std::span<const double> d_descriptor) {
  const std::size_t K = params.clusters(), D = params.dim;
  const std::size_t S = trace.samples.rows();
  if (d_descriptor.size() != K * D) throw ArgumentError("netvlad backward: gradient size mismatch");

  // dL/dv_k before normalization.
  Vector dv(d_descriptor.begin(), d_descriptor.end());
  if (params.config.intra_normalize) {
    for (std::size_t k = 0; k < K; ++k) {
      const double n = trace.norms[k];
      if (n <= kNormFloor) {
        for (std::size_t d = 0; d < D; ++d) dv[k * D + d] /= kNormFloor;
        continue;
      }
      double dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) dot += trace.raw(k, d) / n * d_descriptor[k * D + d];
      for (std::size_t d = 0; d < D; ++d) {
        dv[k * D + d] = (d_descriptor[k * D + d] - trace.raw(k, d) / n * dot) / n;
      }
    }
  }

  const auto& U = params.centers.value;
  auto& dU = params.centers.grad;
  auto& dW = params.kernel.grad;
  auto db = params.bias.grad.row(0);

  // dL/du_k = −(Σ_i a_ik) dv_k
  for (std::size_t k = 0; k < K; ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i < S; ++i) mass += trace.assign(i, k);
    for (std::size_t d = 0; d < D; ++d) dU(k, d) -= mass * dv[k * D + d];
  }

  Vector da(K), dz(K);
  for (std::size_t i = 0; i < S; ++i) {
    const auto r = trace.samples.row(i);
    // dL/da_ik = dv_k · (r_i − u_k)
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += dv[k * D + d] * (r[d] - U(k, d));
      da[k] = s;
    }
    double weighted = 0.0;
    for (std::size_t k = 0; k < K; ++k) weighted += trace.assign(i, k) * da[k];
    for (std::size_t k = 0; k < K; ++k) dz[k] = trace.assign(i, k) * (da[k] - weighted);
    for (std::size_t d = 0; d < D; ++d) {
      auto wrow = dW.row(d);
      for (std::size_t k = 0; k < K; ++k) wrow[k] += r[d] * dz[k];
    }
    for (std::size_t k = 0; k < K; ++k) db[k] += dz[k];
  }
}

NetVladAggregator::NetVladAggregator(const DatasetMeta& meta, NetVladConfig visual,
                                     NetVladConfig audio)
    : visual_dim_(meta.visual_dim) {
  if (meta.visual_dim == 0) throw ConfigError("netvlad: visual stream is empty");
  visual_ = NetVladParams(visual, meta.visual_dim);
  if (meta.audio_dim > 0) audio_ = NetVladParams(audio, meta.audio_dim);
}

void NetVladAggregator::init(SeededRng& rng) {
  visual_.init(rng);
  if (audio_) audio_->init(rng);
}

std::vector<ParamRef> NetVladAggregator::parameters() {
  std::vector<ParamRef> out;
  visual_.append_parameters("netvlad/visual/", out);
  if (audio_) audio_->append_parameters("netvlad/audio/", out);
  return out;
}

std::size_t NetVladAggregator::descriptor_dim() const {
  return visual_.descriptor_dim() + (audio_ ? audio_->descriptor_dim() : 0);
}

namespace {

Tensor2D sample_stream(const Tensor2D& frames, const NetVladParams& p, SeededRng& rng) {
  return sample_frames(frames, std::min(frames.rows(), p.config.sample_size), rng);
}

}  // namespace

Vector NetVladAggregator::forward(const Tensor2D& frames, SeededRng& rng) const {
  NetVladTrace unused;
  return forward(frames, rng, unused);
}

Vector NetVladAggregator::forward(const Tensor2D& frames, SeededRng& rng,
                                  NetVladTrace& trace) const {
  if (frames.rows() == 0) throw ArgumentError("netvlad: empty sequence");
  if (frames.cols() != visual_dim_ + (audio_ ? audio_->dim : 0)) {
    throw ArgumentError("netvlad: frame width does not match visual + audio dims");
  }
  Vector out = netvlad_layer_forward(
      visual_, sample_stream(frames.slice_cols(0, visual_dim_), visual_, rng), &trace.visual);
  if (audio_) {
    trace.audio.emplace();
    Vector a = netvlad_layer_forward(
        *audio_, sample_stream(frames.slice_cols(visual_dim_, frames.cols()), *audio_, rng),
        &*trace.audio);
    out.insert(out.end(), a.begin(), a.end());
  } else {
    trace.audio.reset();
  }
  return out;
}

void NetVladAggregator::backward(const NetVladTrace& trace, std::span<const double> d_descriptor) {
  const std::size_t nv = visual_.descriptor_dim();
  netvlad_layer_backward(visual_, trace.visual, d_descriptor.first(nv));
  if (audio_) netvlad_layer_backward(*audio_, *trace.audio, d_descriptor.subspan(nv));
}

Vector netvlad_forward(const Tensor2D& frames, const DatasetMeta& meta,
                       const NetVladParams& visual, const NetVladParams* audio, SeededRng& rng) {
  if (frames.rows() == 0) throw ArgumentError("netvlad: empty sequence");
  if (frames.cols() != meta.visual_dim + meta.audio_dim) {
    throw ArgumentError("netvlad: frame width does not match visual + audio dims");
  }
  if (visual.dim != meta.visual_dim) throw ArgumentError("netvlad: visual params dim mismatch");
  Vector out = netvlad_layer_forward(
      visual, sample_stream(frames.slice_cols(0, meta.visual_dim), visual, rng));
  if (meta.audio_dim > 0) {
    if (!audio || audio->dim != meta.audio_dim) {
      throw ArgumentError("netvlad: audio params missing or mismatched");
    }
    Vector a = netvlad_layer_forward(
        *audio, sample_stream(frames.slice_cols(meta.visual_dim, frames.cols()), *audio, rng));
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

Vector mean_pool(const Tensor2D& frames) {
  if (frames.rows() == 0) throw ArgumentError("mean_pool: empty sequence");
  Vector out(frames.cols(), 0.0);
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    const auto r = frames.row(t);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += r[d];
  }
  for (double& v : out) v /= static_cast<double>(frames.rows());
  return out;
}

}  // namespace fagg
