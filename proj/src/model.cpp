#include "fagg/model.hpp"

#include <algorithm>
#include <set>

#include "fagg/errors.hpp"

namespace fagg {

using json = nlohmann::json;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::moe_meanpool: return "moe_meanpool";
    case ModelKind::gru: return "gru";
    case ModelKind::lstm: return "lstm";
    case ModelKind::netvlad: return "netvlad";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "moe_meanpool") return ModelKind::moe_meanpool;
  if (name == "gru") return ModelKind::gru;
  if (name == "lstm") return ModelKind::lstm;
  if (name == "netvlad") return ModelKind::netvlad;
  throw ConfigError("unknown model kind \"" + name + "\"");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ConfigError(std::string(what) + ": unknown key \"" + key + "\"");
    }
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(what) + ": bad value for \"" + key + "\"");
  }
}

std::string mode_name(RnnMode m) {
  switch (m) {
    case RnnMode::forward: return "forward";
    case RnnMode::bidirectional: return "bidirectional";
    case RnnMode::split_bidirectional: return "split_bidirectional";
  }
  return "?";
}

RnnMode mode_from_string(const std::string& s) {
  if (s == "forward") return RnnMode::forward;
  if (s == "bidirectional") return RnnMode::bidirectional;
  if (s == "split_bidirectional") return RnnMode::split_bidirectional;
  throw ConfigError("unknown rnn mode \"" + s + "\"");
}

}  // namespace

json transforms_to_json(const std::vector<TransformSpec>& specs) {
  json out = json::array();
  for (const auto& s : specs) {
    switch (s.kind) {
      case TransformKind::identity: out.push_back({{"kind", "identity"}}); break;
      case TransformKind::temporal_difference:
        out.push_back({{"kind", "temporal_difference"}});
        break;
      case TransformKind::multiscale:
        out.push_back({{"kind", "multiscale"}, {"window", s.window}});
        break;
    }
  }
  return out;
}

std::vector<TransformSpec> transforms_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("transforms: expected an array");
  std::vector<TransformSpec> out;
  for (const auto& item : j) {
    check_keys(item, {"kind", "window"}, "transform");
    std::string kind;
    read_opt(item, "kind", kind, "transform");
    TransformSpec s;
    if (kind == "identity") {
      s.kind = TransformKind::identity;
    } else if (kind == "temporal_difference") {
      s.kind = TransformKind::temporal_difference;
    } else if (kind == "multiscale") {
      s.kind = TransformKind::multiscale;
      if (!item.contains("window")) throw ConfigError("multiscale transform needs \"window\"");
      read_opt(item, "window", s.window, "transform");
    } else {
      throw ConfigError("unknown transform kind \"" + kind + "\"");
    }
    if (s.kind != TransformKind::multiscale && item.contains("window")) {
      throw ConfigError("transform \"" + kind + "\" takes no window");
    }
    out.push_back(s);
  }
  validate_transforms(out);
  return out;
}

json model_spec_to_json(const ModelSpec& spec) {
  json j;
  j["kind"] = to_string(spec.kind);
  j["rnn"] = {{"layers", spec.rnn.layers},
              {"residual", spec.rnn.residual},
              {"recurrent_dropout", spec.rnn.recurrent_dropout},
              {"mode", mode_name(spec.rnn.mode)}};
  j["netvlad"] = {{"clusters", spec.vlad_visual.clusters},
                  {"sample_size", spec.vlad_visual.sample_size},
                  {"audio_clusters", spec.vlad_audio.clusters},
                  {"audio_sample_size", spec.vlad_audio.sample_size},
                  {"intra_normalize", spec.vlad_visual.intra_normalize}};
  j["mixtures"] = spec.mixtures;
  j["null_gate"] = spec.null_gate;
  j["transforms"] = transforms_to_json(spec.transforms);
  j["meta"] = {{"dim", spec.meta.dim},
               {"visual_dim", spec.meta.visual_dim},
               {"audio_dim", spec.meta.audio_dim},
               {"vocab", spec.meta.vocab}};
  j["kept_labels"] = spec.kept_labels;
  j["seed"] = spec.seed;
  return j;
}

ModelSpec model_spec_from_json(const json& j) {
  check_keys(j, {"kind", "rnn", "netvlad", "mixtures", "null_gate", "transforms", "meta",
                 "kept_labels", "seed"},
             "model");
  ModelSpec spec;
  std::string kind = "moe_meanpool";
  read_opt(j, "kind", kind, "model");
  spec.kind = model_kind_from_string(kind);
  if (auto it = j.find("rnn"); it != j.end()) {
    check_keys(*it, {"layers", "residual", "recurrent_dropout", "mode"}, "model.rnn");
    read_opt(*it, "layers", spec.rnn.layers, "model.rnn");
    read_opt(*it, "residual", spec.rnn.residual, "model.rnn");
    read_opt(*it, "recurrent_dropout", spec.rnn.recurrent_dropout, "model.rnn");
    std::string mode = "forward";
    read_opt(*it, "mode", mode, "model.rnn");
    spec.rnn.mode = mode_from_string(mode);
  }
  if (auto it = j.find("netvlad"); it != j.end()) {
    check_keys(*it,
               {"clusters", "sample_size", "audio_clusters", "audio_sample_size",
                "intra_normalize"},
               "model.netvlad");
    read_opt(*it, "clusters", spec.vlad_visual.clusters, "model.netvlad");
    read_opt(*it, "sample_size", spec.vlad_visual.sample_size, "model.netvlad");
    read_opt(*it, "audio_clusters", spec.vlad_audio.clusters, "model.netvlad");
    read_opt(*it, "audio_sample_size", spec.vlad_audio.sample_size, "model.netvlad");
    read_opt(*it, "intra_normalize", spec.vlad_visual.intra_normalize, "model.netvlad");
    spec.vlad_audio.intra_normalize = spec.vlad_visual.intra_normalize;
  }
  read_opt(j, "mixtures", spec.mixtures, "model");
  read_opt(j, "null_gate", spec.null_gate, "model");
  if (auto it = j.find("transforms"); it != j.end()) spec.transforms = transforms_from_json(*it);
  if (auto it = j.find("meta"); it != j.end()) {
    check_keys(*it, {"dim", "visual_dim", "audio_dim", "vocab"}, "model.meta");
    read_opt(*it, "dim", spec.meta.dim, "model.meta");
    read_opt(*it, "visual_dim", spec.meta.visual_dim, "model.meta");
    read_opt(*it, "audio_dim", spec.meta.audio_dim, "model.meta");
    read_opt(*it, "vocab", spec.meta.vocab, "model.meta");
  }
  read_opt(j, "kept_labels", spec.kept_labels, "model");
  read_opt(j, "seed", spec.seed, "model");
  return spec;
}

void ModelSpec::validate() const {
  try {
    meta.validate();
  } catch (const SchemaError& e) {
    throw ConfigError(e.what());
  }
  if (mixtures < 1) throw ConfigError("model: mixtures must be positive");
  validate_transforms(transforms);
  if (kind == ModelKind::gru || kind == ModelKind::lstm) rnn.validate();
  for (std::size_t i = 0; i < kept_labels.size(); ++i) {
    const int l = kept_labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= meta.vocab) {
      throw ConfigError("model: kept label outside vocabulary");
    }
    if (i > 0 && kept_labels[i - 1] >= l) throw ConfigError("model: kept labels must be sorted");
  }
}

std::size_t ModelSpec::output_classes() const {
  return kept_labels.empty() ? meta.vocab : kept_labels.size();
}

VideoModel::VideoModel(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t descriptor = 0;
  switch (spec_.kind) {
    case ModelKind::moe_meanpool:
      descriptor = spec_.meta.dim;
      break;
    case ModelKind::gru:
    case ModelKind::lstm:
      spec_.rnn.cell = spec_.kind == ModelKind::gru ? CellKind::gru : CellKind::lstm;
      rnn_ = RnnAggregator(spec_.rnn, spec_.meta.dim);
      descriptor = rnn_.descriptor_dim();
      break;
    case ModelKind::netvlad:
      vlad_ = NetVladAggregator(spec_.meta, spec_.vlad_visual, spec_.vlad_audio);
      descriptor = vlad_.descriptor_dim();
      break;
  }
  moe_ = MoEParams(descriptor, spec_.output_classes(), spec_.mixtures, spec_.null_gate);

  class_of_label_.assign(spec_.meta.vocab, -1);
  if (spec_.kept_labels.empty()) {
    for (std::size_t l = 0; l < spec_.meta.vocab; ++l) class_of_label_[l] = static_cast<int>(l);
  } else {
    for (std::size_t i = 0; i < spec_.kept_labels.size(); ++i) {
      class_of_label_[static_cast<std::size_t>(spec_.kept_labels[i])] = static_cast<int>(i);
    }
  }
}

void VideoModel::init(std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).split(0x1417);
  switch (spec_.kind) {
    case ModelKind::gru:
    case ModelKind::lstm: rnn_.init(rng); break;
    case ModelKind::netvlad: vlad_.init(rng); break;
    case ModelKind::moe_meanpool: break;
  }
  moe_.init(rng);
}

std::size_t VideoModel::descriptor_dim() const { return moe_.input_dim; }

Tensor2D VideoModel::transform(const Tensor2D& frames) const {
  return apply_transforms(frames, spec_.transforms);
}

Vector VideoModel::class_probs(const Tensor2D& transformed, bool training, SeededRng& rng,
                               ModelTrace* trace) const {
  ModelTrace local;
  ModelTrace& t = trace ? *trace : local;
  switch (spec_.kind) {
    case ModelKind::moe_meanpool: t.descriptor = mean_pool(transformed); break;
    case ModelKind::gru:
    case ModelKind::lstm: t.descriptor = rnn_.forward(transformed, training, rng, t.rnn); break;
    case ModelKind::netvlad: t.descriptor = vlad_.forward(transformed, rng, t.vlad); break;
  }
  return moe_forward(moe_, t.descriptor, t.moe);
}

SeededRng VideoModel::inference_rng(const std::string& video_id) const {
  return SeededRng(spec_.seed).split(fnv1a64(video_id));
}

Vector VideoModel::vocab_probs(const FrameSequence& video) const {
  if (video.frames.cols() != spec_.meta.dim) {
    throw SchemaError("video " + video.id + " has " + std::to_string(video.frames.cols()) +
                      " features, model expects " + std::to_string(spec_.meta.dim));
  }
  SeededRng rng = inference_rng(video.id);
  const Vector probs = class_probs(transform(video.frames), false, rng);
  Vector out(spec_.meta.vocab, 0.0);
  for (std::size_t l = 0; l < out.size(); ++l) {
    if (class_of_label_[l] >= 0) out[l] = probs[static_cast<std::size_t>(class_of_label_[l])];
  }
  return out;
}

VideoPredictions VideoModel::predict(const FrameSequence& video, std::size_t top_k) const {
  return {video.id, predict_topk(vocab_probs(video), top_k)};
}

PredictionSet VideoModel::predict(const std::vector<FrameSequence>& videos,
                                  std::size_t top_k) const {
  PredictionSet out;
  out.videos.reserve(videos.size());
  for (const auto& v : videos) out.videos.push_back(predict(v, top_k));
  return out;
}

std::vector<int> VideoModel::to_class_labels(std::span<const int> labels) const {
  std::vector<int> out;
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_of_label_.size()) {
      throw DataError("label " + std::to_string(l) + " outside vocabulary");
    }
    if (class_of_label_[static_cast<std::size_t>(l)] >= 0) {
      out.push_back(class_of_label_[static_cast<std::size_t>(l)]);
    }
  }
  return out;
}

double VideoModel::loss(const Tensor2D& transformed, std::span<const int> class_labels,
                        bool training, SeededRng& rng) const {
  const Vector probs = class_probs(transformed, training, rng);
  return bce_loss(probs, class_labels, probs.size());
}

double VideoModel::accumulate_gradient(const Tensor2D& transformed,
                                       std::span<const int> class_labels, SeededRng& rng) {
  ModelTrace trace;
  const Vector probs = class_probs(transformed, true, rng, &trace);
  const double value = bce_loss(probs, class_labels, probs.size());
  const Vector d_probs = bce_gradient(probs, class_labels, probs.size());
  const Vector d_descriptor = moe_backward(moe_, trace.moe, d_probs);
  switch (spec_.kind) {
    case ModelKind::moe_meanpool: break;
    case ModelKind::gru:
    case ModelKind::lstm: rnn_.backward(trace.rnn, d_descriptor); break;
    case ModelKind::netvlad: vlad_.backward(trace.vlad, d_descriptor); break;
  }
  return value;
}

std::vector<ParamRef> VideoModel::parameters() {
  std::vector<ParamRef> out;
  switch (spec_.kind) {
    case ModelKind::gru:
    case ModelKind::lstm: out = rnn_.parameters(); break;
    case ModelKind::netvlad: out = vlad_.parameters(); break;
    case ModelKind::moe_meanpool: break;
  }
  moe_.append_parameters("moe/", out);
  return out;
}

void VideoModel::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

}  // namespace fagg
