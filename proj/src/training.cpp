#include "fagg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fagg/errors.hpp"

namespace fagg {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("train: decay must lie in (0, 1]");
  if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
  if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_epsilon > 0.0)) {
    throw ConfigError("train: invalid Adam hyperparameters");
  }
}

json train_config_to_json(const TrainConfig& c) {
  json j = {{"learning_rate", c.learning_rate},
            {"decay", c.decay},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_epsilon", c.adam_epsilon},
            {"clip_norm", c.clip_norm}};
  j["label_filter_keep"] = c.label_filter_keep ? json(*c.label_filter_keep) : json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  static const char* allowed[] = {"learning_rate", "decay",     "batch_size", "epochs",
                                  "seed",          "checkpoint_every",        "optimizer",
                                  "beta1",         "beta2",     "adam_epsilon", "clip_norm",
                                  "label_filter_keep"};
  if (!j.is_object()) throw ConfigError("train: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(allowed), std::end(allowed), key) == std::end(allowed)) {
      throw ConfigError("train: unknown key \"" + key + "\"");
    }
  }
  TrainConfig c;
  auto read = [&](const char* key, auto& out) {
    if (auto it = j.find(key); it != j.end()) {
      try {
        out = it->get<std::decay_t<decltype(out)>>();
      } catch (const json::exception&) {
        throw ConfigError(std::string("train: bad value for \"") + key + "\"");
      }
    }
  };
  read("learning_rate", c.learning_rate);
  read("decay", c.decay);
  read("batch_size", c.batch_size);
  read("epochs", c.epochs);
  read("seed", c.seed);
  read("checkpoint_every", c.checkpoint_every);
  read("beta1", c.beta1);
  read("beta2", c.beta2);
  read("adam_epsilon", c.adam_epsilon);
  read("clip_norm", c.clip_norm);
  if (auto it = j.find("optimizer"); it != j.end()) {
    const std::string name = it->is_string() ? it->get<std::string>() : "";
    if (name == "adam") {
      c.optimizer = OptimizerKind::adam;
    } else if (name == "sgd") {
      c.optimizer = OptimizerKind::sgd;
    } else {
      throw ConfigError("train: optimizer must be \"adam\" or \"sgd\"");
    }
  }
  if (auto it = j.find("label_filter_keep"); it != j.end() && !it->is_null()) {
    std::size_t keep = 0;
    read("label_filter_keep", keep);
    c.label_filter_keep = keep;
  }
  c.validate();
  return c;
}

double lr_at(const TrainConfig& config, std::size_t epoch) {
  return config.learning_rate * std::pow(config.decay, static_cast<double>(epoch));
}

bool LabelFilter::contains(int label) const {
  return std::binary_search(kept.begin(), kept.end(), label);
}

LabelFilter build_label_filter(const LabelVocabulary& vocab, std::size_t keep) {
  if (keep > vocab.size) {
    throw ArgumentError("label filter keeps " + std::to_string(keep) + " of only " +
                        std::to_string(vocab.size) + " labels");
  }
  if (vocab.positive_counts.size() != vocab.size) {
    throw ArgumentError("label filter: vocabulary counts do not match its size");
  }
  std::vector<int> order(vocab.size);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return vocab.positive_counts[static_cast<std::size_t>(a)] <
           vocab.positive_counts[static_cast<std::size_t>(b)];
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return {keep, std::move(order)};
}

double clip_global_norm(std::span<const ParamRef> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.param->grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& p : params) {
      for (double& g : p.param->grad.values()) g *= scale;
    }
  }
  return norm;
}

void sgd_step(std::span<const ParamRef> params, double lr) {
  for (const auto& p : params) {
    auto w = p.param->value.values();
    const auto g = p.param->grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
}

void AdamOptimizer::step(std::span<const ParamRef> params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.param->value.rows(), p.param->value.cols());
      v_.emplace_back(p.param->value.rows(), p.param->value.cols());
    }
  }
  if (m_.size() != params.size()) throw ArgumentError("adam: parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].param->value.values();
    const auto g = params[k].param->grad.values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
    }
  }
}

double dataset_loss(const VideoModel& model, const std::vector<FrameSequence>& samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) {
    SeededRng rng = model.inference_rng(s.id);
    total += model.loss(model.transform(s.frames), model.to_class_labels(s.labels), false, rng);
  }
  return total / static_cast<double>(samples.size());
}

namespace {

constexpr std::uint64_t kSampleStream = 0x5EED5A3B1E5ULL;

bool is_recurrent(ModelKind kind) { return kind == ModelKind::gru || kind == ModelKind::lstm; }

}  // namespace

TrainResult train(ModelSpec spec, const std::vector<FrameSequence>& samples,
                  const TrainConfig& config) {
  config.validate();
  if (samples.empty()) throw ArgumentError("train: empty dataset");
  for (const auto& s : samples) {
    if (s.frames.cols() != spec.meta.dim) {
      throw SchemaError("train: video " + s.id + " does not match the model feature dim");
    }
  }

  TrainResult result;
  if (config.label_filter_keep) {
    const auto vocab = build_vocabulary(samples, spec.meta.vocab);
    result.filter = build_label_filter(vocab, *config.label_filter_keep);
    spec.kept_labels = result.filter->kept;
  }
  spec.seed = config.seed;

  VideoModel model(std::move(spec));
  model.init(config.seed);
  auto params = model.parameters();

  const std::size_t n = samples.size();
  std::vector<Tensor2D> inputs;
  std::vector<std::vector<int>> targets;
  inputs.reserve(n);
  targets.reserve(n);
  for (const auto& s : samples) {
    inputs.push_back(model.transform(s.frames));
    targets.push_back(model.to_class_labels(s.labels));
  }

  auto full_loss = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      SeededRng rng = model.inference_rng(samples[i].id);
      total += model.loss(inputs[i], targets[i], false, rng);
    }
    return total / static_cast<double>(n);
  };
  result.initial_loss = full_loss();

  const SeededRng root(config.seed);
  const SeededRng sample_root(mix64(config.seed ^ kSampleStream));
  AdamOptimizer adam(config.beta1, config.beta2, config.adam_epsilon);
  const bool clip = is_recurrent(model.spec().kind);

  std::size_t step = 0;
  std::uint64_t rng_state = root.state();
  auto emit = [&](std::size_t epochs_done) {
    result.checkpoints.push_back(make_checkpoint(model, config, step, epochs_done, rng_state));
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    SeededRng shuffle = root.split(epoch);
    const auto order = shuffle.permutation(n);
    rng_state = shuffle.state();
    double epoch_loss = 0.0;

    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, n);
      model.zero_grad();
      const SeededRng step_rng = sample_root.split(step);
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t i = order[b];
        SeededRng rng = step_rng.split(i);
        const double l = model.accumulate_gradient(inputs[i], targets[i], rng);
        if (!std::isfinite(l)) {
          throw TrainingError("non-finite loss at step " + std::to_string(step));
        }
        epoch_loss += l;
      }
      const double scale = 1.0 / static_cast<double>(end - begin);
      for (const auto& p : params) {
        for (double& g : p.param->grad.values()) g *= scale;
      }
      const double norm = clip ? clip_global_norm(params, config.clip_norm)
                               : clip_global_norm(params, INFINITY);
      if (!std::isfinite(norm)) {
        throw TrainingError("non-finite gradient at step " + std::to_string(step));
      }
      if (config.optimizer == OptimizerKind::adam) {
        adam.step(params, lr);
      } else {
        sgd_step(params, lr);
      }
      ++step;
      if (step % config.checkpoint_every == 0) emit(end == n ? epoch + 1 : epoch);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
  }
  if (result.checkpoints.empty() || result.checkpoints.back().step != step) emit(config.epochs);

  result.final_loss = full_loss();
  if (!std::isfinite(result.final_loss)) {
    throw TrainingError("non-finite loss after step " + std::to_string(step));
  }
  result.steps = step;
  return result;
}

}  // namespace fagg
