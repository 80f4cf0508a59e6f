#include "fagg/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <system_error>
#include <unordered_set>

#include <json.hpp>

#include "fagg/errors.hpp"

namespace fagg {

using json = nlohmann::json;

bool ranks_before(const ScoredLabel& a, const ScoredLabel& b) noexcept {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.label < b.label;
}

void rank_and_truncate(std::vector<ScoredLabel>& labels, std::size_t k) {
  std::sort(labels.begin(), labels.end(), ranks_before);
  if (k != 0 && labels.size() > k) labels.resize(k);
}

void DatasetMeta::validate() const {
  if (dim == 0) throw SchemaError("dataset meta: dim must be positive");
  if (visual_dim + audio_dim != dim) {
    throw SchemaError("dataset meta: visual_dim + audio_dim != dim");
  }
  if (vocab < 1) throw SchemaError("dataset meta: vocab must be at least 1");
}

namespace {

std::string where(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line) + ": ";
}

template <typename T>
T require(const json& obj, const char* key, const std::string& at) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(at + "missing key \"" + key + "\"");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ParseError(at + "bad value for \"" + key + "\": " + e.what());
  }
}

json parse_line(const std::string& text, const std::string& at) {
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw ParseError(at + "record is not a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ParseError(at + e.what());
  }
}

void append_float(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(v));
  out.append(buf, res.ptr);
}

}  // namespace

double to_storage_precision(double v) noexcept { return static_cast<double>(static_cast<float>(v)); }

DatasetReader::DatasetReader(const std::filesystem::path& path)
    : in_(path), path_(path.string()) {
  if (!in_) throw DataError("cannot open dataset " + path_);
  std::string text;
  if (!std::getline(in_, text)) throw ParseError(where(path_, 1) + "missing metadata line");
  line_ = 1;
  const auto at = where(path_, line_);
  json j = parse_line(text, at);
  if (require<int>(j, "version", at) != 1) throw ParseError(at + "unsupported version");
  meta_.dim = require<std::size_t>(j, "dim", at);
  meta_.visual_dim = require<std::size_t>(j, "visual_dim", at);
  meta_.audio_dim = require<std::size_t>(j, "audio_dim", at);
  meta_.vocab = require<std::size_t>(j, "vocab", at);
  try {
    meta_.validate();
  } catch (const SchemaError& e) {
    throw SchemaError(at + e.what());
  }
}

std::optional<FrameSequence> DatasetReader::next() {
  std::string text;
  while (std::getline(in_, text)) {
    ++line_;
    if (text.empty()) continue;
    const auto at = where(path_, line_);
    json j = parse_line(text, at);

    FrameSequence seq;
    seq.id = require<std::string>(j, "id", at);
    seq.labels = require<std::vector<int>>(j, "labels", at);
    const auto rows = require<std::vector<std::vector<double>>>(j, "frames", at);

    if (rows.empty()) throw SchemaError(at + "video \"" + seq.id + "\" has no frames");
    std::vector<double> values;
    values.reserve(rows.size() * meta_.dim);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != meta_.dim) {
        throw SchemaError(at + "frame " + std::to_string(t) + " has " +
                          std::to_string(rows[t].size()) + " values, expected " +
                          std::to_string(meta_.dim));
      }
      for (double v : rows[t]) values.push_back(to_storage_precision(v));
    }
    seq.frames = Tensor2D(rows.size(), meta_.dim, std::move(values));

    std::sort(seq.labels.begin(), seq.labels.end());
    if (std::adjacent_find(seq.labels.begin(), seq.labels.end()) != seq.labels.end()) {
      throw SchemaError(at + "duplicate label");
    }
    for (int l : seq.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= meta_.vocab) {
        throw SchemaError(at + "label " + std::to_string(l) + " outside vocabulary");
      }
    }
    ++meta_.samples;
    return seq;
  }
  return std::nullopt;
}

Dataset load_dataset(const std::filesystem::path& path) {
  DatasetReader reader(path);
  Dataset out;
  while (auto seq = reader.next()) out.samples.push_back(std::move(*seq));
  out.meta = reader.meta();
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  const auto& meta = dataset.meta;
  meta.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset " + path.string());

  json header = {{"version", 1},
                 {"dim", meta.dim},
                 {"visual_dim", meta.visual_dim},
                 {"audio_dim", meta.audio_dim},
                 {"vocab", meta.vocab}};
  out << header.dump() << '\n';

  std::string line;
  for (const auto& seq : dataset.samples) {
    if (seq.frames.cols() != meta.dim || seq.frames.rows() == 0) {
      throw SchemaError("write_dataset: video \"" + seq.id + "\" does not match dim");
    }
    line = "{\"id\":" + json(seq.id).dump() + ",\"labels\":" + json(seq.labels).dump() +
           ",\"frames\":[";
    for (std::size_t t = 0; t < seq.frames.rows(); ++t) {
      if (t) line += ',';
      line += '[';
      auto row = seq.frames.row(t);
      for (std::size_t d = 0; d < row.size(); ++d) {
        if (d) line += ',';
        append_float(line, row[d]);
      }
      line += ']';
    }
    line += "]}\n";
    out << line;
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::string format_confidence(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
  if (res.ec != std::errc()) throw NumericError("cannot format confidence");
  return std::string(buf, res.ptr);
}

std::string format_predictions(const PredictionSet& preds, std::size_t top_k) {
  std::string out = "VideoId,LabelConfidencePairs\n";
  std::unordered_set<std::string> seen;
  for (const auto& video : preds.videos) {
    if (!seen.insert(video.id).second) {
      throw DataError("duplicate video id in predictions: " + video.id);
    }
    if (video.labels.empty()) throw DataError("video " + video.id + " has no scored labels");
    auto ranked = video.labels;
    for (const auto& s : ranked) {
      if (!std::isfinite(s.confidence) || s.confidence < 0.0 || s.confidence > 1.0) {
        throw DataError("video " + video.id + ": confidence outside [0,1]");
      }
    }
    rank_and_truncate(ranked, top_k);
    out += video.id;
    out += ',';
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(ranked[i].label);
      out += ' ';
      out += format_confidence(ranked[i].confidence);
    }
    out += '\n';
  }
  return out;
}

void write_predictions(const PredictionSet& preds, const std::filesystem::path& path,
                       std::size_t top_k) {
  const std::string text = format_predictions(preds, top_k);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write predictions " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

PredictionSet read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path.string());
  const std::string name = path.string();
  std::string text;
  if (!std::getline(in, text) || text != "VideoId,LabelConfidencePairs") {
    throw ParseError(where(name, 1) + "expected header VideoId,LabelConfidencePairs");
  }
  PredictionSet out;
  std::unordered_set<std::string> seen;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    const auto at = where(name, line);
    const auto comma = text.rfind(',');
    if (comma == std::string::npos) throw ParseError(at + "missing comma");
    VideoPredictions video;
    video.id = text.substr(0, comma);
    if (!seen.insert(video.id).second) throw DataError(at + "duplicate video id " + video.id);

    std::istringstream pairs(text.substr(comma + 1));
    std::string label_tok, conf_tok;
    std::set<int> labels;
    while (pairs >> label_tok) {
      if (!(pairs >> conf_tok)) throw ParseError(at + "label without confidence");
      ScoredLabel s;
      auto r1 = std::from_chars(label_tok.data(), label_tok.data() + label_tok.size(), s.label);
      auto r2 = std::from_chars(conf_tok.data(), conf_tok.data() + conf_tok.size(), s.confidence);
      if (r1.ec != std::errc() || r1.ptr != label_tok.data() + label_tok.size() ||
          r2.ec != std::errc() || r2.ptr != conf_tok.data() + conf_tok.size()) {
        throw ParseError(at + "bad pair \"" + label_tok + " " + conf_tok + "\"");
      }
      if (!labels.insert(s.label).second) throw DataError(at + "duplicate label");
      video.labels.push_back(s);
    }
    out.videos.push_back(std::move(video));
  }
  return out;
}

LabelVocabulary build_vocabulary(const std::vector<FrameSequence>& samples, std::size_t vocab) {
  LabelVocabulary out{vocab, std::vector<std::size_t>(vocab, 0)};
  for (const auto& seq : samples) {
    for (int l : seq.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= vocab) {
        throw DataError("video " + seq.id + ": label " + std::to_string(l) +
                        " outside vocabulary of " + std::to_string(vocab));
      }
      ++out.positive_counts[static_cast<std::size_t>(l)];
    }
  }
  return out;
}

Vector SyntheticDataset::trajectory(std::size_t c, std::size_t t) const {
  const double phase = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
  Vector out(prototypes.cols());
  for (std::size_t d = 0; d < out.size(); ++d) {
    out[d] = prototypes(c, d) + phase * drifts(c, d);
  }
  return out;
}

SyntheticDataset generate_synthetic(const SyntheticOptions& o) {
  if (o.classes < 2) throw ArgumentError("generate_synthetic: classes must be at least 2");
  if (o.dim < 2) throw ArgumentError("generate_synthetic: dim must be at least 2");
  if (o.frames < 4) throw ArgumentError("generate_synthetic: frames must be at least 4");
  if (o.audio_dim >= o.dim) throw ArgumentError("generate_synthetic: audio_dim must be below dim");
  if (!(o.noise >= 0.0)) throw ArgumentError("generate_synthetic: noise must be nonnegative");
  if (!(o.multilabel_rate >= 0.0 && o.multilabel_rate <= 1.0)) {
    throw ArgumentError("generate_synthetic: multilabel rate must lie in [0,1]");
  }

  SeededRng root(o.seed);
  SeededRng class_rng = root.split(1);
  SeededRng video_rng = root.split(2);

  SyntheticDataset out;
  out.prototypes = Tensor2D(o.classes, o.dim);
  out.drifts = Tensor2D(o.classes, o.dim);
  out.frames = o.frames;
  fill_normal(out.prototypes, class_rng, 1.0);
  fill_normal(out.drifts, class_rng, 1.0);

  auto& ds = out.dataset;
  ds.meta = DatasetMeta{o.dim, o.dim - o.audio_dim, o.audio_dim, o.classes, o.videos};
  ds.samples.reserve(o.videos);

  const int width = static_cast<int>(std::to_string(o.videos).size());
  for (std::size_t v = 0; v < o.videos; ++v) {
    FrameSequence seq;
    std::string num = std::to_string(v);
    seq.id = "vid" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;

    const std::size_t primary = video_rng.uniform_index(o.classes);
    for (std::size_t c = 0; c < o.classes; ++c) {
      const bool extra = video_rng.uniform() < o.multilabel_rate;
      if (c == primary || extra) seq.labels.push_back(static_cast<int>(c));
    }

    seq.frames = Tensor2D(o.frames, o.dim);
    for (std::size_t t = 0; t < o.frames; ++t) {
      auto row = seq.frames.row(t);
      for (int c : seq.labels) {
        const Vector traj = out.trajectory(static_cast<std::size_t>(c), t);
        for (std::size_t d = 0; d < o.dim; ++d) row[d] += traj[d];
      }
      for (std::size_t d = 0; d < o.dim; ++d) {
        const double noise = o.noise > 0.0 ? o.noise * video_rng.normal() : 0.0;
        row[d] = to_storage_precision(row[d] + noise);
      }
    }
    ds.samples.push_back(std::move(seq));
  }
  return out;
}

}  // namespace fagg
