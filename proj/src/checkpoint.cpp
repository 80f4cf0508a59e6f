#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fagg/errors.hpp"
#include "fagg/training.hpp"

namespace fagg {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'F', 'A', 'G', 'G'};
constexpr unsigned char kVersion = 1;
constexpr std::size_t kHeaderBytes = sizeof kMagic + 1 + 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

[[noreturn]] void fail(std::size_t offset, const std::string& what) {
  throw FormatError("checkpoint: " + what + " at offset " + std::to_string(offset));
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& cp) {
  json meta;
  meta["step"] = cp.step;
  meta["epoch"] = cp.epoch;
  meta["rng_state"] = cp.rng_state;
  meta["config"] = cp.config;
  json dir = json::array();
  for (const auto& t : cp.tensors) {
    dir.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  }
  meta["tensors"] = std::move(dir);
  const std::string text = meta.dump();

  std::string out(kMagic, sizeof kMagic);
  out.push_back(static_cast<char>(kVersion));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& t : cp.tensors) {
    for (double v : t.value.values()) put_f64(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes) fail(bytes.size(), "truncated header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) fail(0, "bad magic");
  if (static_cast<unsigned char>(bytes[4]) != kVersion) fail(4, "unsupported version");
  const std::size_t meta_len = get_le(bytes, 5, 4);
  if (bytes.size() < kHeaderBytes + meta_len) fail(bytes.size(), "truncated metadata");

  json meta;
  try {
    meta = json::parse(bytes.substr(kHeaderBytes, meta_len));
  } catch (const json::parse_error& e) {
    fail(kHeaderBytes + e.byte, "malformed metadata");
  }

  Checkpoint cp;
  std::size_t offset = kHeaderBytes + meta_len;
  try {
    cp.step = meta.at("step").get<std::size_t>();
    cp.epoch = meta.at("epoch").get<std::size_t>();
    cp.rng_state = meta.at("rng_state").get<std::uint64_t>();
    cp.config = meta.at("config");
    for (const auto& entry : meta.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      const std::size_t count = rows * cols;
      if (bytes.size() - offset < count * 8) fail(bytes.size(), "truncated tensor " + t.name);
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i, offset += 8) {
        values[i] = std::bit_cast<double>(get_le(bytes, offset, 8));
      }
      t.value = Tensor2D(rows, cols, std::move(values));
      cp.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    fail(kHeaderBytes, std::string("invalid metadata: ") + e.what());
  }
  if (offset != bytes.size()) fail(offset, "trailing bytes");
  return cp;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(VideoModel& model, const TrainConfig& config, std::size_t step,
                           std::size_t epoch, std::uint64_t rng_state) {
  Checkpoint cp;
  cp.step = step;
  cp.epoch = epoch;
  cp.rng_state = rng_state;
  cp.config = {{"model", model_spec_to_json(model.spec())},
               {"train", train_config_to_json(config)}};
  for (const auto& p : model.parameters()) cp.tensors.push_back({p.name, p.param->value});
  return cp;
}

VideoModel model_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.config.contains("model")) throw FormatError("checkpoint: no model config");
  VideoModel model(model_spec_from_json(checkpoint.config.at("model")));
  auto params = model.parameters();
  if (params.size() != checkpoint.tensors.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(params.size()) + " tensors, found " +
                      std::to_string(checkpoint.tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = checkpoint.tensors[i];
    auto& dst = params[i].param->value;
    if (t.name != params[i].name || t.value.rows() != dst.rows() || t.value.cols() != dst.cols()) {
      throw FormatError("checkpoint: tensor " + t.name + " does not match model parameter " +
                        params[i].name);
    }
    dst = t.value;
  }
  return model;
}

}  // namespace fagg
