#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fagg/data.hpp"
#include "fagg/errors.hpp"

using namespace fagg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fagg_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kHeader = R"({"version":1,"dim":2,"visual_dim":2,"audio_dim":0,"vocab":3})";

}  // namespace

TEST_CASE("synthetic dataset shape and determinism") {
  SyntheticOptions o;  // 5 classes, 500 videos, 20 frames, dim 16
  const auto a = generate_synthetic(o);
  const auto b = generate_synthetic(o);
  REQUIRE(a.dataset.samples.size() == 500);
  CHECK(a.dataset.samples == b.dataset.samples);
  CHECK(a.dataset.samples.front().id == "vid000");
  CHECK(a.dataset.samples.back().id == "vid499");
  for (const auto& s : a.dataset.samples) {
    CHECK(s.frames.rows() == 20);
    CHECK(s.frames.cols() == 16);
    CHECK_FALSE(s.labels.empty());
    CHECK(std::is_sorted(s.labels.begin(), s.labels.end()));
  }
  o.seed = 8;
  CHECK_FALSE(generate_synthetic(o).dataset.samples == a.dataset.samples);
}

TEST_CASE("noiseless synthetic frames are the sum of class trajectories") {
  SyntheticOptions o;
  o.videos = 20;
  o.noise = 0.0;
  o.multilabel_rate = 0.5;
  const auto s = generate_synthetic(o);
  for (const auto& v : s.dataset.samples) {
    for (std::size_t t = 0; t < o.frames; ++t) {
      Vector expect(o.dim, 0.0);
      for (int c : v.labels) {
        const auto traj = s.trajectory(static_cast<std::size_t>(c), t);
        for (std::size_t d = 0; d < o.dim; ++d) expect[d] += traj[d];
      }
      for (std::size_t d = 0; d < o.dim; ++d) {
        CHECK(v.frames(t, d) == to_storage_precision(expect[d]));
      }
    }
  }
  // The first video drifts like every other one: its last frame differs from its first.
  const auto& first = s.dataset.samples.front();
  CHECK(first.frames.row(0)[0] != first.frames.row(o.frames - 1)[0]);
}

TEST_CASE("synthetic option preconditions") {
  SyntheticOptions o;
  o.classes = 1;
  CHECK_THROWS_AS(generate_synthetic(o), ArgumentError);
  o = {};
  o.audio_dim = 16;
  CHECK_THROWS_AS(generate_synthetic(o), ArgumentError);
  o = {};
  o.multilabel_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic(o), ArgumentError);
}

TEST_CASE("dataset file round trip is lossless at storage precision") {
  SyntheticOptions o;
  o.videos = 30;
  o.audio_dim = 4;
  const auto s = generate_synthetic(o);
  const auto path = scratch("round.jsonl");
  write_dataset(s.dataset, path);
  const auto back = load_dataset(path);
  CHECK(back.meta == s.dataset.meta);
  CHECK(back.samples == s.dataset.samples);
  // Writing again gives identical bytes.
  const auto again = scratch("round2.jsonl");
  write_dataset(back, again);
  CHECK(read_file(path) == read_file(again));
}

TEST_CASE("dataset reader errors carry the line number") {
  const auto p = scratch("bad.jsonl");
  write_file(p, std::string(kHeader) + "\n" + R"({"id":"a","labels":[0],"frames":[[1,2]]})" +
                    "\n" + R"({"id":"b","labels":[0],"frames":[[1,2,3]]})" + "\n");
  try {
    load_dataset(p);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("bad.jsonl:3:") != std::string::npos);
  }

  write_file(p, std::string(kHeader) + "\n{not json\n");
  CHECK_THROWS_AS(load_dataset(p), ParseError);
  write_file(p, std::string(kHeader) + "\n" + R"({"id":"a","labels":[3],"frames":[[1,2]]})");
  CHECK_THROWS_AS(load_dataset(p), SchemaError);
  write_file(p, std::string(kHeader) + "\n" + R"({"id":"a","labels":[1,1],"frames":[[1,2]]})");
  CHECK_THROWS_AS(load_dataset(p), SchemaError);
  write_file(p, R"({"version":1,"dim":2,"visual_dim":1,"audio_dim":0,"vocab":3})");
  CHECK_THROWS_AS(load_dataset(p), SchemaError);
  write_file(p, std::string(kHeader) + "\n" + R"({"labels":[1],"frames":[[1,2]]})");
  CHECK_THROWS_AS(load_dataset(p), ParseError);
  CHECK_THROWS_AS(load_dataset(scratch("missing.jsonl")), DataError);
}

TEST_CASE("confidence formatting rounds half to even") {
  CHECK(format_confidence(1.0 / 128) == "0.007812");
  CHECK(format_confidence(3.0 / 128) == "0.023438");
  CHECK(format_confidence(0.0) == "0.000000");
  CHECK(format_confidence(1.0) == "1.000000");
  CHECK(format_confidence(0.5) == "0.500000");
}

TEST_CASE("prediction csv format, truncation and round trip") {
  PredictionSet p;
  p.videos.push_back({"v1", {{2, 0.25}, {0, 0.75}, {1, 0.25}}});
  p.videos.push_back({"v,2", {{4, 0.5}}});
  CHECK(format_predictions(p, 2) ==
        "VideoId,LabelConfidencePairs\nv1,0 0.750000 1 0.250000\nv,2,4 0.500000\n");

  const auto path = scratch("pred.csv");
  write_predictions(p, path, 20);
  const auto back = read_predictions(path);
  REQUIRE(back.videos.size() == 2);
  CHECK(back.videos[0].id == "v1");
  CHECK(back.videos[0].labels == std::vector<ScoredLabel>{{0, 0.75}, {1, 0.25}, {2, 0.25}});
  CHECK(back.videos[1].id == "v,2");
}

TEST_CASE("prediction csv validation") {
  PredictionSet dup;
  dup.videos = {{"a", {{0, 0.1}}}, {"a", {{1, 0.2}}}};
  CHECK_THROWS_AS(format_predictions(dup), DataError);
  PredictionSet range;
  range.videos = {{"a", {{0, 1.5}}}};
  CHECK_THROWS_AS(format_predictions(range), DataError);

  const auto p = scratch("badpred.csv");
  write_file(p, "wrong,header\n");
  CHECK_THROWS_AS(read_predictions(p), ParseError);
  write_file(p, "VideoId,LabelConfidencePairs\na,1 0.5 2\n");
  CHECK_THROWS_AS(read_predictions(p), ParseError);
  write_file(p, "VideoId,LabelConfidencePairs\na,1 x\n");
  CHECK_THROWS_AS(read_predictions(p), ParseError);
  write_file(p, "VideoId,LabelConfidencePairs\na,1 0.5\na,2 0.5\n");
  CHECK_THROWS_AS(read_predictions(p), DataError);
}

TEST_CASE("ranking helpers") {
  std::vector<ScoredLabel> v{{3, 0.2}, {1, 0.9}, {0, 0.2}, {2, 0.5}};
  rank_and_truncate(v, 0);
  CHECK(v == std::vector<ScoredLabel>{{1, 0.9}, {2, 0.5}, {0, 0.2}, {3, 0.2}});
  rank_and_truncate(v, 2);
  CHECK(v.size() == 2);
}

TEST_CASE("label vocabulary counts positives") {
  std::vector<FrameSequence> s{{"a", Tensor2D(1, 1), {0, 2}}, {"b", Tensor2D(1, 1), {2}}};
  const auto v = build_vocabulary(s, 4);
  CHECK(v.positive_counts == std::vector<std::size_t>{1, 0, 2, 0});
  CHECK_THROWS_AS(build_vocabulary(s, 2), DataError);
}

TEST_CASE("vocabulary counts sum to the label-set sizes") {
  SyntheticOptions o;
  o.multilabel_rate = 0.3;
  const auto s = generate_synthetic(o);
  const auto v = build_vocabulary(s.dataset.samples, o.classes);
  std::size_t counts = 0, sizes = 0;
  for (auto c : v.positive_counts) counts += c;
  for (const auto& x : s.dataset.samples) sizes += x.labels.size();
  CHECK(counts == sizes);
  CHECK(build_vocabulary({}, 3).positive_counts == std::vector<std::size_t>{0, 0, 0});
}

TEST_CASE("single-label noiseless videos follow their class trajectory") {
  SyntheticOptions o;
  o.videos = 10;
  o.noise = 0.0;
  o.multilabel_rate = 0.0;
  const auto s = generate_synthetic(o);
  for (const auto& v : s.dataset.samples) {
    REQUIRE(v.labels.size() == 1);
    for (std::size_t t = 0; t < o.frames; ++t) {
      const auto traj = s.trajectory(static_cast<std::size_t>(v.labels[0]), t);
      for (std::size_t d = 0; d < o.dim; ++d) CHECK(v.frames(t, d) == to_storage_precision(traj[d]));
    }
  }
}
