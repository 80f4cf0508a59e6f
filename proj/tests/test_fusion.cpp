#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fagg/errors.hpp"
#include "fagg/fusion.hpp"
#include "fusion_oracle.hpp"

using namespace fagg;
using namespace fagg::testing;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

PredictionSet set_of(std::vector<VideoPredictions> v) { return PredictionSet{std::move(v)}; }

PredictionSet ranked(PredictionSet p) {
  for (auto& v : p.videos) rank_and_truncate(v.labels, 0);
  return p;
}

}  // namespace

TEST_CASE("linear fusion of two sets") {
  const std::vector<PredictionSet> sets{
      set_of({{"a", {{0, 0.8}, {1, 0.4}}}, {"b", {{2, 1.0}}}}),
      set_of({{"b", {{2, 0.5}, {3, 0.5}}}, {"a", {{1, 0.6}}}}),
  };
  const std::vector<double> w{0.25, 0.75};
  const auto f = fuse_linear(sets, w);
  REQUIRE(f.videos.size() == 2);
  CHECK(f.videos[0].id == "a");  // first set's order
  auto expect = [](const VideoPredictions& v, std::vector<ScoredLabel> want) {
    REQUIRE(v.labels.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(v.labels[i].label == want[i].label);
      CHECK(v.labels[i].confidence == doctest::Approx(want[i].confidence).epsilon(1e-15));
    }
  };
  expect(f.videos[0], {{1, 0.55}, {0, 0.2}});
  expect(f.videos[1], {{2, 0.625}, {3, 0.375}});
  CHECK(fuse_linear(sets, w, 1).videos[1].labels.size() == 1);
}

TEST_CASE("weights above unit mass are renormalized") {
  const std::vector<PredictionSet> sets{set_of({{"a", {{0, 0.8}}}}), set_of({{"a", {{0, 0.4}}}})};
  CHECK(fuse_linear(sets, std::vector<double>{1.0, 1.0}).videos[0].labels[0].confidence ==
        doctest::Approx(0.6));
  CHECK(fuse_linear(sets, std::vector<double>{0.5, 0.25}).videos[0].labels[0].confidence ==
        doctest::Approx(0.5));
  // The four-checkpoint template sums to one up to rounding and is used as given.
  const std::vector<PredictionSet> four(4, set_of({{"a", {{0, 0.5}}}}));
  CHECK(fuse_linear(four, fusion_defaults::intra_template(4)).videos[0].labels[0].confidence ==
        doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("unit weight vectors reproduce a source") {
  SeededRng rng(1);
  const auto truth = random_truth(12, 6, rng);
  const auto sets = noisy_sources(truth, 6, 3, rng);
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> w(3, 0.0);
    w[j] = 1.0;
    CHECK(fuse_linear(sets, w) == ranked(sets[j]));
  }
}

TEST_CASE("fusion matches the weighted-sum oracle") {
  SeededRng rng(2);
  const auto truth = random_truth(10, 5, rng);
  auto sets = noisy_sources(truth, 5, 4, rng);
  // Drop some labels so that missing entries count as zero.
  for (auto& s : sets) {
    for (auto& v : s.videos) v.labels.resize(1 + rng.uniform_index(v.labels.size()));
  }
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> w(4);
    for (auto& x : w) x = rng.uniform() * 0.6;
    const auto f = fuse_linear(sets, w);
    for (const auto& v : f.videos) {
      for (const auto& s : v.labels) {
        CHECK(std::abs(s.confidence - weighted_sum_oracle(sets, w, v.id, s.label)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("fusion input validation") {
  const std::vector<PredictionSet> sets{set_of({{"a", {{0, 0.8}}}}), set_of({{"b", {{0, 0.4}}}})};
  CHECK_THROWS_AS(fuse_linear(sets, std::vector<double>{0.5, 0.5}), DataError);
  const std::vector<PredictionSet> ok{set_of({{"a", {{0, 0.8}}}}), set_of({{"a", {{0, 0.4}}}})};
  CHECK_THROWS_AS(fuse_linear(ok, std::vector<double>{0.5}), ArgumentError);
  CHECK_THROWS_AS(fuse_linear(ok, std::vector<double>{0.0, 0.0}), ArgumentError);
  CHECK_THROWS_AS(fuse_linear(ok, std::vector<double>{-0.1, 1.0}), ArgumentError);
  CHECK_THROWS_AS(fuse_linear(ok, std::vector<double>{NAN, 1.0}), ArgumentError);
  const std::vector<PredictionSet> extra{set_of({{"a", {{0, 0.8}}}}),
                                         set_of({{"a", {{0, 0.4}}}, {"c", {{0, 0.1}}}})};
  CHECK_THROWS_AS(fuse_linear(extra, std::vector<double>{0.5, 0.5}), DataError);
}

TEST_CASE("two-stage fusion equals nested linear fusion") {
  SeededRng rng(3);
  const auto truth = random_truth(8, 5, rng);
  std::vector<ModelCheckpointSets> models{
      {noisy_sources(truth, 5, 4, rng), fusion_defaults::intra_template(4)},
      {noisy_sources(truth, 5, 3, rng), fusion_defaults::intra_template(3)},
  };
  const std::vector<double> inter{1.0, 0.25};
  const auto f = fuse_two_stage(models, inter, 5);
  std::vector<PredictionSet> stage1{fuse_linear(models[0].checkpoints, models[0].intra_weights),
                                    fuse_linear(models[1].checkpoints, models[1].intra_weights)};
  CHECK(f == fuse_linear(stage1, inter, 5));
}

TEST_CASE("grid search dominates every single source") {
  SeededRng rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    const auto truth = random_truth(30, 8, rng);
    const auto sets = noisy_sources(truth, 8, 3, rng);
    const auto w = grid_search_weights(sets, truth, 0.1, 20);
    REQUIRE(w.size() == 3);
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0));
    for (double x : w) CHECK(std::abs(x * 10 - std::round(x * 10)) < 1e-12);
    const double fused = gap_at(fuse_linear(sets, w, 20), truth);
    for (const auto& s : sets) CHECK(fused >= gap_at(s, truth));
  }
}

TEST_CASE("grid search ties resolve to the lexicographically smallest weights") {
  const std::vector<PredictionSet> same(2, set_of({{"a", {{0, 0.9}, {1, 0.1}}}}));
  const GroundTruth truth{{"a", {0}}};
  CHECK(grid_search_weights(same, truth, 0.5) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("grid search preconditions") {
  const std::vector<PredictionSet> one(1, set_of({{"a", {{0, 0.9}}}}));
  const GroundTruth truth{{"a", {0}}};
  CHECK_THROWS_AS(grid_search_weights(one, truth, 0.1), ArgumentError);
  const std::vector<PredictionSet> six(6, set_of({{"a", {{0, 0.9}}}}));
  CHECK_THROWS_AS(grid_search_weights(six, truth, 0.1), ArgumentError);
  const std::vector<PredictionSet> two(2, set_of({{"a", {{0, 0.9}}}}));
  CHECK_THROWS_AS(grid_search_weights(two, truth, 0.3), ArgumentError);
}

TEST_CASE("regression prefers the informative source") {
  SeededRng rng(5);
  const auto truth = random_truth(40, 6, rng);
  auto sets = noisy_sources(truth, 6, 2, rng);
  // Source 0 scores the truth exactly.
  for (auto& v : sets[0].videos) {
    for (auto& s : v.labels) {
      const auto& t = truth.at(v.id);
      s.confidence = std::binary_search(t.begin(), t.end(), s.label) ? 1.0 : 0.0;
    }
  }
  const auto w = regress_weights(sets, truth);
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("regression clamps negatives and falls back to uniform") {
  // The only scored pairs are wrong, so the best fit is negative and clamps to zero.
  const std::vector<PredictionSet> sets{set_of({{"a", {{1, 0.9}}}}), set_of({{"a", {{1, 0.5}}}})};
  const GroundTruth truth{{"a", {0}}};
  CHECK(regress_weights(sets, truth) == std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(regress_weights(sets, GroundTruth{}), DataError);
}

TEST_CASE("intra-model templates and the reference ensemble") {
  using namespace fusion_defaults;
  CHECK(intra_template(3) == std::vector<double>{0.5, 0.3, 0.2});
  CHECK(intra_template(4) == std::vector<double>{0.4, 0.3, 0.2, 0.1});
  CHECK(intra_template(5) == std::vector<double>{0.4, 0.3, 0.2, 0.05, 0.05});
  CHECK(intra_template(1) == std::vector<double>{1.0});
  CHECK_THROWS_AS(intra_template(2), ArgumentError);

  const auto& models = reference_ensemble();
  REQUIRE(models.size() == 9);
  std::vector<double> inter;
  for (const auto& m : models) {
    CHECK(m.checkpoint_iterations.size() == m.intra_weights.size());
    CHECK(std::is_sorted(m.checkpoint_iterations.rbegin(), m.checkpoint_iterations.rend()));
    CHECK(std::accumulate(m.intra_weights.begin(), m.intra_weights.end(), 0.0) ==
          doctest::Approx(1.0));
    inter.push_back(m.inter_weight);
  }
  CHECK(inter == std::vector<double>{1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.25, 0.25});
  CHECK(models[0].checkpoint_iterations == std::vector<std::size_t>{353, 323, 300, 280});
  CHECK(models[8].checkpoint_iterations == std::vector<std::size_t>{53, 45, 35});
}

TEST_CASE("fusion plan parsing is strict") {
  const auto plan = parse_fusion_plan(json::parse(
      R"({"stage1":[{"sets":["a.csv","b.csv"],"weights":[0.6,0.4]},{"sets":["c.csv"]}],
          "stage2":{"weights":[1.0,0.5]}})"));
  CHECK(plan.stage1.size() == 2);
  CHECK(plan.stage1[1].weights.empty());
  CHECK(plan.stage2_weights == std::vector<double>{1.0, 0.5});
  CHECK(plan.strategy == FusionStrategy::empirical);

  CHECK_THROWS_AS(parse_fusion_plan(json::parse(R"({"stage1":[]})")), ConfigError);
  CHECK_THROWS_AS(parse_fusion_plan(json::parse(R"({"stage1":[{"sets":["a"]}],"extra":1})")),
                  ConfigError);
  CHECK_THROWS_AS(parse_fusion_plan(json::parse(R"({"stage1":[{"sets":["a"],"w":[1]}]})")),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_fusion_plan(json::parse(R"({"stage1":[{"sets":["a","b"],"weights":[1]}]})")),
      ConfigError);
  CHECK_THROWS_AS(
      parse_fusion_plan(json::parse(R"({"stage1":[{"sets":["a"]}],"strategy":"vote"})")),
      ConfigError);
  CHECK_THROWS_AS(parse_fusion_plan(json::parse(
                      R"({"stage1":[{"sets":["a"]}],"stage2":{"weights":[1]},"strategy":"grid"})")),
                  ConfigError);
}

TEST_CASE("plans run from files") {
  const auto dir = fs::temp_directory_path() / "fagg_test_fusion";
  fs::create_directories(dir);
  SeededRng rng(6);
  const auto truth = random_truth(20, 6, rng);
  const auto lstm = noisy_sources(truth, 6, 4, rng);
  const auto gru = noisy_sources(truth, 6, 3, rng);
  json stage1 = json::array();
  json lstm_paths = json::array(), gru_paths = json::array();
  for (std::size_t i = 0; i < lstm.size(); ++i) {
    const auto name = "lstm" + std::to_string(i) + ".csv";
    write_predictions(lstm[i], dir / name, 20);
    lstm_paths.push_back(name);
  }
  for (std::size_t i = 0; i < gru.size(); ++i) {
    const auto name = "gru" + std::to_string(i) + ".csv";
    write_predictions(gru[i], dir / name, 20);
    gru_paths.push_back(name);
  }
  json j = {{"stage1", {{{"sets", lstm_paths}}, {{"sets", gru_paths}}}},
            {"stage2", {{"weights", {1.0, 0.25}}}}};
  const auto out = run_fusion_plan(parse_fusion_plan(j), dir, nullptr, {});
  CHECK(out.stage1_weights[0] == fusion_defaults::intra_template(4));
  CHECK(out.stage1_weights[1] == fusion_defaults::intra_template(3));
  CHECK(out.stage2_weights == std::vector<double>{1.0, 0.25});
  REQUIRE(out.fused.videos.size() == 20);

  j.erase("stage2");
  j["strategy"] = "grid";
  CHECK_THROWS_AS(run_fusion_plan(parse_fusion_plan(j), dir, nullptr, {}), ArgumentError);
  const auto grid = run_fusion_plan(parse_fusion_plan(j), dir, &truth, {0.25, 20, {}});
  CHECK(std::accumulate(grid.stage2_weights.begin(), grid.stage2_weights.end(), 0.0) ==
        doctest::Approx(1.0));
  j["strategy"] = "regress";
  const auto reg = run_fusion_plan(parse_fusion_plan(j), dir, &truth, {});
  CHECK(reg.stage2_weights.size() == 2);

  std::ofstream(dir / "plan.json") << "{broken";
  CHECK_THROWS_AS(load_fusion_plan(dir / "plan.json"), ParseError);
}

TEST_CASE("one model with one checkpoint at unit weights is the identity") {
  SeededRng rng(7);
  const auto truth = random_truth(6, 4, rng);
  const auto src = noisy_sources(truth, 4, 1, rng);
  const std::vector<ModelCheckpointSets> models{{src, {1.0}}};
  CHECK(fuse_two_stage(models, std::vector<double>{1.0}) == ranked(src[0]));
}

TEST_CASE("reference ensemble executes end to end") {
  SeededRng rng(8);
  const auto truth = random_truth(15, 6, rng);
  std::vector<ModelCheckpointSets> models;
  std::vector<double> inter;
  for (const auto& m : fusion_defaults::reference_ensemble()) {
    models.push_back({noisy_sources(truth, 6, m.intra_weights.size(), rng), m.intra_weights});
    inter.push_back(m.inter_weight);
  }
  const auto fused = fuse_two_stage(models, inter, 20);
  REQUIRE(fused.videos.size() == 15);
  // Inter weights sum to 6, so the second stage is renormalized.
  std::vector<PredictionSet> stage1;
  for (const auto& m : models) stage1.push_back(fuse_linear(m.checkpoints, m.intra_weights));
  for (const auto& v : fused.videos) {
    for (const auto& s : v.labels) {
      CHECK(std::abs(s.confidence - weighted_sum_oracle(stage1, inter, v.id, s.label)) <= 1e-12);
      CHECK(s.confidence >= 0.0);
      CHECK(s.confidence <= 1.0);
    }
  }
}

TEST_CASE("two stages equal one stage with product weights") {
  SeededRng rng(9);
  const auto truth = random_truth(10, 5, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<ModelCheckpointSets> models{
        {noisy_sources(truth, 5, 4, rng), fusion_defaults::intra_template(4)},
        {noisy_sources(truth, 5, 3, rng), fusion_defaults::intra_template(3)},
    };
    const std::vector<double> inter{0.7, 0.3};
    std::vector<PredictionSet> flat;
    std::vector<double> product;
    for (std::size_t m = 0; m < 2; ++m) {
      for (std::size_t c = 0; c < models[m].checkpoints.size(); ++c) {
        flat.push_back(models[m].checkpoints[c]);
        product.push_back(inter[m] * models[m].intra_weights[c]);
      }
    }
    const auto two = fuse_two_stage(models, inter);
    const auto one = fuse_linear(flat, product);
    REQUIRE(two.videos.size() == one.videos.size());
    for (std::size_t v = 0; v < two.videos.size(); ++v) {
      REQUIRE(two.videos[v].labels.size() == one.videos[v].labels.size());
      for (const auto& s : two.videos[v].labels) {
        const auto it = std::find_if(one.videos[v].labels.begin(), one.videos[v].labels.end(),
                                     [&](const ScoredLabel& o) { return o.label == s.label; });
        REQUIRE(it != one.videos[v].labels.end());
        CHECK(std::abs(it->confidence - s.confidence) <= 1e-12);
      }
    }
  }
}

TEST_CASE("grid search picks the perfect source on the coarse grid") {
  SeededRng rng(10);
  const auto truth = random_truth(25, 6, rng);
  auto sets = noisy_sources(truth, 6, 2, rng);
  for (auto& v : sets[0].videos) {
    for (auto& s : v.labels) {
      const auto& t = truth.at(v.id);
      s.confidence = std::binary_search(t.begin(), t.end(), s.label) ? 0.55 : 0.45;
    }
  }
  for (auto& v : sets[1].videos) {
    for (auto& s : v.labels) s.confidence = rng.uniform();
  }
  // Brute force over the three grid points.
  const double at_half = gap_at(fuse_linear(sets, std::vector<double>{0.5, 0.5}, 20), truth, 20);
  CHECK(gap_at(fuse_linear(sets, std::vector<double>{1.0, 0.0}, 20), truth, 20) == 1.0);
  CHECK(at_half < 1.0);
  CHECK(grid_search_weights(sets, truth, 0.5) == std::vector<double>{1.0, 0.0});

  // Identical sources tie everywhere, so the smallest vector wins.
  const std::vector<PredictionSet> twins{sets[1], sets[1]};
  CHECK(grid_search_weights(twins, truth, 0.5) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("regression weights") {
  SeededRng rng(11);
  const auto truth = random_truth(60, 6, rng);
  auto sets = noisy_sources(truth, 6, 3, rng);
  // Source 1 is informative, sources 0 and 2 are noise.
  for (std::size_t j : {0u, 2u}) {
    for (auto& v : sets[j].videos) {
      for (auto& s : v.labels) s.confidence = rng.uniform();
    }
  }
  const auto w = regress_weights(sets, truth);
  CHECK(w[1] > w[0]);
  CHECK(w[1] > w[2]);
  CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0));

  // Cross-check against the best point of a small exhaustive grid.
  const auto g = grid_search_weights(sets, truth, 0.25, 20);
  CHECK(std::max_element(g.begin(), g.end()) - g.begin() == 1);

  // An exact single source gets all the weight.
  std::vector<PredictionSet> exact{sets[1]};
  for (auto& v : exact[0].videos) {
    for (auto& s : v.labels) {
      const auto& t = truth.at(v.id);
      s.confidence = std::binary_search(t.begin(), t.end(), s.label) ? 1.0 : 0.0;
    }
  }
  CHECK(regress_weights(exact, truth) == std::vector<double>{1.0});

  // A duplicated source splits its weight without changing the ranking.
  const std::vector<PredictionSet> dup{sets[1], sets[1]};
  const auto wd = regress_weights(dup, truth);
  const auto fused = fuse_linear(dup, wd);
  const auto single = ranked(sets[1]);
  for (std::size_t v = 0; v < fused.videos.size(); ++v) {
    for (std::size_t i = 0; i < fused.videos[v].labels.size(); ++i) {
      CHECK(fused.videos[v].labels[i].label == single.videos[v].labels[i].label);
    }
  }
}
