// fagg: synthetic data, training, prediction, evaluation and fusion from the shell.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fagg/classifiers.hpp"
#include "fagg/data.hpp"
#include "fagg/errors.hpp"
#include "fagg/fusion.hpp"
#include "fagg/metrics.hpp"
#include "fagg/model.hpp"
#include "fagg/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fagg;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

struct RunConfig {
  ModelSpec model;
  TrainConfig train;
};

// {"model": {...}, "transforms": [...], "train": {...}, "label_filter_keep": n}
RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "model" && key != "transforms" && key != "train" && key != "label_filter_keep") {
      throw ConfigError("config: unknown key \"" + key + "\"");
    }
  }
  RunConfig rc;
  json model = j.value("model", json::object());
  if (!model.is_object()) throw ConfigError("config: \"model\" must be an object");
  for (const char* derived : {"meta", "kept_labels", "seed"}) {
    if (model.contains(derived)) {
      throw ConfigError(std::string("config: model.") + derived +
                        " is derived from the data and train settings");
    }
  }
  if (j.contains("transforms")) {
    if (model.contains("transforms")) {
      throw ConfigError("config: transforms given both at top level and under model");
    }
    model["transforms"] = j.at("transforms");
  }
  if (!model.contains("rnn")) model["rnn"] = json::object();
  if (!model["rnn"].contains("layers")) model["rnn"]["layers"] = {64, 64};
  rc.model = model_spec_from_json(model);
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  if (j.contains("label_filter_keep")) {
    if (!j.at("label_filter_keep").is_number_unsigned()) {
      throw ConfigError("config: label_filter_keep must be a nonnegative integer");
    }
    if (rc.train.label_filter_keep) {
      throw ConfigError("config: label_filter_keep given both at top level and under train");
    }
    rc.train.label_filter_keep = j.at("label_filter_keep").get<std::size_t>();
  }
  return rc;
}

void check_dims(const DatasetMeta& model, const DatasetMeta& data) {
  if (model.dim != data.dim || model.visual_dim != data.visual_dim ||
      model.audio_dim != data.audio_dim || model.vocab != data.vocab) {
    throw SchemaError("checkpoint expects dim " + std::to_string(model.dim) + " (visual " +
                      std::to_string(model.visual_dim) + ", audio " +
                      std::to_string(model.audio_dim) + ") and vocab " +
                      std::to_string(model.vocab) + "; dataset has dim " +
                      std::to_string(data.dim) + " (visual " + std::to_string(data.visual_dim) +
                      ", audio " + std::to_string(data.audio_dim) + ") and vocab " +
                      std::to_string(data.vocab));
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Frame-level video feature aggregation, classification and fusion"};
  app.require_subcommand(1);

  SyntheticOptions gen_opts;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Write a seeded synthetic dataset");
  gen->add_option("--classes", gen_opts.classes)->capture_default_str();
  gen->add_option("--videos", gen_opts.videos)->capture_default_str();
  gen->add_option("--frames", gen_opts.frames)->capture_default_str();
  gen->add_option("--dim", gen_opts.dim)->capture_default_str();
  gen->add_option("--audio-dim", gen_opts.audio_dim)->capture_default_str();
  gen->add_option("--noise", gen_opts.noise)->capture_default_str();
  gen->add_option("--multilabel-rate", gen_opts.multilabel_rate)->capture_default_str();
  gen->add_option("--seed", gen_opts.seed)->capture_default_str();
  gen->add_option("--out", gen_out, "Dataset path (JSON lines)")->required();

  std::string train_config, train_data, train_out;
  std::optional<std::size_t> train_keep;
  std::optional<std::uint64_t> train_seed;
  auto* trn = app.add_subcommand("train", "Train a model and write checkpoints");
  trn->add_option("--config", train_config, "Run configuration (JSON)")->required();
  trn->add_option("--data", train_data, "Training dataset")->required();
  trn->add_option("--out", train_out, "Output directory")->required();
  trn->add_option("--label-filter-keep", train_keep, "Train on the k rarest labels only");
  trn->add_option("--seed", train_seed, "Overrides train.seed");

  std::string pred_ckpt, pred_data, pred_out;
  std::size_t pred_top = 20;
  auto* prd = app.add_subcommand("predict", "Score a dataset with a checkpoint");
  prd->add_option("--checkpoint", pred_ckpt)->required();
  prd->add_option("--data", pred_data)->required();
  prd->add_option("--out", pred_out, "Prediction CSV")->required();
  prd->add_option("--top", pred_top)->capture_default_str()->check(CLI::PositiveNumber);

  std::string eval_pred, eval_data, eval_mode = "in_predictions";
  std::size_t eval_k = 20;
  auto* evl = app.add_subcommand("eval", "GAP@k of a prediction CSV against dataset labels");
  evl->add_option("--pred", eval_pred)->required();
  evl->add_option("--data", eval_data)->required();
  evl->add_option("--k", eval_k)->capture_default_str()->check(CLI::PositiveNumber);
  evl->add_option("--m-mode", eval_mode)
      ->capture_default_str()
      ->check(CLI::IsMember({"in_predictions", "ground_truth"}));

  std::string fuse_plan, fuse_out, fuse_truth, fuse_mode = "in_predictions";
  FusionRunOptions fuse_opts;
  std::size_t fuse_top = 20;
  auto* fus = app.add_subcommand("fuse", "Two-stage weighted fusion of prediction CSVs");
  fus->add_option("--plan", fuse_plan, "Fusion plan (JSON)")->required();
  fus->add_option("--out", fuse_out, "Fused prediction CSV")->required();
  fus->add_option("--truth", fuse_truth, "Dataset with labels, for grid/regress");
  fus->add_option("--step", fuse_opts.grid_step)->capture_default_str();
  fus->add_option("--top", fuse_top)->capture_default_str()->check(CLI::PositiveNumber);
  fus->add_option("--k", fuse_opts.k)->capture_default_str()->check(CLI::PositiveNumber);
  fus->add_option("--m-mode", fuse_mode)
      ->capture_default_str()
      ->check(CLI::IsMember({"in_predictions", "ground_truth"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  if (*gen) {
    const auto synth = generate_synthetic(gen_opts);
    write_dataset(synth.dataset, gen_out);
    return 0;
  }

  if (*trn) {
    const RunConfig rc = parse_run_config(read_json_file(train_config));
    TrainConfig tc = rc.train;
    if (train_seed) tc.seed = *train_seed;
    if (train_keep) tc.label_filter_keep = *train_keep;
    if (!is_standard_mixture_count(rc.model.mixtures)) {
      std::cerr << "warning: " << rc.model.mixtures
                << " mixtures is not one of the usual counts (1, 2, 4, 8, 16)\n";
    }
    const Dataset data = load_dataset(train_data);
    ModelSpec spec = rc.model;
    spec.meta = data.meta;
    const TrainResult result = train(spec, data.samples, tc);

    fs::create_directories(train_out);
    json ckpts = json::array();
    for (const auto& c : result.checkpoints) {
      const std::string bytes = encode_checkpoint(c);
      const std::string name = "ckpt-" + std::to_string(c.step) + ".fagg";
      write_text(fs::path(train_out) / name, bytes);
      ckpts.push_back({{"file", name},
                       {"step", c.step},
                       {"epoch", c.epoch},
                       {"fnv1a64", hex64(fnv1a64(bytes))}});
    }
    const Checkpoint& last = result.checkpoints.back();
    json manifest = {
        {"config", last.config},
        {"seed", tc.seed},
        {"steps", result.steps},
        {"initial_loss", result.initial_loss},
        {"final_loss", result.final_loss},
        {"epoch_losses", result.epoch_losses},
        {"kept_labels", result.filter ? json(result.filter->kept) : json(nullptr)},
        {"checkpoints", ckpts},
    };
    write_text(fs::path(train_out) / "manifest.json", manifest.dump(2) + "\n");
    std::cout << json{{"checkpoints", ckpts.size()}, {"final_loss", result.final_loss}}.dump()
              << "\n";
    return 0;
  }

  if (*prd) {
    const VideoModel model = model_from_checkpoint(load_checkpoint(pred_ckpt));
    const Dataset data = load_dataset(pred_data);
    check_dims(model.spec().meta, data.meta);
    write_predictions(model.predict(data.samples, pred_top), pred_out, pred_top);
    return 0;
  }

  if (*evl) {
    const PredictionSet preds = read_predictions(eval_pred);
    const Dataset data = load_dataset(eval_data);
    const GapMMode mode = gap_m_mode_from_string(eval_mode);
    const double gap = gap_at(preds, ground_truth_of(data.samples), eval_k, mode);
    std::cout << json{{"gap", gap}, {"k", eval_k}, {"m_mode", eval_mode}}.dump() << "\n";
    return 0;
  }

  if (*fus) {
    fuse_opts.mode = gap_m_mode_from_string(fuse_mode);
    const FusionPlanFile plan = load_fusion_plan(fuse_plan);
    std::optional<GroundTruth> truth;
    if (!fuse_truth.empty()) truth = ground_truth_of(load_dataset(fuse_truth).samples);
    const FusionOutcome outcome =
        run_fusion_plan(plan, fs::path(fuse_plan).parent_path(), truth ? &*truth : nullptr,
                        fuse_opts);
    write_predictions(outcome.fused, fuse_out, fuse_top);
    std::cout << json{{"stage1_weights", outcome.stage1_weights},
                      {"stage2_weights", outcome.stage2_weights}}
                     .dump()
              << "\n";
    return 0;
  }
  return static_cast<int>(ExitCode::usage);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const fagg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data);
  }
}
