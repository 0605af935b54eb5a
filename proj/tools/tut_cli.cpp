// tut: train, evaluate and inspect temporal action segmentation models.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tut/checkpoint.hpp"
#include "tut/config.hpp"
#include "tut/data.hpp"
#include "tut/trainer.hpp"

namespace fs = std::filesystem;
using namespace tut;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Config file first, then "--key value" overrides; anything left over is an error.
KeyValueConfig gather_config(const std::string& config_path, const std::vector<std::string>& extras) {
  KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
  const auto rest = kv.apply_overrides(extras);
  if (!rest.empty()) {
    std::string msg = "unrecognized arguments:";
    for (const auto& r : rest) msg += " " + r;
    throw ConfigError(msg);
  }
  return kv;
}

Dataset load_split(const DataConfig& d, const std::string& split) {
  if (d.root.empty()) throw ConfigError("no dataset root given (--root)");
  Dataset ds = load_dataset(d.root, split, d.source_fps);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  return ds;
}


int cmd_train(const std::string& config_path, const std::string& out_dir, const std::vector<std::string>& extras) {
  KeyValueConfig kv = gather_config(config_path, extras);
  if (!kv.has("train.seed")) throw ConfigError("--seed is required for train");
  const RunConfig rc = bind_config(kv);
  const Dataset train_set = load_split(rc.data, rc.data.train_split);
  Dataset eval_set;
  const bool separate_eval = !rc.data.eval_split.empty();
  if (separate_eval) eval_set = load_split(rc.data, rc.data.eval_split);
  const Dataset& scored = separate_eval ? eval_set : train_set;

  const fs::path out(out_dir);
  fs::create_directories(out);
  const ModelConfig mc = resolve_model_config(rc.model, train_set);
  const auto& names = train_set.classes.names();
  const std::map<std::string, std::string> meta{{"seed", std::to_string(rc.train.seed)}};

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& row, const Model<float>& model) {
    std::cerr << "epoch " << row.epoch << "  loss " << row.loss << "  ce " << row.ce << "  tmse " << row.tmse << "  ba " << row.ba
              << "  lr " << row.lr << (row.lr_reduced ? "  (lr halved)" : "") << "\n";
    if (rc.train.checkpoint_every > 0 && row.epoch % rc.train.checkpoint_every == 0)
      save_checkpoint(out / ("checkpoint_epoch" + std::to_string(row.epoch) + ".tut"), model, names, meta);
  };
  TrainResult result = train(train_set, mc, rc.train, separate_eval ? &eval_set : nullptr, rc.data, hooks);

  save_checkpoint(out / "checkpoint.tut", result.model, names, meta);
  write_text(out / "train_log.csv", log_csv(result.log));
  const RunEvaluation ev = evaluate_run(result.model, scored, rc.data);
  write_text(out / "metrics.csv", report_csv(ev.report));
  write_text(out / "config.txt", kv.serialize());
  std::cout << report_table(ev.report);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& config_path, const std::string& out_path,
             const std::vector<std::string>& extras) {
  const RunConfig rc = bind_config(gather_config(config_path, extras));
  const LoadedCheckpoint lc = load_checkpoint(ckpt);
  const std::string split = rc.data.eval_split.empty() ? rc.data.train_split : rc.data.eval_split;
  const Dataset ds = load_split(rc.data, split);
  resolve_model_config(lc.model.config(), ds);
  const RunEvaluation ev = evaluate_run(lc.model, ds, rc.data);
  if (!out_path.empty()) write_text(out_path, report_csv(ev.report));
  std::cout << report_table(ev.report);
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& features, const std::string& out_dir,
                const std::string& config_path, const std::vector<std::string>& extras) {
  const RunConfig rc = bind_config(gather_config(config_path, extras));
  const LoadedCheckpoint lc = load_checkpoint(ckpt);
  const int factor = rc.data.resample_factor();
  std::vector<VideoSample> videos;
  if (!features.empty()) {
    VideoSample v;
    v.id = fs::path(features).stem().string();
    v.features = read_features(features);
    videos.push_back(std::move(v));
  } else {
    const std::string split = rc.data.eval_split.empty() ? rc.data.train_split : rc.data.eval_split;
    videos = load_split(rc.data, split).videos;
  }
  const fs::path out(out_dir);
  fs::create_directories(out);
  for (const auto& v : videos) {
    const std::vector<int> pred = predict_video(lc.model, v, factor);
    std::string lines;
    for (int c : pred) lines += lc.class_names.at(static_cast<std::size_t>(c)) + "\n";
    write_text(out / (v.id + ".txt"), lines);
    write_text(out / (v.id + ".segments.csv"), segments_csv(pred, lc.class_names));
    write_text(out / (v.id + ".svg"), render_timeline_svg(pred, v.labels, lc.class_names));
    std::cout << v.id << ": " << extract_segments(pred).size() << " segments\n";
  }
  return 0;
}

int cmd_ablate(const std::string& grid, const std::vector<double>& values, const std::string& config_path,
               const std::string& out_path, const std::vector<std::string>& extras) {
  const RunConfig rc = bind_config(gather_config(config_path, extras));
  const Dataset train_set = load_split(rc.data, rc.data.train_split);
  const Dataset eval_set = rc.data.eval_split.empty() ? train_set : load_split(rc.data, rc.data.eval_split);
  const auto cells = ablation_grid(grid, rc.model, rc.train, values);
  const auto rows = run_ablation(cells, train_set, eval_set, rc.data, [](const AblationRow& r) {
    std::cerr << to_string(r.cell.model.architecture) << " " << to_string(r.cell.model.attention.pattern) << " "
              << to_string(r.cell.model.attention.pe_mode) << " " << to_string(r.cell.model.attention.rpe_share) << ": "
              << r.status << "\n";
  });
  const std::string csv = ablation_csv(rows, rc.data.thresholds);
  if (out_path.empty()) std::cout << csv;
  else write_text(out_path, csv);
  return 0;
}

int cmd_synth(SynthSpec spec, const std::string& out_dir, int test_videos) {
  const SyntheticDataset sd = generate_synthetic(spec);
  std::vector<std::string> all, train_ids, test_ids;
  for (std::size_t i = 0; i < sd.data.videos.size(); ++i) {
    const auto& id = sd.data.videos[i].id;
    all.push_back(id);
    (static_cast<int>(i) < static_cast<int>(sd.data.videos.size()) - test_videos ? train_ids : test_ids).push_back(id);
  }
  std::map<std::string, std::vector<std::string>> splits{{"all", all}};
  if (test_videos > 0) {
    splits["train"] = train_ids;
    splits["test"] = test_ids;
  } else {
    splits["train"] = all;
  }
  write_dataset(out_dir, sd.data, splits);
  std::cout << "wrote " << sd.data.videos.size() << " videos, " << spec.num_classes << " classes to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal U-Transformer action segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, ckpt, features;

  auto* train_cmd = app.add_subcommand("train", "train a model; every config key is accepted as --key value");
  train_cmd->allow_extras();
  train_cmd->add_option("--config", config_path, "config file with [model]/[train]/[data] sections");
  train_cmd->add_option("--out", out, "output directory")->default_val("run");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval_cmd->allow_extras();
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--config", config_path);
  eval_cmd->add_option("--out", out, "metrics CSV path");

  auto* predict_cmd = app.add_subcommand("predict", "write per-video labels, segment CSVs and timelines");
  predict_cmd->allow_extras();
  predict_cmd->add_option("--checkpoint", ckpt)->required();
  predict_cmd->add_option("--features", features, "single feature file instead of a dataset split");
  predict_cmd->add_option("--config", config_path);
  predict_cmd->add_option("--out", out)->default_val("predictions");

  SynthSpec spec;
  int test_videos = 0;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--out", out)->required();
  synth_cmd->add_option("--classes", spec.num_classes)->default_val(spec.num_classes);
  synth_cmd->add_option("--videos", spec.num_videos)->default_val(spec.num_videos);
  synth_cmd->add_option("--min-length", spec.min_length)->default_val(spec.min_length);
  synth_cmd->add_option("--max-length", spec.max_length)->default_val(spec.max_length);
  synth_cmd->add_option("--min-segments", spec.min_segments)->default_val(spec.min_segments);
  synth_cmd->add_option("--max-segments", spec.max_segments)->default_val(spec.max_segments);
  synth_cmd->add_option("--dim", spec.feature_dim)->default_val(spec.feature_dim);
  synth_cmd->add_option("--noise", spec.noise)->default_val(spec.noise);
  synth_cmd->add_option("--seed", spec.seed)->default_val(spec.seed);
  synth_cmd->add_option("--fps", spec.fps)->default_val(spec.fps);
  synth_cmd->add_option("--test-videos", test_videos, "hold out the last videos as a test split")->default_val(0);

  std::string grid;
  std::vector<double> values;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate one model per grid cell");
  ablate_cmd->allow_extras();
  ablate_cmd->add_option("--grid", grid, "architecture | positional | ba_distance | window | heads | beta")->required();
  ablate_cmd->add_option("--values", values, "sweep values for window/heads/beta")->delimiter(',');
  ablate_cmd->add_option("--config", config_path);
  ablate_cmd->add_option("--out", out, "CSV path (stdout when omitted)");

  auto* inspect_cmd = app.add_subcommand("inspect-checkpoint", "print a checkpoint's manifest and config");
  inspect_cmd->add_option("checkpoint", ckpt)->required();

  std::string npy;
  bool transpose = false;
  auto* import_cmd = app.add_subcommand("import-features", "convert a .npy array into a feature file");
  import_cmd->add_option("input", npy)->required();
  import_cmd->add_option("output", out)->required();
  import_cmd->add_flag("--transpose", transpose, "input is stored channels × frames");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config_path, out, train_cmd->remaining());
    if (*eval_cmd) return cmd_eval(ckpt, config_path, out, eval_cmd->remaining());
    if (*predict_cmd) return cmd_predict(ckpt, features, out, config_path, predict_cmd->remaining());
    if (*synth_cmd) {
      spec.validate();
      return cmd_synth(spec, out, test_videos);
    }
    if (*ablate_cmd) return cmd_ablate(grid, values, config_path, out, ablate_cmd->remaining());
    if (*inspect_cmd) {
      std::cout << inspect_checkpoint(ckpt);
      return 0;
    }
    if (*import_cmd) {
      write_features(out, read_npy(npy, transpose));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
