#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tut/config.hpp"
#include "tut/data.hpp"
#include "tut/loss.hpp"
#include "tut/metrics.hpp"
#include "tut/net.hpp"
#include "tut/optim.hpp"

namespace tut {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Halves the rate once the epoch-mean training loss has risen above the
/// previous epoch's `patience` times since the last halving.
class LrSchedule {
 public:
  LrSchedule() = default;
  LrSchedule(double lr, int patience, double factor) : lr_(lr), patience_(patience), factor_(factor) {}

  /// Feeds one epoch's mean loss; returns true when the rate was reduced.
  bool observe(double epoch_loss);

  double lr() const { return lr_; }
  int counter() const { return counter_; }

 private:
  double lr_ = 1e-3;
  int patience_ = 3;
  double factor_ = 0.5;
  int counter_ = 0;
  std::optional<double> previous_;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double tmse = 0.0;
  double ba = 0.0;
  double lr = 0.0;  // rate used during the epoch
  bool lr_reduced = false;
  std::optional<EvalReport> eval;
};

struct TrainState {
  int epoch = 0;
  std::vector<double> loss_history;
  LrSchedule schedule;
  AdamState<float> adam;
  DropoutStreams dropout;
};

struct TrainResult {
  Model<float> model;
  std::vector<EpochLog> log;
  TrainState state;
  int selected_epoch = 0;
};

struct TrainHooks {
  /// Called after each epoch; the model holds that epoch's parameters.
  std::function<void(const EpochLog&, const Model<float>&)> on_epoch;
};

/// Fills input_dim / num_classes left at 0 from the dataset and checks the
/// rest against it.
ModelConfig resolve_model_config(ModelConfig cfg, const Dataset& data);

/// Frames per video must be at least 2^N for the U-shaped architecture.
/// `eval_set` is scored every `eval_every` epochs when given.
TrainResult train(const Dataset& train_set, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const Dataset* eval_set = nullptr, const DataConfig& data_cfg = {}, const TrainHooks& hooks = {});

/// Argmax of the last stage with dropout off and no graph recorded.
std::vector<int> predict_labels(const Model<float>& model, const FeatureMatrix& features);

/// Predicts at the model's frame rate (resampling by `factor`) and repeats
/// labels back to the original length.
std::vector<int> predict_video(const Model<float>& model, const VideoSample& sample, int factor);

struct RunEvaluation {
  EvalReport report;
  std::vector<LabeledPrediction> videos;
};

RunEvaluation evaluate_run(const Model<float>& model, const Dataset& data, const DataConfig& data_cfg);

std::string log_csv(const std::vector<EpochLog>& log);
/// One "class,start,end" row per predicted segment (inclusive frames).
std::string segments_csv(std::span<const int> labels, const std::vector<std::string>& class_names);
/// Coloured segment strip of the prediction, plus a ground-truth strip when
/// `gt` is non-empty.
std::string render_timeline_svg(std::span<const int> pred, std::span<const int> gt, const std::vector<std::string>& class_names);

// ---- ablation grids ----

struct AblationCell {
  ModelConfig model;
  TrainConfig train;
};

struct AblationRow {
  AblationCell cell;
  std::string status = "ok";  // "skipped: <reason>" when the cell cannot run
  EvalReport report;
  double final_loss = 0.0;
  Index attention_entries = 0;  // peak retained entries over the dataset's videos
};

/// Named grids: "architecture" ({UTrans, Standard} × {Full, Local, LogSparse}),
/// "positional" (none, sinusoidal, learnable, relative × 3 share modes),
/// "ba_distance", and the sweeps "window", "heads", "beta" over `values`.
std::vector<AblationCell> ablation_grid(const std::string& grid, const ModelConfig& base_model, const TrainConfig& base_train,
                                        const std::vector<double>& values = {});

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const Dataset& train_set,
                                      const Dataset& eval_set, const DataConfig& data_cfg,
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_csv(const std::vector<AblationRow>& rows, std::span<const double> thresholds);

}  // namespace tut
