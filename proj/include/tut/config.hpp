#pragma once

#include <map>
#include <string>
#include <vector>

#include "tut/loss.hpp"
#include "tut/metrics.hpp"
#include "tut/net.hpp"

namespace tut {

struct TrainConfig {
  int max_epochs = 150;
  int batch_size = 1;
  double lr = 5e-4;
  double weight_decay = 1e-5;
  LossWeights loss;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool shuffle = true;
  int eval_every = 0;        // 0 disables periodic evaluation
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
  bool keep_best_epoch = false;
  int lr_decay_patience = 3;
  double lr_decay_factor = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct DataConfig {
  std::string root;
  std::string train_split = "train";
  std::string eval_split;  // empty: evaluate on the training split
  double source_fps = 0.0;
  double target_fps = 0.0;
  std::vector<int> ignored_classes;
  F1Pooling f1_pooling = F1Pooling::Pooled;
  std::vector<double> thresholds = default_thresholds();

  /// Stride between kept frames; 1 when no resampling is configured.
  int resample_factor() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

/// Line-based "key = value" text with [model], [train] and [data] sections.
/// Keys are stored fully qualified ("model.window"); '#' starts a comment.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  /// Applies "--key value" pairs. Unqualified keys resolve against the known
  /// key set when unambiguous. Returns the arguments that were not consumed.
  std::vector<std::string> apply_overrides(const std::vector<std::string>& args);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Every recognized fully-qualified key.
const std::vector<std::string>& known_config_keys();

/// Binds values onto defaults (the model section may start from a preset via
/// "model.preset"); unknown keys are rejected.
RunConfig bind_config(const KeyValueConfig& kv);

/// Canonical text form of a model config; used inside checkpoints.
std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

}  // namespace tut
