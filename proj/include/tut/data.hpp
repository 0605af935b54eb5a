#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tut/tensor.hpp"

namespace tut {

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using FeatureMatrix = Matrix<float>;

struct VideoSample {
  std::string id;
  FeatureMatrix features;  // T × d_in
  std::vector<int> labels;
  double fps = 0.0;

  Index length() const { return features.rows(); }
};

/// Bijection between class names and contiguous ids 0..C−1.
class ClassMapping {
 public:
  ClassMapping() = default;
  explicit ClassMapping(std::vector<std::string> names);

  /// Parses "<id> <class-name>" lines.
  static ClassMapping parse(const std::string& text);
  std::string serialize() const;

  int id(const std::string& name) const;
  const std::string& name(int id) const;
  Index size() const { return static_cast<Index>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

struct Dataset {
  ClassMapping classes;
  std::vector<VideoSample> videos;
  std::vector<std::string> warnings;

  Index feature_dim() const { return videos.empty() ? 0 : videos.front().features.cols(); }
};

// Feature container: "TUTFEAT1", u32 rank (2), u64 T, u64 d, then
// little-endian f32 row-major payload.
void write_features(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_features(const std::filesystem::path& path);
std::string encode_features(const FeatureMatrix& features);
FeatureMatrix decode_features(const std::string& bytes, const std::string& origin = "<memory>");

/// Reads a 2-D float32/float64 .npy array. The usual I3D releases store d×T, hence
/// the optional transpose.
FeatureMatrix read_npy(const std::filesystem::path& path, bool transpose);

/// Dataset directory layout:
///   mapping.txt                 "<id> <class-name>" per line
///   groundTruth/<video>.txt     one class name per frame
///   features/<video>.feat       feature container
///   splits/<name>.bundle        one video id per line
struct DatasetLayout {
  std::filesystem::path root;

  std::filesystem::path mapping() const { return root / "mapping.txt"; }
  std::filesystem::path ground_truth(const std::string& id) const { return root / "groundTruth" / (id + ".txt"); }
  std::filesystem::path features(const std::string& id) const { return root / "features" / (id + ".feat"); }
  std::filesystem::path split(const std::string& name) const { return root / "splits" / (name + ".bundle"); }
};

std::vector<std::string> read_split(const std::filesystem::path& path);

/// Loads every video listed in `split` (a bundle name under splits/ or a
/// path). Length mismatches are truncated to the shorter side with a warning.
Dataset load_dataset(const std::filesystem::path& root, const std::string& split, double fps = 0.0);

/// Writes mapping, labels and features, plus the given split bundles.
void write_dataset(const std::filesystem::path& root, const Dataset& dataset,
                   const std::map<std::string, std::vector<std::string>>& splits);

std::vector<int> read_labels(const std::filesystem::path& path, const ClassMapping& classes);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels, const ClassMapping& classes);

/// Keeps every k-th frame where k = source_fps / target_fps (integral).
VideoSample resample_temporal(const VideoSample& sample, double source_fps, double target_fps);

/// Repeats each label `factor` times, then trims or extends with the last
/// label to `original_length`.
std::vector<int> upsample_predictions(const std::vector<int>& labels, int factor, Index original_length);

struct SynthSpec {
  int num_classes = 4;
  int num_videos = 8;
  Index min_length = 128;
  Index max_length = 256;
  int min_segments = 3;
  int max_segments = 8;
  Index feature_dim = 16;
  double noise = 0.25;
  std::uint64_t seed = 0;
  double fps = 15.0;

  void validate() const;
};

struct SyntheticDataset {
  Dataset data;
  FeatureMatrix prototypes;  // C × feature_dim
};

/// Random segment sequences (no two adjacent segments share a class); each
/// frame is its class prototype plus isotropic Gaussian noise.
SyntheticDataset generate_synthetic(const SynthSpec& spec);

}  // namespace tut
