#include "tut/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "byte_io.hpp"
#include "tut/rng.hpp"

namespace tut {

namespace fs = std::filesystem;

using namespace byte_io;

namespace {

constexpr char kFeatureMagic[] = "TUTFEAT1";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

}  // namespace

ClassMapping::ClassMapping(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (!ids_.emplace(names_[i], static_cast<int>(i)).second) throw LoadError("duplicate class name: " + names_[i]);
}

ClassMapping ClassMapping::parse(const std::string& text) {
  std::map<int, std::string> by_id;
  int line_no = 0;
  for (const auto& raw : lines_of(text)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    std::istringstream is(line);
    int id = -1;
    std::string name, extra;
    if (!(is >> id >> name) || (is >> extra) || id < 0)
      throw LoadError("mapping line " + std::to_string(line_no) + " is malformed: '" + line + "'");
    if (!by_id.emplace(id, name).second) throw LoadError("mapping line " + std::to_string(line_no) + ": duplicate id");
  }
  std::vector<std::string> names;
  for (const auto& [id, name] : by_id) {
    if (id != static_cast<int>(names.size())) throw LoadError("mapping ids must be contiguous from 0");
    names.push_back(name);
  }
  return ClassMapping(std::move(names));
}

std::string ClassMapping::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < names_.size(); ++i) out += std::to_string(i) + " " + names_[i] + "\n";
  return out;
}

int ClassMapping::id(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw LoadError("unknown class name: " + name);
  return it->second;
}

const std::string& ClassMapping::name(int id) const {
  if (id < 0 || id >= static_cast<int>(names_.size())) throw LoadError("class id out of range: " + std::to_string(id));
  return names_[static_cast<std::size_t>(id)];
}

std::string encode_features(const FeatureMatrix& features) {
  std::string out(kFeatureMagic, 8);
  put_le<std::uint32_t>(out, 2);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(features.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(features.cols()));
  out.reserve(out.size() + static_cast<std::size_t>(features.size()) * 4);
  for (Index i = 0; i < features.size(); ++i) put_le<float>(out, features.data()[i]);
  return out;
}

FeatureMatrix decode_features(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8 || bytes.compare(0, 8, kFeatureMagic, 8) != 0) throw LoadError(origin + ": not a TUTFEAT1 file");
  std::size_t at = 8;
  const auto rank = get_le<std::uint32_t>(bytes, at, origin);
  if (rank != 2) throw LoadError(origin + ": expected rank 2, got " + std::to_string(rank));
  const auto rows = get_le<std::uint64_t>(bytes, at, origin);
  const auto cols = get_le<std::uint64_t>(bytes, at, origin);
  if (bytes.size() - at != rows * cols * 4) throw LoadError(origin + ": payload size does not match header");
  FeatureMatrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = get_le<float>(bytes, at, origin);
  return m;
}

void write_features(const fs::path& path, const FeatureMatrix& features) { spit(path, encode_features(features)); }

FeatureMatrix read_features(const fs::path& path) {
  if (!fs::exists(path)) throw LoadError("missing feature file: " + path.string());
  return decode_features(slurp(path), path.string());
}

FeatureMatrix read_npy(const fs::path& path, bool transpose) {
  const std::string bytes = slurp(path);
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0) throw LoadError(path.string() + ": not a .npy file");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t at = 8;
  std::size_t header_len = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
    at = 10;
  } else {
    if (bytes.size() < 12) throw LoadError(path.string() + ": truncated header");
    at = 8;
    header_len = get_le<std::uint32_t>(bytes, at, path.string());
  }
  if (at + header_len > bytes.size()) throw LoadError(path.string() + ": truncated header");
  const std::string header = bytes.substr(at, header_len);
  at += header_len;
  std::smatch m;
  if (!std::regex_search(header, m, std::regex("'descr':\\s*'([<>|=]?)([fi])(\\d)'")))
    throw LoadError(path.string() + ": unsupported dtype");
  const std::string order = m[1];
  const char kind = m[2].str()[0];
  const int width = std::stoi(m[3]);
  if (order == ">" || kind != 'f' || (width != 4 && width != 8)) throw LoadError(path.string() + ": only little-endian f4/f8 arrays are supported");
  if (std::regex_search(header, std::regex("'fortran_order':\\s*True"))) throw LoadError(path.string() + ": fortran order unsupported");
  if (!std::regex_search(header, m, std::regex("'shape':\\s*\\((\\d+),\\s*(\\d+),?\\s*\\)")))
    throw LoadError(path.string() + ": expected a 2-D array");
  const Index rows = std::stoll(m[1]);
  const Index cols = std::stoll(m[2]);
  if (bytes.size() - at != static_cast<std::size_t>(rows * cols * width)) throw LoadError(path.string() + ": payload size mismatch");
  FeatureMatrix out(rows, cols);
  for (Index i = 0; i < out.size(); ++i)
    out.data()[i] = width == 4 ? get_le<float>(bytes, at, path.string()) : static_cast<float>(get_le<double>(bytes, at, path.string()));
  if (transpose) return out.transpose();
  return out;
}

std::vector<std::string> read_split(const fs::path& path) {
  std::vector<std::string> ids;
  for (const auto& raw : lines_of(slurp(path))) {
    std::string id = trim(raw);
    if (id.empty()) continue;
    for (const char* ext : {".txt", ".feat", ".npy"})
      if (id.size() > std::strlen(ext) && id.compare(id.size() - std::strlen(ext), std::strlen(ext), ext) == 0)
        id.resize(id.size() - std::strlen(ext));
    ids.push_back(id);
  }
  return ids;
}

std::vector<int> read_labels(const fs::path& path, const ClassMapping& classes) {
  if (!fs::exists(path)) throw LoadError("missing ground-truth file: " + path.string());
  std::vector<int> out;
  int line_no = 0;
  for (const auto& raw : lines_of(slurp(path))) {
    ++line_no;
    const std::string name = trim(raw);
    if (name.empty()) continue;
    try {
      out.push_back(classes.id(name));
    } catch (const LoadError&) {
      throw LoadError(path.string() + ":" + std::to_string(line_no) + ": unknown class name '" + name + "'");
    }
  }
  return out;
}

void write_labels(const fs::path& path, const std::vector<int>& labels, const ClassMapping& classes) {
  std::string out;
  for (int c : labels) out += classes.name(c) + "\n";
  spit(path, out);
}

Dataset load_dataset(const fs::path& root, const std::string& split, double fps) {
  const DatasetLayout layout{root};
  Dataset ds;
  ds.classes = ClassMapping::parse(slurp(layout.mapping()));
  fs::path split_path = fs::exists(split) && fs::is_regular_file(split) ? fs::path(split) : layout.split(split);
  for (const auto& id : read_split(split_path)) {
    VideoSample v;
    v.id = id;
    v.fps = fps;
    v.labels = read_labels(layout.ground_truth(id), ds.classes);
    v.features = read_features(layout.features(id));
    const auto n_feat = static_cast<std::size_t>(v.features.rows());
    if (n_feat != v.labels.size()) {
      const std::size_t n = std::min(n_feat, v.labels.size());
      ds.warnings.push_back(id + ": " + std::to_string(v.labels.size()) + " labels vs " + std::to_string(n_feat) +
                            " feature rows, truncated to " + std::to_string(n));
      v.labels.resize(n);
      v.features.conservativeResize(static_cast<Index>(n), Eigen::NoChange);
    }
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

void write_dataset(const fs::path& root, const Dataset& dataset, const std::map<std::string, std::vector<std::string>>& splits) {
  const DatasetLayout layout{root};
  spit(layout.mapping(), dataset.classes.serialize());
  for (const auto& v : dataset.videos) {
    write_labels(layout.ground_truth(v.id), v.labels, dataset.classes);
    write_features(layout.features(v.id), v.features);
  }
  for (const auto& [name, ids] : splits) {
    std::string text;
    for (const auto& id : ids) text += id + "\n";
    spit(layout.split(name), text);
  }
}

VideoSample resample_temporal(const VideoSample& sample, double source_fps, double target_fps) {
  if (source_fps <= 0.0 || target_fps <= 0.0) throw UnsupportedError("frame rates must be positive");
  const double ratio = source_fps / target_fps;
  const auto k = static_cast<Index>(std::llround(ratio));
  if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-9)
    throw UnsupportedError("non-integer resampling ratio " + std::to_string(source_fps) + "/" + std::to_string(target_fps));
  VideoSample out;
  out.id = sample.id;
  out.fps = target_fps;
  const Index n = (sample.length() + k - 1) / k;
  out.features.resize(n, sample.features.cols());
  for (Index t = 0; t < n; ++t) {
    out.features.row(t) = sample.features.row(t * k);
    if (static_cast<std::size_t>(t * k) < sample.labels.size()) out.labels.push_back(sample.labels[static_cast<std::size_t>(t * k)]);
  }
  return out;
}

std::vector<int> upsample_predictions(const std::vector<int>& labels, int factor, Index original_length) {
  if (factor < 1) throw UnsupportedError("upsampling factor must be >= 1");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(original_length));
  for (int c : labels)
    for (int r = 0; r < factor && static_cast<Index>(out.size()) < original_length; ++r) out.push_back(c);
  while (static_cast<Index>(out.size()) < original_length && !labels.empty()) out.push_back(labels.back());
  return out;
}

void SynthSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
  if (num_videos < 1 || min_length < 1 || max_length < min_length || min_segments < 1 || max_segments < min_segments ||
      feature_dim < 1 || noise < 0.0 || fps <= 0.0)
    throw std::invalid_argument("invalid synthetic dataset spec");
  if (min_length < max_segments) throw std::invalid_argument("min_length must be at least max_segments");
}

SyntheticDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  CounterRng rng(mix64(spec.seed ^ 0x73796e7468ULL));
  SyntheticDataset out;
  out.prototypes.resize(spec.num_classes, spec.feature_dim);
  for (Index i = 0; i < out.prototypes.size(); ++i) out.prototypes.data()[i] = static_cast<float>(rng.normal());

  std::vector<std::string> names;
  for (int c = 0; c < spec.num_classes; ++c) names.push_back("action" + std::to_string(c));
  out.data.classes = ClassMapping(names);

  for (int v = 0; v < spec.num_videos; ++v) {
    VideoSample s;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%03d", v);
    s.id = id;
    s.fps = spec.fps;
    const Index T = rng.uniform_int(spec.min_length, spec.max_length);
    const auto n_seg = static_cast<int>(rng.uniform_int(spec.min_segments, spec.max_segments));
    std::vector<double> weights;
    double total = 0.0;
    for (int k = 0; k < n_seg; ++k) {
      weights.push_back(0.5 + rng.uniform());
      total += weights.back();
    }
    std::vector<Index> lengths;
    Index used = 0;
    for (int k = 0; k < n_seg; ++k) {
      Index len = k + 1 == n_seg ? T - used : std::max<Index>(1, static_cast<Index>(std::floor(T * weights[static_cast<std::size_t>(k)] / total)));
      len = std::min(len, T - used - (n_seg - k - 1));
      lengths.push_back(len);
      used += len;
    }
    int prev = -1;
    for (Index len : lengths) {
      int c = static_cast<int>(rng.uniform_int(0, spec.num_classes - 2));
      if (prev >= 0 && c >= prev) ++c;
      else if (prev < 0) c = static_cast<int>(rng.uniform_int(0, spec.num_classes - 1));
      s.labels.insert(s.labels.end(), static_cast<std::size_t>(len), c);
      prev = c;
    }
    s.features.resize(T, spec.feature_dim);
    for (Index t = 0; t < T; ++t)
      for (Index j = 0; j < spec.feature_dim; ++j)
        s.features(t, j) = out.prototypes(s.labels[static_cast<std::size_t>(t)], j) + static_cast<float>(spec.noise * rng.normal());
    out.data.videos.push_back(std::move(s));
  }
  return out;
}

}  // namespace tut
