#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tut/data.hpp"
#include "tut/net.hpp"

namespace tut {

// Container: "TUTCKPT1", u32 entry count, then per entry
//   u32 name length, name bytes, u8 dtype, u32 rank, rank × u64 dims,
//   u64 payload offset, u64 payload bytes
// followed by the little-endian payload. Offsets are relative to the payload
// start. Text entries ("__config__", "__classes__", "__meta__") use dtype 0.
enum class CheckpointDtype : std::uint8_t { Text = 0, F32 = 1, F64 = 2 };

struct CheckpointEntry {
  std::string name;
  CheckpointDtype dtype = CheckpointDtype::F32;
  std::vector<std::uint64_t> dims;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

struct LoadedCheckpoint {
  Model<float> model;
  std::vector<std::string> class_names;
  std::map<std::string, std::string> meta;
};

std::string encode_checkpoint(const Model<float>& model, const std::vector<std::string>& class_names,
                              const std::map<std::string, std::string>& meta = {});
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const std::vector<std::string>& class_names, const std::map<std::string, std::string>& meta = {});

/// Rebuilds the model from the stored config and copies every tensor in.
/// Missing, extra or misshapen tensors raise LoadError, as does a stored
/// config that differs from `expected` when one is given.
LoadedCheckpoint decode_checkpoint(const std::string& bytes, const ModelConfig* expected = nullptr,
                                   const std::string& origin = "<memory>");
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

std::vector<CheckpointEntry> checkpoint_manifest(const std::string& bytes, const std::string& origin = "<memory>");
/// Human-readable manifest listing plus stored config.
std::string inspect_checkpoint(const std::filesystem::path& path);

}  // namespace tut
