#include "tut/checkpoint.hpp"

#include <sstream>

#include "byte_io.hpp"
#include "tut/config.hpp"

namespace tut {

using namespace byte_io;

namespace {

constexpr char kMagic[] = "TUTCKPT1";
constexpr std::size_t kMagicLen = 8;

struct Blob {
  CheckpointEntry entry;
  std::string payload;
};

Blob text_blob(const std::string& name, const std::string& text) {
  Blob b;
  b.entry.name = name;
  b.entry.dtype = CheckpointDtype::Text;
  b.entry.dims = {text.size()};
  b.payload = text;
  return b;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) out.push_back(line);
  return out;
}

struct Parsed {
  std::vector<CheckpointEntry> entries;
  std::size_t payload_start = 0;
};

Parsed parse(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0) throw LoadError(origin + ": not a checkpoint");
  std::size_t at = kMagicLen;
  Parsed p;
  const auto count = get_le<std::uint32_t>(bytes, at, origin);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = get_le<std::uint32_t>(bytes, at, origin);
    if (at + len > bytes.size()) throw LoadError(origin + ": truncated file");
    e.name = bytes.substr(at, len);
    at += len;
    const auto dtype = get_le<std::uint8_t>(bytes, at, origin);
    if (dtype > 2) throw LoadError(origin + ": unknown dtype for " + e.name);
    e.dtype = static_cast<CheckpointDtype>(dtype);
    const auto rank = get_le<std::uint32_t>(bytes, at, origin);
    for (std::uint32_t r = 0; r < rank; ++r) e.dims.push_back(get_le<std::uint64_t>(bytes, at, origin));
    e.offset = get_le<std::uint64_t>(bytes, at, origin);
    e.nbytes = get_le<std::uint64_t>(bytes, at, origin);
    p.entries.push_back(std::move(e));
  }
  p.payload_start = at;
  for (const auto& e : p.entries)
    if (p.payload_start + e.offset + e.nbytes > bytes.size()) throw LoadError(origin + ": payload of " + e.name + " out of range");
  return p;
}

std::string dtype_name(CheckpointDtype d) {
  switch (d) {
    case CheckpointDtype::Text: return "text";
    case CheckpointDtype::F32: return "f32";
    case CheckpointDtype::F64: return "f64";
  }
  return "?";
}

}  // namespace

std::string encode_checkpoint(const Model<float>& model, const std::vector<std::string>& class_names,
                              const std::map<std::string, std::string>& meta) {
  std::vector<Blob> blobs;
  blobs.push_back(text_blob("__config__", serialize_model_config(model.config())));
  blobs.push_back(text_blob("__classes__", join_lines(class_names)));
  std::string meta_text;
  for (const auto& [k, v] : meta) meta_text += k + " = " + v + "\n";
  blobs.push_back(text_blob("__meta__", meta_text));
  for (const auto& [name, t] : model.params().entries()) {
    Blob b;
    b.entry.name = name;
    b.entry.dtype = CheckpointDtype::F32;
    b.entry.dims = {static_cast<std::uint64_t>(t.rows()), static_cast<std::uint64_t>(t.cols())};
    const auto& v = t.value();
    for (Index i = 0; i < v.size(); ++i) put_le<float>(b.payload, v.data()[i]);
    blobs.push_back(std::move(b));
  }

  std::string out(kMagic, kMagicLen);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blobs.size()));
  std::uint64_t offset = 0;
  for (auto& b : blobs) {
    b.entry.offset = offset;
    b.entry.nbytes = b.payload.size();
    offset += b.payload.size();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.entry.name.size()));
    out += b.entry.name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(b.entry.dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.entry.dims.size()));
    for (auto d : b.entry.dims) put_le<std::uint64_t>(out, d);
    put_le<std::uint64_t>(out, b.entry.offset);
    put_le<std::uint64_t>(out, b.entry.nbytes);
  }
  for (const auto& b : blobs) out += b.payload;
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const std::vector<std::string>& class_names,
                     const std::map<std::string, std::string>& meta) {
  spit(path, encode_checkpoint(model, class_names, meta));
}

std::vector<CheckpointEntry> checkpoint_manifest(const std::string& bytes, const std::string& origin) {
  return parse(bytes, origin).entries;
}

LoadedCheckpoint decode_checkpoint(const std::string& bytes, const ModelConfig* expected, const std::string& origin) {
  const Parsed p = parse(bytes, origin);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : p.entries)
    if (!by_name.emplace(e.name, &e).second) throw LoadError(origin + ": duplicate entry " + e.name);
  auto text = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->dtype != CheckpointDtype::Text) throw LoadError(origin + ": missing " + name);
    return bytes.substr(p.payload_start + it->second->offset, it->second->nbytes);
  };

  const std::string config_text = text("__config__");
  ModelConfig cfg;
  try {
    cfg = parse_model_config(config_text);
  } catch (const std::exception& e) {
    throw LoadError(origin + ": bad stored config: " + e.what());
  }
  if (expected && serialize_model_config(*expected) != config_text)
    throw LoadError(origin + ": checkpoint config does not match the requested model config");

  LoadedCheckpoint out{Model<float>(cfg, 0), split_lines(text("__classes__")), {}};
  for (const auto& line : split_lines(text("__meta__"))) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) out.meta[line.substr(0, eq)] = line.substr(eq + 3);
  }

  std::size_t tensors = 0;
  for (const auto& e : p.entries)
    if (e.dtype != CheckpointDtype::Text) ++tensors;
  if (tensors != out.model.params().size())
    throw LoadError(origin + ": checkpoint holds " + std::to_string(tensors) + " tensors, model expects " +
                    std::to_string(out.model.params().size()));
  for (const auto& [name, t] : out.model.params().entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError(origin + ": missing tensor " + name);
    const CheckpointEntry& e = *it->second;
    if (e.dims.size() != 2 || e.dims[0] != static_cast<std::uint64_t>(t.rows()) || e.dims[1] != static_cast<std::uint64_t>(t.cols()))
      throw LoadError(origin + ": shape mismatch for " + name);
    const std::size_t width = e.dtype == CheckpointDtype::F64 ? 8 : 4;
    if (e.nbytes != width * static_cast<std::uint64_t>(t.size())) throw LoadError(origin + ": byte count mismatch for " + name);
    Matrix<float>& v = Tensor<float>(t).mutable_value();
    std::size_t at = p.payload_start + e.offset;
    for (Index i = 0; i < v.size(); ++i)
      v.data()[i] = e.dtype == CheckpointDtype::F64 ? static_cast<float>(get_le<double>(bytes, at, origin)) : get_le<float>(bytes, at, origin);
  }
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  return decode_checkpoint(slurp(path), expected, path.string());
}

std::string inspect_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  const Parsed p = parse(bytes, path.string());
  std::ostringstream os;
  std::uint64_t scalars = 0;
  std::string config;
  for (const auto& e : p.entries) {
    if (e.name == "__config__") config = bytes.substr(p.payload_start + e.offset, e.nbytes);
    os << e.name << "  " << dtype_name(e.dtype) << "  [";
    for (std::size_t i = 0; i < e.dims.size(); ++i) os << (i ? "," : "") << e.dims[i];
    os << "]  offset=" << e.offset << "  bytes=" << e.nbytes << "\n";
    if (e.dtype != CheckpointDtype::Text) scalars += e.nbytes / (e.dtype == CheckpointDtype::F64 ? 8 : 4);
  }
  os << "entries: " << p.entries.size() << "  parameters: " << scalars << "\n\n[model]\n" << config;
  return os.str();
}

}  // namespace tut
