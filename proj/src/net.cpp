#include "tut/net.hpp"

#include <algorithm>
#include <cctype>

namespace tut {

namespace {
std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  s.erase(std::remove(s.begin(), s.end(), '-'), s.end());
  s.erase(std::remove(s.begin(), s.end(), '_'), s.end());
  return s;
}
}  // namespace

std::string to_string(AttentionPattern p) {
  switch (p) {
    case AttentionPattern::Full: return "Full";
    case AttentionPattern::Local: return "Local";
    case AttentionPattern::LogSparse: return "LogSparse";
  }
  return "?";
}

std::string to_string(PeMode p) {
  switch (p) {
    case PeMode::None: return "None";
    case PeMode::AbsSinusoidal: return "AbsSinusoidal";
    case PeMode::AbsLearnable: return "AbsLearnable";
    case PeMode::Relative: return "Relative";
  }
  return "?";
}

std::string to_string(RpeShare p) {
  switch (p) {
    case RpeShare::NoShare: return "NoShare";
    case RpeShare::StageShared: return "StageShared";
    case RpeShare::ScaleShared: return "ScaleShared";
  }
  return "?";
}

std::string to_string(Architecture a) { return a == Architecture::UTrans ? "UTrans" : "Standard"; }
std::string to_string(RefinementInput r) { return r == RefinementInput::Probabilities ? "probabilities" : "logits"; }

AttentionPattern parse_attention_pattern(const std::string& s) {
  const auto v = lower(s);
  if (v == "full") return AttentionPattern::Full;
  if (v == "local") return AttentionPattern::Local;
  if (v == "logsparse") return AttentionPattern::LogSparse;
  throw ConfigError("unknown attention pattern: " + s);
}

PeMode parse_pe_mode(const std::string& s) {
  const auto v = lower(s);
  if (v == "none") return PeMode::None;
  if (v == "abssinusoidal" || v == "sinusoidal") return PeMode::AbsSinusoidal;
  if (v == "abslearnable" || v == "learnable") return PeMode::AbsLearnable;
  if (v == "relative" || v == "rpe") return PeMode::Relative;
  throw ConfigError("unknown positional encoding mode: " + s);
}

RpeShare parse_rpe_share(const std::string& s) {
  const auto v = lower(s);
  if (v == "noshare" || v == "none") return RpeShare::NoShare;
  if (v == "stageshared" || v == "stage") return RpeShare::StageShared;
  if (v == "scaleshared" || v == "scale") return RpeShare::ScaleShared;
  throw ConfigError("unknown RPE sharing strategy: " + s);
}

Architecture parse_architecture(const std::string& s) {
  const auto v = lower(s);
  if (v == "utrans") return Architecture::UTrans;
  if (v == "standard") return Architecture::Standard;
  throw ConfigError("unknown architecture: " + s);
}

RefinementInput parse_refinement_input(const std::string& s) {
  const auto v = lower(s);
  if (v == "probabilities" || v == "probs") return RefinementInput::Probabilities;
  if (v == "logits") return RefinementInput::Logits;
  throw ConfigError("unknown refinement input: " + s);
}

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("layers_per_coder must be >= 1");
  if (refinement_stages < 0) throw ConfigError("refinement_stages must be >= 0");
  if (hidden_dim < 1 || ffn_dim < 1 || refine_hidden_dim < 1 || refine_ffn_dim < 1 || input_dim < 1 || num_classes < 1)
    throw ConfigError("all model dimensions must be positive");
  for (double p : {input_dropout, ffn_dropout})
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probabilities must be in [0, 1)");
  if (max_positions < 1) throw ConfigError("max_positions must be positive");
  if (norm_eps <= 0.0) throw ConfigError("norm_eps must be positive");
  attention.validate(hidden_dim);
  if (refinement_stages > 0) attention.validate(refine_hidden_dim);
}

ModelConfig model_preset(const std::string& dataset) {
  ModelConfig c;
  c.refinement_stages = 3;
  c.input_dim = 2048;
  c.ffn_dropout = 0.3;
  c.attention.dropout = 0.2;
  c.attention.pe_mode = PeMode::Relative;
  c.attention.rpe_share = RpeShare::ScaleShared;
  const auto v = lower(dataset);
  if (v == "50salads") {
    c.layers = 5;
    c.attention.window = 51;
    c.hidden_dim = c.ffn_dim = 128;
    c.refine_hidden_dim = c.refine_ffn_dim = 64;
    c.attention.heads = 4;
    c.input_dropout = 0.4;
    c.num_classes = 17;
  } else if (v == "gtea") {
    c.layers = 4;
    c.attention.window = 11;
    c.hidden_dim = c.ffn_dim = 64;
    c.refine_hidden_dim = c.refine_ffn_dim = 64;
    c.attention.heads = 4;
    c.input_dropout = 0.5;
    c.num_classes = 11;
  } else if (v == "breakfast") {
    c.layers = 5;
    c.attention.window = 25;
    c.hidden_dim = c.ffn_dim = 192;
    c.refine_hidden_dim = c.refine_ffn_dim = 96;
    c.attention.heads = 6;
    c.input_dropout = 0.4;
    c.num_classes = 48;
  } else {
    throw ConfigError("unknown dataset preset: " + dataset);
  }
  return c;
}

Index model_attention_entries(const ModelConfig& cfg, Index length) {
  const auto lens = cfg.encoder_lengths(length);
  const auto& a = cfg.attention;
  Index per_stage = 0;
  for (int l = 1; l <= cfg.layers; ++l) {
    per_stage += attention_entry_count(a.pattern, lens[static_cast<std::size_t>(l)], a.window, a.heads);
    per_stage += attention_entry_count(a.pattern, lens[static_cast<std::size_t>(cfg.layers - l)], a.window, a.heads);
  }
  return per_stage * cfg.num_stages();
}

}  // namespace tut
