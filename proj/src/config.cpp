#include "tut/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tut {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

long as_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long out = std::stol(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

double as_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
std::vector<T> as_list(const std::string& v, T (*conv)(const std::string&, const std::string&), const std::string& key) {
  std::vector<T> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(conv(key, item));
  }
  return out;
}

int to_int(const std::string& key, const std::string& v) { return static_cast<int>(as_int(key, v)); }

}  // namespace

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (batch_size != 1) throw ConfigError("batch size is fixed at 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (lr_decay_patience < 1 || !(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
    throw ConfigError("invalid learning-rate decay rule");
  loss.validate();
}

int DataConfig::resample_factor() const {
  if (source_fps <= 0.0 || target_fps <= 0.0) return 1;
  const double ratio = source_fps / target_fps;
  const long k = std::lround(ratio);
  if (k < 1 || std::abs(ratio - static_cast<double>(k)) > 1e-9) throw ConfigError("fps ratio must be an integer");
  return static_cast<int>(k);
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys{
      "model.preset",          "model.refinement_stages", "model.layers",          "model.window",
      "model.heads",           "model.hidden_dim",        "model.ffn_dim",         "model.refine_hidden_dim",
      "model.refine_ffn_dim",  "model.input_dim",         "model.num_classes",     "model.input_dropout",
      "model.ffn_dropout",     "model.attention_dropout", "model.architecture",    "model.attention",
      "model.pe_mode",         "model.rpe_share",         "model.rpe_split_coders", "model.refinement_input",
      "model.max_positions",   "model.norm_eps",          "train.max_epochs",      "train.batch_size",
      "train.lr",              "train.weight_decay",      "train.lambda",          "train.beta",
      "train.theta",           "train.ba_distance",       "train.seed",            "train.shuffle",
      "train.eval_every",      "train.checkpoint_every",  "train.keep_best_epoch", "train.lr_decay_patience",
      "train.lr_decay_factor", "train.adam_beta1",        "train.adam_beta2",      "train.adam_eps",
      "data.root",             "data.train_split",        "data.eval_split",       "data.source_fps",
      "data.target_fps",       "data.ignored_classes",    "data.f1_pooling",       "data.thresholds",
  };
  return keys;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig kv;
  std::string section;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key + "' outside a section");
      key = section + "." + key;
    }
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  const auto& known = known_config_keys();
  if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key: " + key);
  values_[key] = value;
}

const std::string& KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key: " + key);
  return it->second;
}

std::vector<std::string> KeyValueConfig::apply_overrides(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  const auto& known = known_config_keys();
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) {
      rest.push_back(a);
      continue;
    }
    std::string name = a.substr(2);
    std::string value;
    bool inline_value = false;
    if (auto eq = name.find('='); eq != std::string::npos) {
      value = name.substr(eq + 1);
      name.resize(eq);
      inline_value = true;
    }
    std::replace(name.begin(), name.end(), '-', '_');
    std::vector<std::string> matches;
    for (const auto& k : known)
      if (k == name || k.substr(k.find('.') + 1) == name) matches.push_back(k);
    if (matches.empty()) {
      rest.push_back(a);
      continue;
    }
    if (matches.size() > 1) throw ConfigError("ambiguous option --" + name + "; qualify it with a section");
    if (!inline_value) {
      if (i + 1 >= args.size()) throw ConfigError("option --" + name + " needs a value");
      value = args[++i];
    }
    values_[matches.front()] = value;
  }
  return rest;
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

RunConfig bind_config(const KeyValueConfig& kv) {
  RunConfig rc;
  // Dimensions left at 0 are inferred from the dataset.
  rc.model.input_dim = 0;
  rc.model.num_classes = 0;
  const auto& v = kv.values();
  if (auto it = v.find("model.preset"); it != v.end()) {
    rc.model = model_preset(it->second);
  }
  for (const auto& [key, val] : v) {
    auto& m = rc.model;
    auto& t = rc.train;
    auto& d = rc.data;
    if (key == "model.preset") continue;
    else if (key == "model.refinement_stages") m.refinement_stages = to_int(key, val);
    else if (key == "model.layers") m.layers = to_int(key, val);
    else if (key == "model.window") m.attention.window = as_int(key, val);
    else if (key == "model.heads") m.attention.heads = as_int(key, val);
    else if (key == "model.hidden_dim") m.hidden_dim = as_int(key, val);
    else if (key == "model.ffn_dim") m.ffn_dim = as_int(key, val);
    else if (key == "model.refine_hidden_dim") m.refine_hidden_dim = as_int(key, val);
    else if (key == "model.refine_ffn_dim") m.refine_ffn_dim = as_int(key, val);
    else if (key == "model.input_dim") m.input_dim = as_int(key, val);
    else if (key == "model.num_classes") m.num_classes = as_int(key, val);
    else if (key == "model.input_dropout") m.input_dropout = as_double(key, val);
    else if (key == "model.ffn_dropout") m.ffn_dropout = as_double(key, val);
    else if (key == "model.attention_dropout") m.attention.dropout = as_double(key, val);
    else if (key == "model.architecture") m.architecture = parse_architecture(val);
    else if (key == "model.attention") m.attention.pattern = parse_attention_pattern(val);
    else if (key == "model.pe_mode") m.attention.pe_mode = parse_pe_mode(val);
    else if (key == "model.rpe_share") m.attention.rpe_share = parse_rpe_share(val);
    else if (key == "model.rpe_split_coders") m.rpe_split_coders = as_bool(key, val);
    else if (key == "model.refinement_input") m.refinement_input = parse_refinement_input(val);
    else if (key == "model.max_positions") m.max_positions = as_int(key, val);
    else if (key == "model.norm_eps") m.norm_eps = as_double(key, val);
    else if (key == "train.max_epochs") t.max_epochs = to_int(key, val);
    else if (key == "train.batch_size") t.batch_size = to_int(key, val);
    else if (key == "train.lr") t.lr = as_double(key, val);
    else if (key == "train.weight_decay") t.weight_decay = as_double(key, val);
    else if (key == "train.lambda") t.loss.lambda = as_double(key, val);
    else if (key == "train.beta") t.loss.beta = as_double(key, val);
    else if (key == "train.theta") t.loss.theta = as_double(key, val);
    else if (key == "train.ba_distance") t.loss.distance = parse_ba_distance(val);
    else if (key == "train.seed") {
      t.seed = static_cast<std::uint64_t>(as_int(key, val));
      t.seed_set = true;
    } else if (key == "train.shuffle") t.shuffle = as_bool(key, val);
    else if (key == "train.eval_every") t.eval_every = to_int(key, val);
    else if (key == "train.checkpoint_every") t.checkpoint_every = to_int(key, val);
    else if (key == "train.keep_best_epoch") t.keep_best_epoch = as_bool(key, val);
    else if (key == "train.lr_decay_patience") t.lr_decay_patience = to_int(key, val);
    else if (key == "train.lr_decay_factor") t.lr_decay_factor = as_double(key, val);
    else if (key == "train.adam_beta1") t.adam_beta1 = as_double(key, val);
    else if (key == "train.adam_beta2") t.adam_beta2 = as_double(key, val);
    else if (key == "train.adam_eps") t.adam_eps = as_double(key, val);
    else if (key == "data.root") d.root = val;
    else if (key == "data.train_split") d.train_split = val;
    else if (key == "data.eval_split") d.eval_split = val;
    else if (key == "data.source_fps") d.source_fps = as_double(key, val);
    else if (key == "data.target_fps") d.target_fps = as_double(key, val);
    else if (key == "data.ignored_classes") d.ignored_classes = as_list<int>(val, to_int, key);
    else if (key == "data.f1_pooling") {
      if (val == "pooled") d.f1_pooling = F1Pooling::Pooled;
      else if (val == "mean" || val == "per_video") d.f1_pooling = F1Pooling::PerVideoMean;
      else throw ConfigError(key + ": expected 'pooled' or 'mean'");
    } else if (key == "data.thresholds") d.thresholds = as_list<double>(val, as_double, key);
    else throw ConfigError("unknown config key: " + key);
  }
  rc.train.validate();
  rc.data.resample_factor();
  return rc;
}

std::string serialize_model_config(const ModelConfig& m) {
  std::ostringstream os;
  os << "refinement_stages = " << m.refinement_stages << "\n"
     << "layers = " << m.layers << "\n"
     << "window = " << m.attention.window << "\n"
     << "heads = " << m.attention.heads << "\n"
     << "hidden_dim = " << m.hidden_dim << "\n"
     << "ffn_dim = " << m.ffn_dim << "\n"
     << "refine_hidden_dim = " << m.refine_hidden_dim << "\n"
     << "refine_ffn_dim = " << m.refine_ffn_dim << "\n"
     << "input_dim = " << m.input_dim << "\n"
     << "num_classes = " << m.num_classes << "\n"
     << "input_dropout = " << num(m.input_dropout) << "\n"
     << "ffn_dropout = " << num(m.ffn_dropout) << "\n"
     << "attention_dropout = " << num(m.attention.dropout) << "\n"
     << "architecture = " << to_string(m.architecture) << "\n"
     << "attention = " << to_string(m.attention.pattern) << "\n"
     << "pe_mode = " << to_string(m.attention.pe_mode) << "\n"
     << "rpe_share = " << to_string(m.attention.rpe_share) << "\n"
     << "rpe_split_coders = " << (m.rpe_split_coders ? "true" : "false") << "\n"
     << "refinement_input = " << to_string(m.refinement_input) << "\n"
     << "max_positions = " << m.max_positions << "\n"
     << "norm_eps = " << num(m.norm_eps) << "\n";
  return os.str();
}

ModelConfig parse_model_config(const std::string& text) {
  RunConfig rc = bind_config(KeyValueConfig::parse("[model]\n" + text));
  rc.model.validate();
  return rc.model;
}

}  // namespace tut
