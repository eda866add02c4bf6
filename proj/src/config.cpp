#include "fnl/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fnl {

std::string to_string(Backbone b) {
  return b == Backbone::AlexNetConv ? "alexnet-conv" : "tiny-cnn";
}
std::string to_string(AggregatorKind a) {
  return a == AggregatorKind::ConvLstm ? "convlstm" : "lstm";
}
std::string to_string(InputMode m) { return m == InputMode::Frames ? "frames" : "diff"; }
std::string to_string(NormSlot s) { return s == NormSlot::None ? "none" : "batchnorm"; }

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Backbone parse_backbone(const std::string& v) {
  if (v == "alexnet-conv") return Backbone::AlexNetConv;
  if (v == "tiny-cnn") return Backbone::TinyCnn;
  throw ConfigError("unknown backbone '" + v + "' (expected alexnet-conv or tiny-cnn)");
}

AggregatorKind parse_aggregator(const std::string& v) {
  if (v == "convlstm") return AggregatorKind::ConvLstm;
  if (v == "lstm") return AggregatorKind::Lstm;
  throw ConfigError("unknown aggregator '" + v + "' (expected convlstm or lstm)");
}

InputMode parse_input_mode(const std::string& v) {
  if (v == "frames") return InputMode::Frames;
  if (v == "diff") return InputMode::Diff;
  throw ConfigError("unknown input_mode '" + v + "' (expected frames or diff)");
}

NormSlot parse_norm_slot(const std::string& v) {
  if (v == "none") return NormSlot::None;
  if (v == "batchnorm") return NormSlot::BatchNorm;
  throw ConfigError("unknown norm slot '" + v + "' (expected none or batchnorm)");
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected real, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected unsigned integer, got '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void set_key(AppConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value) {
  const std::string full = section + "." + key;
  if (section == "model") {
    if (key == "backbone") cfg.model.backbone = parse_backbone(value);
    else if (key == "aggregator") cfg.model.aggregator = parse_aggregator(value);
    else if (key == "aggregator_width") cfg.model.aggregator_width = parse_int(full, value);
    else if (key == "head") {
      cfg.model.head.clear();
      for (const auto& w : split_list(value)) cfg.model.head.push_back(parse_int(full, w));
    } else if (key == "input_mode") cfg.model.input_mode = parse_input_mode(value);
    else if (key == "backbone_init") cfg.model.backbone_init = value;
    else if (key == "conv_norms") {
      cfg.model.conv_norms.clear();
      for (const auto& s : split_list(value)) cfg.model.conv_norms.push_back(parse_norm_slot(s));
    } else if (key == "input_size") cfg.model.input_size = parse_int(full, value);
    else throw ConfigError("unknown key '" + full + "'");
  } else if (section == "train") {
    if (key == "learning_rate") cfg.train.learning_rate = parse_real(full, value);
    else if (key == "batch_size") cfg.train.batch_size = parse_int(full, value);
    else if (key == "iterations") cfg.train.iterations = parse_int(full, value);
    else if (key == "rmsprop_decay") cfg.train.rmsprop_decay = parse_real(full, value);
    else if (key == "rmsprop_epsilon") cfg.train.rmsprop_epsilon = parse_real(full, value);
    else if (key == "seed") cfg.train.seed = parse_u64(full, value);
    else if (key == "grad_clip") cfg.train.grad_clip = parse_real(full, value);
    else throw ConfigError("unknown key '" + full + "'");
  } else if (section == "data") {
    if (key == "manifest") cfg.data.manifest = value;
    else if (key == "frames_per_clip") cfg.data.frames_per_clip = parse_int(full, value);
    else if (key == "resize_dim") cfg.data.resize_dim = parse_int(full, value);
    else if (key == "crop_dim") cfg.data.crop_dim = parse_int(full, value);
    else if (key == "folds") cfg.data.folds = parse_int(full, value);
    else throw ConfigError("unknown key '" + full + "'");
  } else {
    throw ConfigError("unknown section '" + section + "'");
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (head.empty() || head.back() != 1)
    throw ConfigError("model.head must be a non-empty width list ending in 1");
  for (int w : head)
    if (w <= 0) throw ConfigError("model.head widths must be positive");
  if (aggregator_width < 0) throw ConfigError("model.aggregator_width must be positive");
  if (input_size < 4) throw ConfigError("model.input_size too small");
  if (backbone_init != "xavier" && backbone_init.rfind("archive:", 0) != 0)
    throw ConfigError("model.backbone_init must be 'xavier' or 'archive:<path>'");
}

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("train.learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (iterations < 1) throw ConfigError("train.iterations must be >= 1");
  if (rmsprop_decay <= 0 || rmsprop_decay >= 1)
    throw ConfigError("train.rmsprop_decay must be in (0,1)");
  if (rmsprop_epsilon <= 0) throw ConfigError("train.rmsprop_epsilon must be > 0");
}

void DataConfig::validate() const {
  if (frames_per_clip < 2) throw ConfigError("data.frames_per_clip must be >= 2");
  if (resize_dim < 1 || crop_dim < 1) throw ConfigError("data dims must be positive");
  if (crop_dim > resize_dim) throw ConfigError("data.crop_dim must be <= data.resize_dim");
  if (folds < 2) throw ConfigError("data.folds must be >= 2");
}

void AppConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  if (data.crop_dim != model.input_size)
    throw ConfigError("data.crop_dim (" + std::to_string(data.crop_dim) +
                      ") must equal model.input_size (" + std::to_string(model.input_size) + ")");
}

AppConfig parse_config_text(const std::string& text) {
  AppConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "data")
        throw ConfigError("unknown section '" + section + "'");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    set_key(cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

AppConfig load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(AppConfig& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const size_t dot = key.find('.');
  if (dot == std::string::npos)
    throw ConfigError("override key '" + key + "' must be section.key");
  set_key(cfg, key.substr(0, dot), key.substr(dot + 1), value);
}

std::vector<std::string> echo_config(const AppConfig& cfg) {
  std::vector<std::string> out;
  auto kv = [&out](const std::string& k, const std::string& v) { out.push_back(k + "=" + v); };
  auto real_str = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };

  kv("model.backbone", to_string(cfg.model.backbone));
  kv("model.aggregator", to_string(cfg.model.aggregator));
  kv("model.aggregator_width", std::to_string(cfg.model.width()));
  {
    std::string h;
    for (size_t i = 0; i < cfg.model.head.size(); ++i)
      h += (i ? "," : "") + std::to_string(cfg.model.head[i]);
    kv("model.head", h);
  }
  kv("model.input_mode", to_string(cfg.model.input_mode));
  kv("model.backbone_init", cfg.model.backbone_init);
  {
    std::string n;
    for (size_t i = 0; i < cfg.model.conv_norms.size(); ++i)
      n += (i ? "," : "") + to_string(cfg.model.conv_norms[i]);
    kv("model.conv_norms", n);
  }
  kv("model.input_size", std::to_string(cfg.model.input_size));
  kv("train.learning_rate", real_str(cfg.train.learning_rate));
  kv("train.batch_size", std::to_string(cfg.train.batch_size));
  kv("train.iterations", std::to_string(cfg.train.iterations));
  kv("train.rmsprop_decay", real_str(cfg.train.rmsprop_decay));
  kv("train.rmsprop_epsilon", real_str(cfg.train.rmsprop_epsilon));
  kv("train.seed", std::to_string(cfg.train.seed));
  kv("train.grad_clip", real_str(cfg.train.grad_clip));
  kv("data.manifest", cfg.data.manifest);
  kv("data.frames_per_clip", std::to_string(cfg.data.frames_per_clip));
  kv("data.resize_dim", std::to_string(cfg.data.resize_dim));
  kv("data.crop_dim", std::to_string(cfg.data.crop_dim));
  kv("data.folds", std::to_string(cfg.data.folds));
  return out;
}

}  // namespace fnl
