#include "restr/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

#include "restr/error.hpp"

namespace restr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field size_field(std::string name, std::string doc, std::size_t T::*member) {
  constexpr bool model = std::is_same_v<T, ModelConfig>;
  auto part = [](auto& c) -> auto& {
    if constexpr (model) {
      return c.model;
    } else {
      return c.train;
    }
  };
  return Field{{name, std::move(doc), model},
               [=](RunConfig& c, const std::string& v) { part(c).*member = parse_size(name, v); },
               [=](const RunConfig& c) { return std::to_string(part(c).*member); }};
}

Field real_field(std::string name, std::string doc, double TrainConfig::*member) {
  return Field{{name, std::move(doc), false},
               [=](RunConfig& c, const std::string& v) { c.train.*member = parse_real(name, v); },
               [=](const RunConfig& c) { return real_text(c.train.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(size_field("image_h", "input height in pixels", &ModelConfig::image_h));
    f.push_back(size_field("image_w", "input width in pixels", &ModelConfig::image_w));
    f.push_back(size_field("channels", "input channels", &ModelConfig::channels));
    f.push_back(size_field("patch_size", "patch side P, a power of two", &ModelConfig::patch_size));
    f.push_back(size_field("vision_dim", "vision encoder width", &ModelConfig::vision_dim));
    f.push_back(size_field("vision_layers", "vision encoder blocks", &ModelConfig::vision_layers));
    f.push_back(size_field("language_dim", "language encoder width", &ModelConfig::language_dim));
    f.push_back(size_field("language_layers", "language encoder blocks", &ModelConfig::language_layers));
    f.push_back(size_field("max_tokens", "expression length after padding", &ModelConfig::max_tokens));
    f.push_back(size_field("vocab_size", "token embedding rows", &ModelConfig::vocab_size));
    f.push_back(size_field("fusion_dim", "fusion width D", &ModelConfig::fusion_dim));
    f.push_back(size_field("fusion_layers", "total fusion blocks (split in half for CME/IME)", &ModelConfig::fusion_layers));
    f.push_back(size_field("heads", "attention heads k", &ModelConfig::heads));
    f.push_back(size_field("mlp_ratio", "MLP hidden width as a multiple of the block width", &ModelConfig::mlp_ratio));
    f.push_back(Field{{"fusion_variant", "VME, IME, CME or CME_SHARED", true},
                      [](RunConfig& c, const std::string& v) { c.model.fusion_variant = parse_fusion_variant(v); },
                      [](const RunConfig& c) { return to_string(c.model.fusion_variant); }});
    f.push_back(Field{{"decoder_upsample", "bilinear or nearest", true},
                      [](RunConfig& c, const std::string& v) { c.model.decoder_upsample = parse_upsample_mode(v); },
                      [](const RunConfig& c) { return to_string(c.model.decoder_upsample); }});
    f.push_back(Field{{"use_decoder", "false replicates patch logits over each patch", true},
                      [](RunConfig& c, const std::string& v) { c.model.use_decoder = parse_bool("use_decoder", v); },
                      [](const RunConfig& c) { return std::string(c.model.use_decoder ? "true" : "false"); }});

    f.push_back(real_field("base_lr", "peak learning rate", &TrainConfig::base_lr));
    f.push_back(real_field("weight_decay", "decoupled weight decay", &TrainConfig::weight_decay));
    f.push_back(real_field("beta1", "Adam first-moment decay", &TrainConfig::beta1));
    f.push_back(real_field("beta2", "Adam second-moment decay", &TrainConfig::beta2));
    f.push_back(real_field("adam_eps", "Adam denominator epsilon", &TrainConfig::adam_eps));
    f.push_back(size_field("warmup_iters", "linear warmup length", &TrainConfig::warmup_iters));
    f.push_back(size_field("total_iters", "iterations of the run", &TrainConfig::total_iters));
    f.push_back(real_field("poly_power", "polynomial decay exponent", &TrainConfig::poly_power));
    f.push_back(size_field("batch_size", "samples per iteration", &TrainConfig::batch_size));
    f.push_back(real_field("tau", "patch label threshold", &TrainConfig::tau));
    f.push_back(real_field("lambda", "patch loss weight", &TrainConfig::lambda));
    f.push_back(Field{{"seed", "initialization and batch order seed", false},
                      [](RunConfig& c, const std::string& v) { c.train.seed = parse_size("seed", v); },
                      [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    f.push_back(size_field("eval_every", "evaluate on the training set every N iterations (0 = never)", &TrainConfig::eval_every));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key.name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

bool is_config_key(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key.name == key) return true;
  }
  return false;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, trim(value));
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

RunConfig parse_run_config(std::istream& in, const std::string& origin) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      set_config_value(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

std::string format_run_config(const RunConfig& cfg, bool with_docs) {
  std::ostringstream os;
  for (const auto& f : fields()) {
    if (with_docs) os << "# " << f.key.doc << '\n';
    os << f.key.name << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

std::string format_model_config(const ModelConfig& model) {
  RunConfig cfg;
  cfg.model = model;
  std::ostringstream os;
  for (const auto& f : fields()) {
    if (f.key.model) os << f.key.name << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

ModelConfig parse_model_config(const std::string& text) {
  std::istringstream in(text);
  RunConfig cfg = parse_run_config(in, "<checkpoint>");
  return cfg.model;
}

void apply_overrides(RunConfig& cfg, const std::map<std::string, std::string>& overrides) {
  for (const auto& [key, value] : overrides) set_config_value(cfg, key, value);
}

}  // namespace restr
