#include "rsam/run_config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace rsam {

std::string format_real(double value) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(text) + "'");
}

AttentionMode parse_attention(std::string_view text) {
  if (text == "downsample") return AttentionMode::downsample;
  if (text == "fc" || text == "fully_connected") return AttentionMode::fully_connected;
  throw ConfigError("config key 'attention': expected downsample or fc, got '" + std::string(text) + "'");
}

struct Field {
  std::string_view key;
  std::function<std::string(const RunConfig&)> render;
  std::function<void(RunConfig&, std::string_view)> parse;
};

template <typename T>
Field integer(std::string_view key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [key, member](RunConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v); }};
}

template <typename T>
Field model_integer(std::string_view key, T RsamConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.model.*member); },
          [key, member](RunConfig& c, std::string_view v) { c.model.*member = parse_number<T>(key, v); }};
}

Field real(std::string_view key, double RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return format_real(c.*member); },
          [key, member](RunConfig& c, std::string_view v) { c.*member = parse_number<double>(key, v); }};
}

Field model_real(std::string_view key, double RsamConfig::*member) {
  return {key, [member](const RunConfig& c) { return format_real(c.model.*member); },
          [key, member](RunConfig& c, std::string_view v) { c.model.*member = parse_number<double>(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      model_integer("glimpses", &RsamConfig::n_glimpses),
      model_integer("channels", &RsamConfig::channels),
      model_integer("height", &RsamConfig::height),
      model_integer("width", &RsamConfig::width),
      model_integer("classes", &RsamConfig::n_classes),
      model_integer("hidden", &RsamConfig::hidden_size),
      model_integer("glimpse_features", &RsamConfig::glimpse_features),
      {"feedback", [](const RunConfig& c) { return std::string(c.model.feedback_enabled ? "true" : "false"); },
       [](RunConfig& c, std::string_view v) { c.model.feedback_enabled = parse_bool("feedback", v); }},
      {"attention", [](const RunConfig& c) { return std::string(to_string(c.model.attention_mode)); },
       [](RunConfig& c, std::string_view v) { c.model.attention_mode = parse_attention(v); }},
      model_integer("downsample_channels", &RsamConfig::downsample_channels),
      model_real("bn_eps", &RsamConfig::bn_eps),
      model_real("bn_momentum", &RsamConfig::bn_momentum),
      integer("epochs", &RunConfig::epochs),
      integer("batch_size", &RunConfig::batch_size),
      integer("seed", &RunConfig::seed),
      {"data", [](const RunConfig& c) { return c.data; },
       [](RunConfig& c, std::string_view v) { c.data = std::string(v); }},
      integer("synthetic_train", &RunConfig::synthetic_train),
      integer("synthetic_test", &RunConfig::synthetic_test),
      integer("train_limit", &RunConfig::train_limit),
      integer("test_limit", &RunConfig::test_limit),
      {"out", [](const RunConfig& c) { return c.out; }, [](RunConfig& c, std::string_view v) { c.out = std::string(v); }},
      integer("checkpoint_every", &RunConfig::checkpoint_every),
      real("lr", &RunConfig::lr),
      real("lr_decay", &RunConfig::lr_decay),
      real("momentum", &RunConfig::momentum),
      real("weight_decay", &RunConfig::weight_decay),
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (epochs < 0) throw ConfigError("invalid config: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("invalid config: batch_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("invalid config: checkpoint_every must be >= 0");
  if (data.empty()) throw ConfigError("invalid config: data must be a directory or 'synthetic'");
  if (out.empty()) throw ConfigError("invalid config: out must not be empty");
  if (!(lr > 0.0)) throw ConfigError("invalid config: lr must be positive");
  if (!(lr_decay > 0.0)) throw ConfigError("invalid config: lr_decay must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("invalid config: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("invalid config: weight_decay must be >= 0");
  if (synthetic()) {
    if (model.channels != 3 || model.height != model.width || model.height < 8) {
      throw ConfigError("invalid config: synthetic data needs 3 channels and square images of side >= 8");
    }
    if (model.n_classes > 4) throw ConfigError("invalid config: synthetic data supports at most 4 classes");
    if (synthetic_train < 1 || synthetic_test < 1) throw ConfigError("invalid config: synthetic sizes must be >= 1");
  } else if (model.channels != 3 || model.height != 32 || model.width != 32 || model.n_classes != 10) {
    throw ConfigError("invalid config: CIFAR-10 data needs 3x32x32 images and 10 classes");
  }
}

std::string render_config(const RunConfig& config) {
  std::ostringstream os;
  os << "# rsam run configuration\n";
  for (const auto& f : fields()) os << f.key << " = " << f.render(config) << '\n';
  return os.str();
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [key](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    }
    it->parse(config, value);
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file " + path.string());
  out << render_config(config);
}

}  // namespace rsam
