#include "dcd/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace dcd {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(std::string_view k) {
  if (k.empty() || k.front() == '.' || k.back() == '.') return false;
  return std::all_of(k.begin(), k.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.';
  });
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Values that would not survive a re-parse verbatim get quoted.
std::string quote_if_needed(const std::string& v) {
  const bool padded = !v.empty() && (std::isspace(static_cast<unsigned char>(v.front())) ||
                                     std::isspace(static_cast<unsigned char>(v.back())));
  const bool quoted = v.size() >= 2 && v.front() == '"' && v.back() == '"';
  if (v.find('#') != std::string::npos || padded || quoted) return '"' + v + '"';
  return v;
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& source) {
  Config c;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    auto fail = [&](const std::string& what) {
      return ConfigError(source + ":" + std::to_string(line_no) + ": " + what);
    };

    bool quoted = false;
    std::size_t cut = line.size();
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        cut = i;
        break;
      }
    }
    line = trim(line.substr(0, cut));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw fail("unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!section.empty() && !valid_key(section)) throw fail("invalid section name '" + section + "'");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw fail("expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    std::string_view value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw fail("invalid key '" + std::string(key) + "'");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (c.has(full)) throw fail("duplicate key '" + full + "'");
    c.values_[full] = std::string(value);
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void Config::set(const std::string& key, std::string value) {
  if (!valid_key(key)) throw ConfigError("invalid key '" + key + "'");
  if (value.find_first_of("\r\n") != std::string::npos) throw ConfigError(key + ": value spans lines");
  values_[key] = std::move(value);
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  double v = 0;
  const auto& s = it->second;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> Config::unknown_keys(const std::vector<std::string>& known) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
  return out;
}

std::string Config::serialize() const {
  // Top-level keys first, then one section per leading key component.
  std::ostringstream out;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) {
      out << k << " = " << quote_if_needed(v) << '\n';
    } else {
      sections[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
    }
  }
  for (const auto& [name, entries] : sections) {
    out << "\n[" << name << "]\n";
    for (const auto& [k, v] : entries) out << k << " = " << quote_if_needed(v) << '\n';
  }
  return out.str();
}

// ---- typed views ----------------------------------------------------------

namespace {

DeskKind parse_desk_kind(const std::string& s) {
  if (s == "static") return DeskKind::Static;
  if (s == "dcd") return DeskKind::Dcd;
  if (s == "vanilla") return DeskKind::Vanilla;
  throw ConfigError("unknown desk model kind '" + s + "' (expected static, dcd, vanilla)");
}

const char* desk_kind_name(DeskKind k) {
  switch (k) {
    case DeskKind::Static: return "static";
    case DeskKind::Dcd: return "dcd";
    case DeskKind::Vanilla: return "vanilla";
  }
  return "?";
}

const std::vector<std::string> kModelKeys{
    "arch",           "width",          "depth",           "placement",         "resnet_dcd",
    "num_classes",    "resolution",     "dcd.reduction",   "dcd.cls_reduction", "dcd.latent_multiplier",
    "dcd.blocks",     "dcd.lambda",     "dcd.phi",         "desk.kind",         "desk.width",
    "desk.kernel",    "vanilla.kernels", "vanilla.temperature", "vanilla.mode",  "vanilla.reduction",
    "vanilla.fc_layers"};

const std::vector<std::string> kRunKeys{
    "seed",           "out_dir",        "train.epochs",          "train.batch_size", "train.lr",
    "train.momentum", "train.weight_decay", "train.schedule",    "train.step_epochs", "train.threads",
    "task.kind",      "task.train_size", "task.test_size",       "task.channels",    "task.resolution",
    "task.contexts",  "task.context_amplitude", "task.low_scale", "task.high_scale", "task.image_dir"};

}  // namespace

ModelSpec model_spec_from(const Config& c, const std::string& prefix) {
  auto key = [&](const char* k) { return prefix + "." + k; };
  ModelSpec m;
  m.arch = c.get(key("arch"), m.arch);
  m.width = c.get_double(key("width"), m.width);
  m.depth = c.get_uint(key("depth"), m.depth);
  m.placement = parse_placement(c.get(key("placement"), "none"));
  m.resnet_dcd = parse_resnet_dcd(c.get(key("resnet_dcd"), "off"));
  m.num_classes = c.get_uint(key("num_classes"), 0);
  m.resolution = c.get_uint(key("resolution"), 0);
  m.knobs.reduction = c.get_uint(key("dcd.reduction"), 0);
  m.knobs.cls_reduction = c.get_uint(key("dcd.cls_reduction"), m.knobs.cls_reduction);
  m.knobs.latent_multiplier = c.get_double(key("dcd.latent_multiplier"), 1.0);
  m.knobs.blocks = c.get_uint(key("dcd.blocks"), 1);
  m.knobs.use_lambda = c.get_bool(key("dcd.lambda"), true);
  m.knobs.use_phi = c.get_bool(key("dcd.phi"), true);
  m.desk.kind = parse_desk_kind(c.get(key("desk.kind"), "static"));
  m.desk.width = c.get_uint(key("desk.width"), m.desk.width);
  m.desk.kernel = c.get_uint(key("desk.kernel"), m.desk.kernel);
  m.desk.vanilla.kernels = c.get_uint(key("vanilla.kernels"), m.desk.vanilla.kernels);
  m.desk.vanilla.temperature = c.get_double(key("vanilla.temperature"), m.desk.vanilla.temperature);
  m.desk.vanilla.mode = parse_attention_mode(c.get(key("vanilla.mode"), "softmax"));
  m.desk.vanilla.reduction = c.get_uint(key("vanilla.reduction"), m.desk.vanilla.reduction);
  m.desk.vanilla.fc_layers = c.get_uint(key("vanilla.fc_layers"), m.desk.vanilla.fc_layers);
  return m;
}

void write_model_spec(Config& c, const ModelSpec& m, const std::string& prefix) {
  auto put = [&](const char* k, std::string v) { c.set(prefix + "." + k, std::move(v)); };
  put("arch", m.arch);
  put("width", format_double(m.width));
  put("depth", std::to_string(m.depth));
  put("placement", to_string(m.placement));
  put("resnet_dcd", std::string(to_string(m.resnet_dcd)));
  put("num_classes", std::to_string(m.num_classes));
  put("resolution", std::to_string(m.resolution));
  put("dcd.reduction", std::to_string(m.knobs.reduction));
  put("dcd.cls_reduction", std::to_string(m.knobs.cls_reduction));
  put("dcd.latent_multiplier", format_double(m.knobs.latent_multiplier));
  put("dcd.blocks", std::to_string(m.knobs.blocks));
  put("dcd.lambda", m.knobs.use_lambda ? "true" : "false");
  put("dcd.phi", m.knobs.use_phi ? "true" : "false");
  put("desk.kind", desk_kind_name(m.desk.kind));
  put("desk.width", std::to_string(m.desk.width));
  put("desk.kernel", std::to_string(m.desk.kernel));
  put("vanilla.kernels", std::to_string(m.desk.vanilla.kernels));
  put("vanilla.temperature", format_double(m.desk.vanilla.temperature));
  put("vanilla.mode", std::string(to_string(m.desk.vanilla.mode)));
  put("vanilla.reduction", std::to_string(m.desk.vanilla.reduction));
  put("vanilla.fc_layers", std::to_string(m.desk.vanilla.fc_layers));
}

RunConfig run_config_from(const Config& c) {
  std::vector<std::string> known = kRunKeys;
  for (const auto& k : kModelKeys) known.push_back("model." + k);
  const auto unknown = c.unknown_keys(known);
  if (!unknown.empty()) throw ConfigError("unknown config key '" + unknown.front() + "'");

  RunConfig r;
  r.model = model_spec_from(c);
  r.seed = c.get_uint("seed", r.seed);
  r.out_dir = c.get("out_dir", r.out_dir);
  r.epochs = c.get_uint("train.epochs", r.epochs);
  r.batch_size = c.get_uint("train.batch_size", r.batch_size);
  r.threads = c.get_uint("train.threads", r.threads);
  r.optim.lr = c.get_double("train.lr", r.optim.lr);
  r.optim.momentum = c.get_double("train.momentum", r.optim.momentum);
  r.optim.weight_decay = c.get_double("train.weight_decay", r.optim.weight_decay);
  r.optim.schedule = c.get("train.schedule", r.optim.schedule);
  r.optim.step_epochs = c.get_uint("train.step_epochs", r.optim.step_epochs);
  r.task.kind = c.get("task.kind", r.task.kind);
  r.task.train_size = c.get_uint("task.train_size", r.task.train_size);
  r.task.test_size = c.get_uint("task.test_size", r.task.test_size);
  r.task.channels = c.get_uint("task.channels", r.task.channels);
  r.task.resolution = c.get_uint("task.resolution", r.task.resolution);
  r.task.contexts = c.get_uint("task.contexts", r.task.contexts);
  r.task.context_amplitude = c.get_double("task.context_amplitude", r.task.context_amplitude);
  r.task.low_scale = c.get_double("task.low_scale", r.task.low_scale);
  r.task.high_scale = c.get_double("task.high_scale", r.task.high_scale);
  r.task.image_dir = c.get("task.image_dir", r.task.image_dir);

  if (r.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (r.threads == 0) throw ConfigError("train.threads must be >= 1");
  if (r.optim.schedule != "cosine" && r.optim.schedule != "step" && r.optim.schedule != "constant") {
    throw ConfigError("train.schedule must be cosine, step or constant");
  }
  if (r.optim.schedule == "step" && r.optim.step_epochs == 0) throw ConfigError("train.step_epochs must be >= 1");
  return r;
}

Config to_config(const RunConfig& r) {
  Config c;
  write_model_spec(c, r.model);
  c.set("seed", std::to_string(r.seed));
  c.set("out_dir", r.out_dir);
  c.set("train.epochs", std::to_string(r.epochs));
  c.set("train.batch_size", std::to_string(r.batch_size));
  c.set("train.threads", std::to_string(r.threads));
  c.set("train.lr", format_double(r.optim.lr));
  c.set("train.momentum", format_double(r.optim.momentum));
  c.set("train.weight_decay", format_double(r.optim.weight_decay));
  c.set("train.schedule", r.optim.schedule);
  c.set("train.step_epochs", std::to_string(r.optim.step_epochs));
  c.set("task.kind", r.task.kind);
  c.set("task.train_size", std::to_string(r.task.train_size));
  c.set("task.test_size", std::to_string(r.task.test_size));
  c.set("task.channels", std::to_string(r.task.channels));
  c.set("task.resolution", std::to_string(r.task.resolution));
  c.set("task.contexts", std::to_string(r.task.contexts));
  c.set("task.context_amplitude", format_double(r.task.context_amplitude));
  c.set("task.low_scale", format_double(r.task.low_scale));
  c.set("task.high_scale", format_double(r.task.high_scale));
  if (!r.task.image_dir.empty()) c.set("task.image_dir", r.task.image_dir);
  return c;
}

}  // namespace dcd
