// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#include "hierform/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace hierform {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(std::string_view key, std::string_view text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" +
                      std::string(text) + "'");
  }
  return v;
}

double parse_double(std::string_view key, std::string_view text) {
  const std::string s(text);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string(key) + ": expected a finite number, got '" + s + "'");
}

bool parse_bool(std::string_view key, std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  throw ConfigError(std::string(key) + ": expected on/off, got '" + std::string(text) + "'");
}

template <std::size_t N>
std::array<std::size_t, N> parse_list(std::string_view key, std::string_view text) {
  std::array<std::size_t, N> out{};
  std::size_t n = 0;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    const auto item = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                              : comma - start));
    if (n == N) throw ConfigError(std::string(key) + ": expected " + std::to_string(N) + " values");
    out[n++] = parse_size(key, item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (n != N) throw ConfigError(std::string(key) + ": expected " + std::to_string(N) + " values");
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view, std::string_view)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"phone_short_ms", [](RunConfig& c, auto k, auto v) { c.durations.phone_short_ms = parse_double(k, v); }},
      {"phone_long_ms", [](RunConfig& c, auto k, auto v) { c.durations.phone_long_ms = parse_double(k, v); }},
      {"word_short_ms", [](RunConfig& c, auto k, auto v) { c.durations.word_short_ms = parse_double(k, v); }},
      {"word_long_ms", [](RunConfig& c, auto k, auto v) { c.durations.word_long_ms = parse_double(k, v); }},
      {"mismatch", [](RunConfig& c, auto k, auto v) { c.durations.mismatch = parse_double(k, v); }},
      {"hop_ms", [](RunConfig& c, auto k, auto v) { c.hop_ms = parse_double(k, v); }},
      {"layers", [](RunConfig& c, auto k, auto v) { c.layers = parse_list<4>(k, v); }},
      {"windows", [](RunConfig& c, auto k, auto v) { c.windows = parse_list<3>(k, v); }},
      {"merges", [](RunConfig& c, auto k, auto v) { c.merges = parse_list<3>(k, v); }},
      {"word_tokens", [](RunConfig& c, auto k, auto v) { c.word_tokens = parse_size(k, v); }},
      {"d", [](RunConfig& c, auto k, auto v) { c.d = parse_size(k, v); }},
      {"d_ff", [](RunConfig& c, auto k, auto v) { c.d_ff = parse_size(k, v); }},
      {"d_cls", [](RunConfig& c, auto k, auto v) { c.d_cls = parse_size(k, v); }},
      {"heads", [](RunConfig& c, auto k, auto v) { c.heads = parse_size(k, v); }},
      {"classes", [](RunConfig& c, auto k, auto v) { c.classes = parse_size(k, v); }},
      {"unit_encoder", [](RunConfig& c, auto k, auto v) { c.ablations.unit_encoder = parse_bool(k, v); }},
      {"word_encoder", [](RunConfig& c, auto k, auto v) { c.ablations.word_encoder = parse_bool(k, v); }},
      {"merging", [](RunConfig& c, auto k, auto v) { c.ablations.merging = parse_bool(k, v); }},
      {"seed", [](RunConfig& c, auto k, auto v) { c.seed = parse_size(k, v); }},
      {"max_len", [](RunConfig& c, auto k, auto v) { c.max_len = parse_size(k, v); }},
      {"pad_policy",
       [](RunConfig& c, auto k, auto v) {
         if (v == "pad") {
           c.pad_policy = PadPolicy::pad;
         } else if (v == "none") {
           c.pad_policy = PadPolicy::none;
         } else {
           throw ConfigError(std::string(k) + ": expected pad or none");
         }
       }},
      {"epochs", [](RunConfig& c, auto k, auto v) { c.epochs = parse_size(k, v); }},
      {"lr", [](RunConfig& c, auto k, auto v) { c.lr = parse_double(k, v); }},
      {"momentum", [](RunConfig& c, auto k, auto v) { c.momentum = parse_double(k, v); }},
      {"batch_size", [](RunConfig& c, auto k, auto v) { c.batch_size = parse_size(k, v); }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  durations.validate();
  if (!(hop_ms > 0.0)) throw ConfigError("hop_ms must be positive");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  try {
    model_dims(*this, d).validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  train_config(*this).validate();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [name, setter] : setters()) out.push_back(name);
    return out;
  }();
  return keys;
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& [name, setter] : setters()) {
    if (name == key) {
      setter(config, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  apply_setting(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_config_text(RunConfig& config, std::string_view text) {
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      try {
        apply_override(config, line);
      } catch (const ConfigError& e) {
        throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
}

RunConfig load_config(const std::optional<std::filesystem::path>& path,
                      const std::vector<std::string>& overrides, RunConfig base) {
  RunConfig config = std::move(base);
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config " + path->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_config_text(config, ss.str());
  }
  for (const std::string& o : overrides) apply_override(config, o);
  config.validate();
  return config;
}

RunConfig tiny_preset() {
  RunConfig c;
  c.d = 8;
  // A 4-wide ReLU head is dead at init for roughly one seed in sixteen.
  c.d_cls = 16;
  c.heads = 2;
  c.layers = {1, 1, 1, 1};
  c.word_tokens = 2;
  c.max_len = 12;
  c.classes = 2;
  c.epochs = 50;
  c.batch_size = 8;
  return c;
}

PlanOverrides plan_overrides(const RunConfig& config) {
  PlanOverrides o;
  o.windows = config.windows;
  o.merges = config.merges;
  o.word_tokens = config.word_tokens;
  o.layers = config.layers;
  o.d = config.d;
  return o;
}

ModelDims model_dims(const RunConfig& config, std::size_t input_width) {
  ModelDims dims;
  dims.input_width = input_width;
  dims.d = config.d;
  dims.heads = config.heads;
  dims.d_ff = config.d_ff;
  dims.d_cls = config.d_cls;
  dims.classes = config.classes;
  return dims;
}

TrainConfig train_config(const RunConfig& config) {
  TrainConfig t;
  t.epochs = config.epochs;
  t.lr = config.lr;
  t.momentum = config.momentum;
  t.batch_size = config.batch_size;
  t.seed = config.seed;
  return t;
}

}  // namespace hierform
