#include "charnmt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <utility>

#include "charnmt/errors.hpp"
#include "charnmt/io.hpp"

namespace charnmt {
namespace {

// Key, default. An empty default means the key has no value unless set.
const std::vector<std::pair<std::string, std::string>>& table() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"train_source", ""},
      {"train_target", ""},
      {"dev_source", ""},
      {"dev_target", ""},
      {"source_vocab", ""},
      {"target_vocab", ""},
      {"source_merges", ""},
      {"target_merges", ""},
      {"target_unit", "char"},
      {"output_dir", ""},
      {"decoder", "biscale"},
      {"attention_query", ""},
      {"embed_dim", "64"},
      {"encoder_dim", "64"},
      {"decoder_dim", "128"},
      {"attention_dim", "0"},
      {"precision", "narrow"},
      {"batch_size", "128"},
      {"clip", "1.0"},
      {"learning_rate", "0.001"},
      {"beta1", "0.9"},
      {"beta2", "0.999"},
      {"epsilon", "1e-8"},
      {"max_steps", "10000"},
      {"valid_interval", "1000"},
      {"valid_sentences", "0"},
      {"seed", "1"},
      {"max_source_len", "50"},
      {"max_target_len", ""},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return "";
  const auto last = s.find_last_not_of(" \t");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

RunConfig::RunConfig() = default;

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, v] : table()) out.push_back(k);
    return out;
  }();
  return keys;
}

std::string RunConfig::default_value(const std::string& key) {
  for (const auto& [k, v] : table()) {
    if (k == key) return v;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

RunConfig RunConfig::parse(std::string_view text, const std::string& origin) {
  RunConfig config;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      config.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return parse(read_file(path), path.string());
}

void RunConfig::apply_overrides(std::span<const std::string> assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + a + "' is not key=value");
    }
    set(trim(std::string_view(a).substr(0, eq)), trim(std::string_view(a).substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  if (it != values_.end()) return !it->second.empty();
  return !default_value(key).empty();
}

std::string RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it != values_.end() && !it->second.empty()) return it->second;
  std::string fallback = default_value(key);
  if (fallback.empty()) throw ConfigError("configuration key '" + key + "' is required");
  return fallback;
}

std::optional<std::string> RunConfig::maybe(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  return get(key);
}

long RunConfig::get_int(const std::string& key) const {
  const std::string v = get(key);
  long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("configuration key '" + key + "' needs an integer, got '" + v + "'");
  }
  return out;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string v = get(key);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError("configuration key '" + key + "' needs a number, got '" + v + "'");
  }
  return out;
}

std::string RunConfig::text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace charnmt
