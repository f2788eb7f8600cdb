#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace charnmt {

// Flat `key = value` settings with `#` comments. Only known keys are
// accepted; later assignments (command-line overrides) win.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(std::string_view text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);

  // Applies `key=value` overrides.
  void apply_overrides(std::span<const std::string> assignments);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;
  std::optional<std::string> maybe(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  static const std::vector<std::string>& known_keys();
  static std::string default_value(const std::string& key);

  // Canonical text: every explicitly set key in sorted order.
  std::string text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  bool operator==(const RunConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace charnmt
