#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vxf {

/// Flat UTF-8 "key=value" text. Blank lines and lines starting with '#' are
/// ignored; whitespace around keys and values is trimmed; duplicate keys are
/// rejected. Entries keep insertion order.
class KeyValueText {
 public:
  static KeyValueText parse(std::string_view text);

  void set(std::string key, std::string value);
  bool has(std::string_view key) const noexcept;
  std::optional<std::string> find(std::string_view key) const;
  /// Throws DataError when missing.
  const std::string& get(std::string_view key) const;

  /// Throws DataError naming the first key not in `allowed`.
  void require_only(std::initializer_list<std::string_view> allowed) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept {
    return entries_;
  }

  std::string serialize() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest text that parses back to the identical double.
std::string format_real(double value);
double parse_real(std::string_view text);
std::int64_t parse_int(std::string_view text);
bool parse_bool(std::string_view text);

std::vector<std::string> split(std::string_view text, char separator);

}  // namespace vxf
