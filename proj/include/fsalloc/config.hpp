#pragma once

// Sectioned key-value text:
//
//   # comment
//   [section]
//   key = value
//
// Section names may repeat; each occurrence is a separate block.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fsalloc {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

class ConfigSection {
 public:
  ConfigSection(std::string name, std::size_t line) : name_(std::move(name)), line_(line) {}

  const std::string& name() const { return name_; }
  std::size_t line() const { return line_; }
  const std::vector<ConfigEntry>& entries() const { return entries_; }
  void add(ConfigEntry e);

  bool has(std::string_view key) const;
  const ConfigEntry* find(std::string_view key) const;
  std::string text(std::string_view key) const;  // required
  std::string text(std::string_view key, std::string_view fallback) const;
  double number(std::string_view key) const;
  double number(std::string_view key, double fallback) const;
  std::size_t count(std::string_view key) const;
  std::size_t count(std::string_view key, std::size_t fallback) const;
  std::uint64_t seed(std::string_view key, std::uint64_t fallback) const;
  bool flag(std::string_view key, bool fallback) const;
  std::vector<double> numbers(std::string_view key) const;  // comma/space separated

  /// Throws on any key outside `allowed`.
  void restrict_keys(std::initializer_list<std::string_view> allowed) const;

  [[noreturn]] void fail(const ConfigEntry& e, const std::string& msg) const;
  [[noreturn]] void fail(const std::string& msg) const;

 private:
  std::string name_;
  std::size_t line_;
  std::vector<ConfigEntry> entries_;
};

class ConfigDocument {
 public:
  /// Throws ValidationError naming the offending line.
  static ConfigDocument parse(std::string_view text);

  const std::vector<ConfigSection>& sections() const { return sections_; }
  const ConfigSection* first(std::string_view name) const;
  std::vector<const ConfigSection*> all(std::string_view name) const;
  /// Throws on section names outside `allowed`.
  void restrict_sections(std::initializer_list<std::string_view> allowed) const;

 private:
  std::vector<ConfigSection> sections_;
};

/// FNV-1a 64-bit, used for provenance headers.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace fsalloc
