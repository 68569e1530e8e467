#include "fsalloc/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "fsalloc/error.hpp"

namespace fsalloc {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

void ConfigSection::add(ConfigEntry e) {
  if (find(e.key)) {
    throw ValidationError("line " + std::to_string(e.line) + ": duplicate key '" + e.key +
                          "' in [" + name_ + "]");
  }
  entries_.push_back(std::move(e));
}

bool ConfigSection::has(std::string_view key) const { return find(key) != nullptr; }

const ConfigEntry* ConfigSection::find(std::string_view key) const {
  for (const auto& e : entries_) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

void ConfigSection::fail(const ConfigEntry& e, const std::string& msg) const {
  throw ValidationError("line " + std::to_string(e.line) + ", [" + name_ + "] " + e.key + ": " + msg);
}

void ConfigSection::fail(const std::string& msg) const {
  throw ValidationError("line " + std::to_string(line_) + ", [" + name_ + "]: " + msg);
}

std::string ConfigSection::text(std::string_view key) const {
  const ConfigEntry* e = find(key);
  if (!e) fail("missing required key '" + std::string(key) + "'");
  return e->value;
}

std::string ConfigSection::text(std::string_view key, std::string_view fallback) const {
  const ConfigEntry* e = find(key);
  return e ? e->value : std::string(fallback);
}

double ConfigSection::number(std::string_view key) const {
  const ConfigEntry* e = find(key);
  if (!e) fail("missing required key '" + std::string(key) + "'");
  double v = 0.0;
  if (!parse_double(e->value, v)) fail(*e, "expected a number, got '" + e->value + "'");
  return v;
}

double ConfigSection::number(std::string_view key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

std::size_t ConfigSection::count(std::string_view key) const {
  const double v = number(key);
  if (v < 0.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    fail(*find(key), "expected a nonnegative integer");
  }
  return static_cast<std::size_t>(v);
}

std::size_t ConfigSection::count(std::string_view key, std::size_t fallback) const {
  return has(key) ? count(key) : fallback;
}

std::uint64_t ConfigSection::seed(std::string_view key, std::uint64_t fallback) const {
  const ConfigEntry* e = find(key);
  if (!e) return fallback;
  std::uint64_t v = 0;
  const std::string_view s = trim(e->value);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) fail(*e, "expected an unsigned integer seed");
  return v;
}

bool ConfigSection::flag(std::string_view key, bool fallback) const {
  const ConfigEntry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "yes" || e->value == "1") return true;
  if (e->value == "false" || e->value == "no" || e->value == "0") return false;
  fail(*e, "expected true or false");
}

std::vector<double> ConfigSection::numbers(std::string_view key) const {
  const ConfigEntry* e = find(key);
  if (!e) fail("missing required key '" + std::string(key) + "'");
  std::vector<double> out;
  std::string_view rest = e->value;
  while (!rest.empty()) {
    const std::size_t cut = rest.find_first_of(", \t");
    const std::string_view tok = rest.substr(0, cut);
    rest = cut == std::string_view::npos ? std::string_view{} : rest.substr(cut + 1);
    if (trim(tok).empty()) continue;
    double v = 0.0;
    if (!parse_double(tok, v)) fail(*e, "bad number '" + std::string(tok) + "'");
    out.push_back(v);
  }
  return out;
}

void ConfigSection::restrict_keys(std::initializer_list<std::string_view> allowed) const {
  for (const auto& e : entries_) {
    if (std::find(allowed.begin(), allowed.end(), e.key) == allowed.end()) {
      fail(e, "unknown key");
    }
  }
}

ConfigDocument ConfigDocument::parse(std::string_view text) {
  ConfigDocument doc;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    // Comments start with '#' at the beginning or after whitespace.
    for (std::size_t p = 0; p < line.size(); ++p) {
      if (line[p] == '#' && (p == 0 || std::isspace(static_cast<unsigned char>(line[p - 1])))) {
        line = line.substr(0, p);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where + "unterminated section header");
      const std::string_view name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) throw ValidationError(where + "empty section name");
      doc.sections_.emplace_back(std::string(name), line_no);
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ValidationError(where + "expected `key = value`");
    if (doc.sections_.empty()) throw ValidationError(where + "key outside of any [section]");
    const std::string_view key = trim(line.substr(0, eq));
    if (key.empty()) throw ValidationError(where + "empty key");
    doc.sections_.back().add({std::string(key), std::string(trim(line.substr(eq + 1))), line_no});
  }
  return doc;
}

const ConfigSection* ConfigDocument::first(std::string_view name) const {
  for (const auto& s : sections_) {
    if (s.name() == name) return &s;
  }
  return nullptr;
}

std::vector<const ConfigSection*> ConfigDocument::all(std::string_view name) const {
  std::vector<const ConfigSection*> out;
  for (const auto& s : sections_) {
    if (s.name() == name) out.push_back(&s);
  }
  return out;
}

void ConfigDocument::restrict_sections(std::initializer_list<std::string_view> allowed) const {
  for (const auto& s : sections_) {
    if (std::find(allowed.begin(), allowed.end(), s.name()) == allowed.end()) {
      s.fail("unknown section");
    }
  }
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace fsalloc
