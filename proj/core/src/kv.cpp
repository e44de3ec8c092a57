#include "segx/kv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "segx/digest.hpp"
#include "segx/error.hpp"

namespace segx {
namespace {

bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '.' || c == '-';
  });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorKind::Config, "key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return value;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  return out;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.emplace_back(trim(text.substr(start, pos == std::string_view::npos ? text.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

KeyValues KeyValues::parse(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::Config, "line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key(trim(line.substr(0, eq)));
    if (!valid_key(key)) fail(ErrorKind::Config, "line " + std::to_string(line_no) + ": invalid key '" + key + "'");
    if (kv.entries_.contains(key)) fail(ErrorKind::Config, "duplicate key '" + key + "'");
    kv.entries_.emplace(std::move(key), std::string(trim(line.substr(eq + 1))));
  }
  return kv;
}

KeyValues KeyValues::read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KeyValues::canonical() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

void KeyValues::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << canonical();
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

void KeyValues::set(const std::string& key, std::string value) {
  if (!valid_key(key)) fail(ErrorKind::Config, "invalid key '" + key + "'");
  if (value.find('\n') != std::string::npos) fail(ErrorKind::Config, "value of '" + key + "' contains a newline");
  entries_[key] = std::move(value);
}

void KeyValues::set(const std::string& key, long long value) { set(key, std::to_string(value)); }
void KeyValues::set(const std::string& key, unsigned long long value) { set(key, std::to_string(value)); }
void KeyValues::set(const std::string& key, double value) { set(key, format_double(value)); }

std::optional<std::string> KeyValues::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) fail(ErrorKind::Config, "missing key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, std::string fallback) const {
  auto v = find(key);
  return v ? *v : std::move(fallback);
}

long long KeyValues::get_int(const std::string& key) const { return parse_number<long long>(key, get(key)); }

long long KeyValues::get_int_or(const std::string& key, long long fallback) const {
  return contains(key) ? get_int(key) : fallback;
}

unsigned long long KeyValues::get_u64(const std::string& key) const {
  return parse_number<unsigned long long>(key, get(key));
}

double KeyValues::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

double KeyValues::get_double_or(const std::string& key, double fallback) const {
  return contains(key) ? get_double(key) : fallback;
}

bool KeyValues::get_bool_or(const std::string& key, bool fallback) const {
  if (!contains(key)) return fallback;
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::Config, "key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> KeyValues::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split(get(key), ',')) out.push_back(parse_number<int>(key, item));
  return out;
}

std::vector<double> KeyValues::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split(get(key), ',')) out.push_back(parse_number<double>(key, item));
  return out;
}

void KeyValues::require_known(const std::vector<std::string>& allowed) const {
  for (const auto& [k, v] : entries_) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      fail(ErrorKind::Config, "unknown key '" + k + "'");
    }
  }
}

KeyValues KeyValues::subset(std::string_view prefix) const {
  KeyValues out;
  for (const auto& [k, v] : entries_) {
    if (k.size() > prefix.size() && k.compare(0, prefix.size(), prefix) == 0) {
      out.entries_.emplace(k.substr(prefix.size()), v);
    }
  }
  return out;
}

std::string KeyValues::digest() const { return short_digest(canonical()); }

}  // namespace segx
