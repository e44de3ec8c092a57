#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace segx {

/// Ordered key/value text: one `key=value` per line, keys sorted. Blank lines
/// and `#` comments are accepted when parsing and never emitted.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::string_view text);
  static KeyValues read_file(const std::filesystem::path& path);

  /// Canonical serialization; the digest of a KeyValues is taken over this.
  std::string canonical() const;
  void write_file(const std::filesystem::path& path) const;

  void set(const std::string& key, std::string value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, long long value);
  void set(const std::string& key, unsigned long long value);
  void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
  void set(const std::string& key, double value);

  bool contains(const std::string& key) const { return entries_.contains(key); }
  std::optional<std::string> find(const std::string& key) const;
  const std::string& get(const std::string& key) const;

  std::string get_or(const std::string& key, std::string fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  unsigned long long get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// Throws Config naming the first key that is not in `allowed`.
  void require_known(const std::vector<std::string>& allowed) const;

  /// Entries whose key starts with prefix, with the prefix removed.
  KeyValues subset(std::string_view prefix) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string digest() const;

  friend bool operator==(const KeyValues&, const KeyValues&) = default;

 private:
  std::map<std::string, std::string> entries_;
};

std::string format_double(double v);
std::string join_ints(const std::vector<int>& values);
std::string join_doubles(const std::vector<double>& values);
std::vector<std::string> split(std::string_view text, char sep);

}  // namespace segx
