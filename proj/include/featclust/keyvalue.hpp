#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace featclust {

/// Ordered `key = value` pairs as used by manifest headers and sidecar files.
/// Lines starting with '#' are comments.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& origin);
  static KeyValues load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

long long parse_int(std::string_view text, const std::string& what);
double parse_double(std::string_view text, const std::string& what);

/// Shortest round-trippable text for a double.
std::string format_double(double v);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace featclust
