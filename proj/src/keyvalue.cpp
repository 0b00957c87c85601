#include "featclust/keyvalue.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "featclust/error.hpp"

namespace featclust {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw FormatError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (kv.values_.contains(key)) {
      throw FormatError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    kv.values_[std::move(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  return parse(read_text_file(path), path.string());
}

const std::string& KeyValues::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw FormatError(origin_ + ": missing key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long long KeyValues::get_int(const std::string& key) const {
  return parse_int(get(key), origin_ + ": " + key);
}

double KeyValues::get_double(const std::string& key) const {
  return parse_double(get(key), origin_ + ": " + key);
}

long long parse_int(std::string_view text, const std::string& what) {
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw FormatError(what + ": not an integer: '" + std::string(text) + "'");
  }
  return value;
}

double parse_double(std::string_view text, const std::string& what) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty() ||
      !std::isfinite(value)) {
    throw FormatError(what + ": not a finite number: '" + std::string(text) + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace featclust
