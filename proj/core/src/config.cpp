#include "xvf/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace xvf {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string source) {
  KeyValueConfig config;
  config.source_ = std::move(source);
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail<ConfigError>(config.source_, ":", line_no, ": expected 'key = value', got '", line, "'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) fail<ConfigError>(config.source_, ":", line_no, ": empty key");
    config.entries_[std::string(key)] = Entry{std::string(value), line_no};
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in.good()) fail<ConfigError>("cannot open config file '", path.string(), "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

void KeyValueConfig::set(const std::string& key, std::string value) {
  entries_[key] = Entry{std::move(value), 0};
}

std::vector<std::string> KeyValueConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

void KeyValueConfig::fail_at(const std::string& key, const std::string& message) const {
  const auto it = entries_.find(key);
  if (it != entries_.end() && it->second.line > 0) {
    fail<ConfigError>(source_, ":", it->second.line, ": ", message);
  }
  fail<ConfigError>(source_, ": ", message);
}

std::string KeyValueConfig::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) fail<ConfigError>(source_, ": missing required key '", key, "'");
  return it->second.value;
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.value;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!contains(key)) return fallback;
  const std::string v = get(key);
  double out = 0.0;
  if (!parse_number(std::string_view(v), out)) fail_at(key, "'" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  if (!contains(key)) return fallback;
  const std::string v = get(key);
  std::size_t out = 0;
  if (!parse_number(std::string_view(v), out)) {
    fail_at(key, "'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!contains(key)) return fallback;
  const std::string v = get(key);
  std::uint64_t out = 0;
  if (!parse_number(std::string_view(v), out)) {
    fail_at(key, "'" + key + "' expects an unsigned 64-bit integer, got '" + v + "'");
  }
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!contains(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail_at(key, "'" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::size_t> KeyValueConfig::get_sizes(const std::string& key,
                                                   std::vector<std::size_t> fallback) const {
  if (!contains(key)) return fallback;
  const std::string v = get(key);
  std::vector<std::size_t> out;
  std::string_view rest(v);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = trim(rest.substr(0, comma));
    std::size_t n = 0;
    if (!parse_number(item, n)) fail_at(key, "'" + key + "' expects a comma-separated integer list, got '" + v + "'");
    out.push_back(n);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

void KeyValueConfig::require_known(std::span<const std::string_view> known) const {
  for (const auto& [key, entry] : entries_) {
    bool ok = false;
    for (auto k : known) {
      if (k == key || (k.ends_with(".*") && key.starts_with(k.substr(0, k.size() - 1)))) {
        ok = true;
        break;
      }
    }
    if (!ok) fail_at(key, "unknown key '" + key + "'");
  }
}

std::string KeyValueConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, e] : entries_) os << k << " = " << e.value << '\n';
  return os.str();
}

}  // namespace xvf
