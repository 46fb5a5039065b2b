#include "labpilot/util.hpp"

#include "labpilot/errors.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace labpilot {

WarnSink stderr_warn_sink() {
  return [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
}

// ---- strings ----------------------------------------------------------

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  for (const auto& piece : split(s, sep)) {
    std::string t = trim(piece);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> tail_lines(std::string_view text, int n) {
  if (n <= 0 || text.empty()) return {};
  std::vector<std::string> lines;
  size_t start = 0;
  for (size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '\n') {
      lines.emplace_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  // A trailing newline produces one empty phantom line; drop it.
  if (!lines.empty() && lines.back().empty() && !text.empty() && text.back() == '\n')
    lines.pop_back();
  if (static_cast<int>(lines.size()) > n)
    lines.erase(lines.begin(), lines.end() - n);
  return lines;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  if (from.empty()) return s;
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

// ---- files -------------------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write file: " + p.string());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  out.flush();
  if (!out) throw InputError("short write: " + p.string());
}

void atomic_write_file(const fs::path& p, std::string_view s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  write_file(tmp, s);
  fs::rename(tmp, p);
}

void copy_tree(const fs::path& from, const fs::path& to) {
  if (!fs::exists(from)) throw InputError("copy_tree: source missing: " + from.string());
  std::error_code ec;
  fs::remove_all(to, ec);
  fs::create_directories(to.parent_path().empty() ? to : to.parent_path());
  fs::copy(from, to, fs::copy_options::recursive);
}

bool path_within(const fs::path& root, const fs::path& p) {
  fs::path r = fs::absolute(root).lexically_normal();
  fs::path q = fs::absolute(p).lexically_normal();
  auto rit = r.begin();
  auto qit = q.begin();
  for (; rit != r.end(); ++rit, ++qit) {
    if (rit->empty()) continue;  // trailing slash artifact
    if (qit == q.end() || *rit != *qit) return false;
  }
  return true;
}

std::optional<std::string> relative_within(const fs::path& root, const fs::path& p) {
  if (!path_within(root, p)) return std::nullopt;
  fs::path r = fs::absolute(root).lexically_normal();
  fs::path q = fs::absolute(p).lexically_normal();
  return q.lexically_relative(r).generic_string();
}

// ---- hashing -----------------------------------------------------------

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {
std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}
}  // namespace

std::uint32_t crc32(std::string_view data) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (unsigned char b : data) c = table[(c ^ b) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

std::string dir_fingerprint(const fs::path& dir) {
  std::map<std::string, std::uint64_t> hashes;  // sorted by relative path
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string rel = e.path().lexically_relative(dir).generic_string();
    hashes[rel] = fnv1a64(read_file(e.path()));
  }
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [rel, fh] : hashes) {
    h = fnv1a64(hex64(h) + rel + hex64(fh));
  }
  return hex64(h);
}

// ---- time --------------------------------------------------------------

std::string iso_timestamp_now() {
  using namespace std::chrono;
  auto now = system_clock::now();
  std::time_t t = system_clock::to_time_t(now);
  auto ms = duration_cast<milliseconds>(now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(ms.count()));
  return buf;
}

// ---- globs -------------------------------------------------------------

namespace {
bool glob_match_impl(std::string_view pat, std::string_view str) {
  // Iterative wildcard match with backtracking; '**' may cross '/'.
  size_t p = 0, s = 0;
  size_t star_p = std::string_view::npos, star_s = 0;
  bool star_cross = false;
  while (s < str.size()) {
    if (p < pat.size() && pat[p] == '*') {
      bool cross = (p + 1 < pat.size() && pat[p + 1] == '*');
      star_p = p;
      star_cross = cross;
      p += cross ? 2 : 1;
      star_s = s;
      continue;
    }
    if (p < pat.size() && (pat[p] == '?' ? str[s] != '/' : pat[p] == str[s])) {
      ++p;
      ++s;
      continue;
    }
    if (star_p != std::string_view::npos) {
      if (!star_cross && str[star_s] == '/') return false;
      ++star_s;
      s = star_s;
      p = star_p + (star_cross ? 2 : 1);
      continue;
    }
    return false;
  }
  while (p < pat.size() && pat[p] == '*') ++p;
  return p == pat.size();
}
}  // namespace

bool glob_match(std::string_view pattern, std::string_view rel_path) {
  return glob_match_impl(pattern, rel_path);
}

}  // namespace labpilot
