#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace labpilot {

namespace fs = std::filesystem;

// Sink for non-fatal diagnostics. The run controller wires this to the
// journal; standalone use defaults to stderr.
using WarnSink = std::function<void(const std::string&)>;

WarnSink stderr_warn_sink();

// ---- strings ----------------------------------------------------------

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
// Splits on `sep`, trims each piece, drops empties.
std::vector<std::string> split_list(std::string_view s, char sep = ',');
std::string to_lower(std::string_view s);
std::string join(const std::vector<std::string>& parts, const std::string& sep);
// Last `n` lines of `text` (no trailing-newline artifacts).
std::vector<std::string> tail_lines(std::string_view text, int n);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

// ---- files -------------------------------------------------------------

std::string read_file(const fs::path& p);               // throws InputError
void write_file(const fs::path& p, std::string_view s); // creates parent dirs
// Write via temp file + rename so readers never observe a partial file.
void atomic_write_file(const fs::path& p, std::string_view s);
// Recursive copy; destination is removed first so the copy is idempotent.
void copy_tree(const fs::path& from, const fs::path& to);
// True iff `p` resolves lexically inside `root` (no traversal escape).
bool path_within(const fs::path& root, const fs::path& p);
// Lexically-normalized relative path, or nullopt if outside root.
std::optional<std::string> relative_within(const fs::path& root, const fs::path& p);

// ---- hashing -----------------------------------------------------------

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);
std::uint32_t crc32(std::string_view data);
std::string hex32(std::uint32_t v);
// Content hash of every regular file under `dir`, path-order independent of
// the traversal implementation.
std::string dir_fingerprint(const fs::path& dir);

// ---- time --------------------------------------------------------------

std::string iso_timestamp_now();

// ---- globs -------------------------------------------------------------

// fnmatch-style matching over '/'-separated relative paths. `*` stays within
// one path segment, `**` crosses segments, `?` matches one character.
bool glob_match(std::string_view pattern, std::string_view rel_path);

}  // namespace labpilot
