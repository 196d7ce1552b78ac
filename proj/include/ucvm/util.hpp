#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ucvm {

/// Raw object or file content. Not necessarily text.
using Bytes = std::string;

namespace fs = std::filesystem;

using Timestamp = std::chrono::sys_seconds;

// --- host files --------------------------------------------------------------

Bytes read_file(const fs::path& path);

/// Writes to a sibling temporary and renames over `path`, so readers see
/// either the old or the new content, never a torn write.
void write_file_atomic(const fs::path& path, std::string_view data);

/// Exclusive advisory lock (flock) held for the lifetime of the object.
class FileLock {
 public:
  /// Blocks until the lock is acquired unless `try_only`, in which case a
  /// held lock raises Locked.
  explicit FileLock(const fs::path& path, bool try_only = false);
  ~FileLock();
  FileLock(FileLock&& other) noexcept;
  FileLock& operator=(FileLock&& other) noexcept;
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

// --- absolute slash-separated paths inside a tree ----------------------------

/// True for "/" and for "/a/b" style paths with no empty, "." or ".."
/// components and no trailing slash.
bool is_canonical_path(std::string_view path);

/// Throws InvalidPath unless is_canonical_path(path).
void require_canonical_path(std::string_view path);

std::string parent_path(std::string_view path);
std::string base_name(std::string_view path);
std::string join_path(std::string_view dir, std::string_view name);
std::vector<std::string> path_components(std::string_view path);

/// True if `path` equals `dir` or lies below it.
bool path_is_within(std::string_view path, std::string_view dir);

// --- text --------------------------------------------------------------------

std::string_view trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view text);
std::vector<std::string> split(std::string_view s, char sep);

/// Parses `key=value` lines; blank lines and lines starting with '#' are
/// skipped. Later keys overwrite earlier ones.
std::map<std::string, std::string> parse_key_values(std::string_view text);

std::string to_hex(std::string_view bytes);

std::string format_rfc3339(Timestamp t);
Timestamp parse_rfc3339(std::string_view text);
Timestamp now_seconds();

}  // namespace ucvm
