#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ucvm/object_store.hpp"

namespace ucvm {

enum class EntryKind { File, Dir, Symlink };

std::string_view to_string(EntryKind kind);

struct Dirent {
  std::string name;
  EntryKind kind = EntryKind::File;
  std::uint16_t mode = 0644;
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::uint64_t size = 0;
  std::optional<ObjectId> content;  // File only
  std::string target;               // Symlink only

  static Dirent directory(std::uint16_t mode = 0755, std::uint32_t uid = 0,
                          std::uint32_t gid = 0);
  static Dirent file(const ObjectId& content, std::uint64_t size,
                     std::uint16_t mode = 0644, std::uint32_t uid = 0,
                     std::uint32_t gid = 0);
  static Dirent symlink(std::string target, std::uint32_t uid = 0,
                        std::uint32_t gid = 0);

  bool operator==(const Dirent&) const = default;
};

/// Kind plus content (files) or target (symlinks). Mode and ownership are
/// ignored; this is the notion of "changed" used when comparing snapshots.
bool same_content(const Dirent& a, const Dirent& b);

/// The directory tree of one snapshot, keyed by absolute path and ordered
/// bytewise. Always holds "/" as a directory.
class Catalog {
 public:
  Catalog();

  /// Adds or replaces the entry at `path`. The entry's name is taken from the
  /// path. Per-entry invariants are checked here (InvariantError); parent
  /// presence is only checked by validate(), so insertion order is free.
  void insert(std::string_view path, Dirent entry);
  bool erase(std::string_view path);

  const Dirent* find(std::string_view path) const;
  bool contains(std::string_view path) const { return find(path) != nullptr; }

  /// Names of the direct children of `dir`, sorted.
  std::vector<std::string> children(std::string_view dir) const;

  /// Throws InvariantError when a non-root entry lacks a Dir parent.
  void validate() const;

  const std::map<std::string, Dirent, std::less<>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  bool operator==(const Catalog&) const = default;

 private:
  std::map<std::string, Dirent, std::less<>> entries_;
};

/// Canonical text form: a header line, then one tab-separated record per
/// entry in path order. Equal catalogs always encode to identical bytes.
Bytes encode_catalog(const Catalog& catalog);

/// DecodeError for malformed bytes; InvariantError when the decoded tree
/// breaks the parent rule.
Catalog decode_catalog(std::string_view bytes);

/// Paths holding per-boot runtime state; tree digests skip them.
inline constexpr std::string_view kRuntimeFiles[] = {"/.cvmfs_pids"};
bool is_runtime_file(std::string_view path);

/// Order-sensitive SHA-256 over (path, kind, mode, uid, gid, size, content
/// digest, target) records. Feed paths in bytewise order.
class TreeDigest {
 public:
  void add(std::string_view path, EntryKind kind, std::uint16_t mode,
           std::uint32_t uid, std::uint32_t gid, std::uint64_t size,
           std::string_view content_hex, std::string_view target);
  std::string finish() const;

 private:
  std::string records_;
};

/// Digest of the tree a catalog describes, comparable with a digest taken
/// by walking a mounted view of the same snapshot.
std::string catalog_tree_digest(const Catalog& catalog);

}  // namespace ucvm
