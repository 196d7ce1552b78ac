#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ucvm/catalog.hpp"
#include "ucvm/object_store.hpp"
#include "ucvm/util.hpp"

namespace ucvm {

/// Root pointer of one published snapshot.
struct Manifest {
  std::string repo_name;
  std::uint64_t revision = 0;
  std::string snapshot_name;
  ObjectId root_catalog;
  Timestamp published_at{};
  std::optional<std::uint64_t> parent_revision;

  bool operator==(const Manifest&) const = default;
};

/// key=value lines in a fixed key order.
Bytes encode_manifest(const Manifest& m);
Manifest decode_manifest(std::string_view bytes);

/// Mutable names over the immutable revision history.
struct TagDatabase {
  std::map<std::string, std::uint64_t> tags;
  std::map<std::string, std::uint64_t> snapshots;

  bool operator==(const TagDatabase&) const = default;
};

/// Lines `tag <name> <revision>` and `snapshot <name> <revision>`.
Bytes encode_tags(const TagDatabase& db);
TagDatabase decode_tags(std::string_view bytes);

/// Tag and snapshot names: non-empty, no whitespace, not starting with '@'
/// (reserved for revision selectors) and not the keyword "newest".
bool is_valid_label(std::string_view name);

/// On-disk repository:
///
///   <root>/data/xx/<62 hex>     compressed objects
///   <root>/manifests/<revision> manifest files
///   <root>/tags                 tag database
///   <root>/.lock                publisher lock
///
/// Manifests are written once and never rewritten; tags are replaced
/// atomically, so readers may run alongside a publisher.
class Repository {
 public:
  /// Creates the layout if missing.
  static Repository create(fs::path root);
  /// NotFound unless `root` already holds a repository layout.
  static Repository open(fs::path root);

  ObjectStore& store() { return store_; }
  const ObjectStore& store() const { return store_; }
  const fs::path& root() const { return root_; }

  /// Repository name from the newest manifest, else the directory name.
  std::string name() const;

  std::vector<std::uint64_t> revisions() const;
  std::optional<std::uint64_t> latest_revision() const;
  bool has_revision(std::uint64_t revision) const;

  Manifest manifest(std::uint64_t revision) const;
  Bytes manifest_bytes(std::uint64_t revision) const;
  /// InvariantError if the revision already exists or its root catalog is
  /// not stored.
  void write_manifest(const Manifest& m);

  TagDatabase tags() const;
  void write_tags(const TagDatabase& db);

  Catalog catalog(const Manifest& m) const;

  /// Exclusive publisher lock.
  FileLock lock() const;

 private:
  explicit Repository(fs::path root);
  fs::path root_;
  ObjectStore store_;
};

/// Resolves a selector against a tag database and revision list:
/// "newest" is the highest revision, "@<n>" an exact revision, otherwise a
/// tag name and then a snapshot name.
std::optional<std::uint64_t> resolve_selector(const TagDatabase& db,
                                              const std::vector<std::uint64_t>& revisions,
                                              std::string_view selector);

}  // namespace ucvm
