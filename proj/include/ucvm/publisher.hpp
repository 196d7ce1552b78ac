#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ucvm/repository.hpp"

namespace ucvm {

struct PackageRef {
  std::string name;
  std::string version;

  auto operator<=>(const PackageRef&) const = default;
};

/// Payload-free package whose exact dependency list pins a whole OS release.
struct MetaPackage {
  std::string name;
  std::string version;
  std::vector<PackageRef> dependencies;
};

/// An exact version: non-empty, no range operators, wildcards or spaces.
bool is_exact_version(std::string_view version);

/// Lines `name <n>`, `version <v>`, `dep <name> <exact-version>`. Rejects
/// inexact versions and duplicate dependency names with InvalidPackage.
MetaPackage parse_meta_package(std::string_view text);

struct PackageUniverse {
  std::map<PackageRef, std::vector<PackageRef>> packages;
};

/// Lines `pkg <name> <version> [<dep>=<version> ...]`.
PackageUniverse parse_package_universe(std::string_view text);

struct MissingPackage {
  PackageRef package;
  bool operator==(const MissingPackage&) const = default;
};

struct VersionConflict {
  std::string name;
  std::string first;   // bytewise smaller
  std::string second;
  bool operator==(const VersionConflict&) const = default;
};

struct ValidationReport {
  std::vector<MissingPackage> missing;      // sorted
  std::vector<VersionConflict> conflicts;   // sorted by (name, first, second)
  bool ok() const { return missing.empty() && conflicts.empty(); }
};

/// Walks the transitive closure of the meta package's dependencies. Every
/// reached (name, version) absent from the universe is missing; every name
/// reached at two different versions is a conflict (one entry per pair).
ValidationReport validate_meta_package(const MetaPackage& meta, const PackageUniverse& universe);

/// Host-independent description of a tree to publish. File content is
/// either held in memory or read lazily from a host file.
struct SourceEntry {
  EntryKind kind = EntryKind::File;
  std::uint16_t mode = 0644;
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::variant<Bytes, fs::path> content;  // File only
  std::string target;                     // Symlink only
};

class SourceTree {
 public:
  SourceTree();

  /// Missing parent directories are created with mode 0755.
  void add_file(std::string_view path, Bytes data, std::uint16_t mode = 0644,
                std::uint32_t uid = 0, std::uint32_t gid = 0);
  void add_host_file(std::string_view path, fs::path host, std::uint16_t mode = 0644,
                     std::uint32_t uid = 0, std::uint32_t gid = 0);
  void add_dir(std::string_view path, std::uint16_t mode = 0755, std::uint32_t uid = 0,
               std::uint32_t gid = 0);
  void add_symlink(std::string_view path, std::string target);
  void remove(std::string_view path);

  /// Walks a host directory without following symlinks. Ownership and
  /// permission bits come from the host.
  static SourceTree from_directory(const fs::path& dir);

  const std::map<std::string, SourceEntry, std::less<>>& entries() const { return entries_; }

 private:
  void ensure_parents(std::string_view path);
  std::map<std::string, SourceEntry, std::less<>> entries_;
};

struct PublishOptions {
  /// Defaults to Repository::name().
  std::optional<std::string> repo_name;
  /// Defaults to the current time.
  std::optional<Timestamp> published_at;
};

/// Stores file contents and the encoded catalog, writes the next manifest,
/// records the snapshot name and moves `tag` (if non-empty). Earlier
/// manifests and objects are never touched. Holds the repository lock.
Manifest publish_snapshot(Repository& repo, const SourceTree& tree,
                          std::string_view snapshot_name, std::string_view tag,
                          const PublishOptions& options = {});

/// UnknownSelector if the revision is not published.
void set_tag(Repository& repo, std::string_view tag, std::uint64_t revision);

/// Tag name, snapshot name, "@<revision>" or "newest". UnknownSelector when
/// nothing matches.
Manifest resolve(const Repository& repo, std::string_view selector);

}  // namespace ucvm
