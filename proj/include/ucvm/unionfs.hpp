#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "ucvm/catalog.hpp"
#include "ucvm/idmap.hpp"
#include "ucvm/util.hpp"

namespace ucvm {

/// Reader/writer lock where a waiting writer holds back new readers, so a
/// steady stream of reads cannot starve mutations.
class TurnstileSharedMutex {
 public:
  void lock() {
    std::lock_guard gate(turnstile_);
    mu_.lock();
  }
  bool try_lock() { return mu_.try_lock(); }
  void unlock() { mu_.unlock(); }
  void lock_shared() {
    { std::lock_guard gate(turnstile_); }
    mu_.lock_shared();
  }
  bool try_lock_shared() { return mu_.try_lock_shared(); }
  void unlock_shared() { mu_.unlock_shared(); }

 private:
  std::mutex turnstile_;
  std::shared_mutex mu_;
};

enum class Layer { Upper, Lower };

struct UnionStat {
  EntryKind kind = EntryKind::File;
  std::uint16_t mode = 0;
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::uint64_t size = 0;
  Layer layer = Layer::Lower;
};

/// Supplies lower-layer file content on demand (normally RepoClient).
using ObjectFetcher = std::function<Bytes(const ObjectId&)>;

/// Copy-on-write union of a read-only snapshot (lower: catalog plus fetched
/// objects) and a writable host directory (upper).
///
/// The upper directory is a plain tree: regular entries shadow the lower
/// layer, and an empty marker file `.wh.<name>` hides lower entry `<name>`.
/// Names starting with `.wh.` are reserved. When a hidden lower directory is
/// recreated, every lower child gets its own marker, so nothing resurfaces.
/// Symlinks are never followed.
///
/// Reads may run concurrently; mutations are serialized. Only one mount may
/// hold a given upper directory (lock file `<upper>.lock`).
class UnionMount {
 public:
  static constexpr std::string_view kWhiteoutPrefix = ".wh.";

  UnionMount(std::shared_ptr<const Catalog> lower, ObjectFetcher fetch, fs::path upper_dir,
             IdMap idmap = {});
  ~UnionMount();
  UnionMount(const UnionMount&) = delete;
  UnionMount& operator=(const UnionMount&) = delete;

  /// NotFound, IsADirectory, NotARegularFile (symlink).
  Bytes read(std::string_view path) const;
  std::string readlink(std::string_view path) const;
  /// Sorted names. NotFound, NotADirectory.
  std::vector<std::string> readdir(std::string_view path) const;
  /// NotFound when absent.
  UnionStat stat(std::string_view path) const;
  bool exists(std::string_view path) const;

  /// Creates or replaces a file. ParentNotFound, ParentNotADirectory,
  /// IsADirectory, ReservedName.
  void write(std::string_view path, std::string_view data);
  /// AlreadyExists plus the write() parent errors.
  void mkdir(std::string_view path);
  void symlink(std::string_view path, std::string_view target);
  /// Removes a file, symlink or empty directory. NotFound, NotEmpty.
  void unlink(std::string_view path);

  /// Read-only projection of the raw snapshot.
  Bytes read_lower(std::string_view path) const;

  /// Subsequent mutations fail with ReadOnly and are counted.
  void set_read_only();
  bool read_only() const { return read_only_.load(); }
  std::uint64_t rejected_writes() const { return rejected_writes_.load(); }

  /// Releases the upper-directory lock; every later call fails with Closed.
  void close();
  bool closed() const { return closed_.load(); }

  /// TreeDigest over the whole union view, skipping runtime files.
  std::string tree_digest() const;

  const Catalog& lower() const { return *lower_; }
  const fs::path& upper_dir() const { return upper_; }
  const IdMap& idmap() const { return idmap_; }

 private:
  struct Node {
    Layer layer;
    EntryKind kind;
  };
  std::optional<Node> resolve(std::string_view path) const;
  std::vector<std::string> readdir_locked(std::string_view path) const;
  UnionStat stat_locked(std::string_view path) const;
  fs::path host_path(std::string_view path) const;
  fs::path whiteout_path(std::string_view path) const;
  void check_open() const;
  void check_writable();
  /// Validates the target path and that its parent is a union directory.
  void check_parent(std::string_view path) const;
  void copy_up_dirs(std::string_view dir);

  std::shared_ptr<const Catalog> lower_;
  ObjectFetcher fetch_;
  fs::path upper_;
  IdMap idmap_;
  std::optional<FileLock> lock_;
  mutable TurnstileSharedMutex mu_;
  std::atomic<bool> read_only_{false};
  std::atomic<bool> closed_{false};
  std::atomic<std::uint64_t> rejected_writes_{0};
};

}  // namespace ucvm
