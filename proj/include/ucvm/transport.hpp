#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <future>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ucvm/catalog.hpp"
#include "ucvm/object_store.hpp"
#include "ucvm/repository.hpp"

namespace ucvm {

/// Client-side object cache on the scratch volume. Same fan-out layout as
/// the repository store; objects stay compressed. Sizes below are on-disk
/// (compressed) bytes.
///
///   <dir>/data/xx/<62 hex>
///   <dir>/manifests/<escaped selector>
///   <dir>/pinned
class CacheManager {
 public:
  static constexpr std::uint64_t kDefaultQuota = std::uint64_t{4} << 30;
  /// Eviction frees space down to this fraction of the quota.
  static constexpr double kEvictionLowWater = 0.8;

  CacheManager(fs::path dir, std::uint64_t quota_bytes = kDefaultQuota);

  /// Verified, uncompressed content; a corrupted entry is dropped and
  /// reported as a miss. Hits refresh the LRU position.
  std::optional<Bytes> lookup(const ObjectId& id);
  bool contains(const ObjectId& id) const;

  /// Adds a verified compressed object, evicting unpinned LRU objects as
  /// needed. QuotaTooSmall when the object cannot fit even after eviction.
  void insert(const ObjectId& id, std::string_view compressed);

  /// Marks a cached object non-evictable; persisted across restarts.
  /// NotFound if the object is not cached, PinExceedsQuota if pinned bytes
  /// would exceed the quota.
  void pin(const ObjectId& id);
  bool is_pinned(const ObjectId& id) const;
  std::set<ObjectId> pinned() const;
  void unpin_all();

  /// Removes least-recently-used unpinned objects until used <= quota.
  void evict_to_quota();

  std::uint64_t used_bytes() const;
  std::uint64_t pinned_bytes() const;
  std::uint64_t quota_bytes() const { return quota_; }
  std::size_t object_count() const;
  /// Least recently used first.
  std::vector<ObjectId> lru_order() const;

  std::optional<Bytes> cached_manifest(std::string_view selector) const;
  void store_manifest(std::string_view selector, std::string_view bytes);

  const fs::path& dir() const { return dir_; }

 private:
  struct Slot {
    std::uint64_t size;
    std::list<ObjectId>::iterator lru_pos;
  };
  void touch_locked(const ObjectId& id);
  void evict_locked(std::uint64_t target_used);
  void save_pins_locked() const;

  fs::path dir_;
  std::uint64_t quota_;
  ObjectStore store_;
  mutable std::mutex mu_;
  std::list<ObjectId> lru_;  // front = least recently used
  std::unordered_map<ObjectId, Slot> slots_;
  std::set<ObjectId> pinned_;
  std::uint64_t used_ = 0;
};

struct RetryPolicy {
  /// Extra attempts after a connection failure, with exponential backoff.
  int connect_retries = 3;
  std::chrono::milliseconds backoff_base{500};
  /// Extra attempts after a digest mismatch.
  int integrity_retries = 1;
};

struct ClientOptions {
  /// Forward proxy, e.g. "http://proxy:3128".
  std::optional<std::string> proxy;
  RetryPolicy retry;
  std::chrono::milliseconds timeout{10000};
};

struct TransferStats {
  std::uint64_t requests = 0;
  std::uint64_t bytes_downloaded = 0;  // response bodies
  std::uint64_t objects_fetched = 0;   // object downloads that were verified
};

/// Absolute repository paths to keep cached; parsed from the repository
/// file "/.ucernvm_pinfiles" (one path per line, '#' comments).
struct PinSet {
  std::vector<std::string> paths;
  static PinSet parse(std::string_view text);
};

struct PinReport {
  std::vector<std::string> pinned;
  std::vector<std::string> unknown;   // not in the catalog
  std::vector<std::string> skipped;   // directories and symlinks
  std::uint64_t pinned_bytes = 0;     // uncompressed
};

struct ParsedUrl {
  std::string scheme;
  std::string host;
  int port = 80;
  std::string path;  // no trailing slash, may be empty

  static ParsedUrl parse(std::string_view url);
  std::string origin() const;
};

/// Fetches manifests and objects of one repository over HTTP, backed by a
/// CacheManager. Object fetches are single-flighted: concurrent requests for
/// the same id share one download.
class RepoClient {
 public:
  RepoClient(std::string base_url, std::string repo_name, std::shared_ptr<CacheManager> cache,
             ClientOptions options = {});
  ~RepoClient();

  struct ManifestResult {
    Manifest manifest;
    bool from_cache = false;
  };

  /// GET /<repo>/manifest?selector=; on connection failure falls back to the
  /// manifest cached for the same selector. UnknownSelector on 404,
  /// Unreachable with neither network nor cache. Sets current_manifest().
  ManifestResult fetch_manifest(std::string_view selector);

  /// Cache hit: no network traffic. Miss: download, verify, cache.
  Bytes fetch_object(const ObjectId& id);

  /// Fetches and pins every file of the pinset found in `catalog`.
  PinReport pin(const Catalog& catalog, const PinSet& pinset);

  TransferStats stats() const;
  const std::optional<Manifest>& current_manifest() const { return current_; }
  CacheManager& cache() { return *cache_; }
  const std::string& repo_name() const { return repo_name_; }
  const std::string& base_url() const { return base_url_; }
  /// Distinguishes clients within one process.
  std::uint64_t instance_id() const { return instance_id_; }

 private:
  struct Response {
    int status = 0;
    Bytes body;
  };
  /// Retries connection failures per the policy; nullopt when unreachable.
  std::optional<Response> get(const std::string& path_and_query);
  Bytes download_object(const ObjectId& id);

  std::string base_url_;
  std::string repo_name_;
  std::shared_ptr<CacheManager> cache_;
  ClientOptions options_;
  ParsedUrl url_;
  std::optional<Manifest> current_;
  std::uint64_t instance_id_;

  mutable std::mutex mu_;
  std::unordered_map<ObjectId, std::shared_future<Bytes>> inflight_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> bytes_{0};
  std::atomic<std::uint64_t> objects_{0};
};

/// Serves one repository read-only:
///   GET /<repo>/manifest?selector=<s>
///   GET /<repo>/data/<xx>/<62hex>     (stored compressed bytes)
///   GET /<repo>/tags
/// The repository is re-read per request, so publishes become visible
/// without a restart.
class RepoServer {
 public:
  explicit RepoServer(fs::path repo_root);
  ~RepoServer();
  RepoServer(const RepoServer&) = delete;
  RepoServer& operator=(const RepoServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves on a background thread.
  void start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();

  std::string base_url() const;
  const std::string& repo_name() const { return repo_name_; }
  std::uint64_t request_count() const { return requests_.load(); }

  /// Test hook: may rewrite object bodies before they are sent.
  void set_object_filter(std::function<void(const ObjectId&, Bytes&)> filter);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  fs::path root_;
  std::string repo_name_;
  std::string host_;
  int port_ = 0;
  std::atomic<std::uint64_t> requests_{0};
};

/// One-shot GET of an absolute http:// URL (used for user data).
/// Unreachable or NotFound on failure.
Bytes http_get(const std::string& url, const std::optional<std::string>& proxy = std::nullopt);

}  // namespace ucvm
