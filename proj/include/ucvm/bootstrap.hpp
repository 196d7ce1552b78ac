#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ucvm/machine.hpp"
#include "ucvm/transport.hpp"
#include "ucvm/unionfs.hpp"
#include "ucvm/updater.hpp"

namespace ucvm {

/// Contextualization ("user data") relevant to the early user space.
struct Context {
  std::string repo_url;
  std::string repo_name;
  std::string snapshot_selector = "newest";
  std::optional<std::string> proxy;
  std::optional<std::uint64_t> cache_quota_bytes;
  /// Unrecognized keys, preserved verbatim.
  std::map<std::string, std::string> extra;
};

/// Reads `key=value` lines between `[ucernvm-begin]` and `[ucernvm-end]`;
/// everything outside the block is ignored. MalformedBlock for a begin
/// without end, MissingRequiredKey without repo_url and repo_name.
Context parse_user_data(std::string_view text);

struct VolumeProbe {
  fs::path path;
  std::optional<std::string> label;
  bool empty = false;
};

/// Inspects a host directory: its label file and whether it holds anything.
/// A missing directory counts as empty.
VolumeProbe probe_volume(const fs::path& path);

/// Reuses the first volume labelled UCVM_SCRATCH untouched; otherwise
/// initializes the first empty one. NoScratchAvailable if neither exists.
ScratchDisk discover_scratch(const std::vector<VolumeProbe>& volumes);

/// Special files in the union root.
inline constexpr std::string_view kPidsFile = "/.cvmfs_pids";
inline constexpr std::string_view kPinFile = "/.ucernvm_pinfiles";
inline constexpr std::string_view kBootstrapHook = "/.ucernvm_bootstrap";

/// The assembled root file system: union view on top, with the read-only
/// snapshot and the raw writable layer projected at /mnt/.ro and /mnt/.rw.
class RootStack {
 public:
  static constexpr std::string_view kRoProjection = "/mnt/.ro";
  static constexpr std::string_view kRwProjection = "/mnt/.rw";

  RootStack(std::unique_ptr<RepoClient> client, std::shared_ptr<const Catalog> catalog,
            std::unique_ptr<UnionMount> view, Manifest manifest);
  ~RootStack();

  UnionMount& view() { return *view_; }
  const UnionMount& view() const { return *view_; }
  RepoClient& client() { return *client_; }
  const Manifest& mounted_manifest() const { return manifest_; }
  const Catalog& catalog() const { return *catalog_; }

  /// Raw snapshot content, ignoring the overlay.
  Bytes read_ro(std::string_view path) const { return view_->read_lower(path); }
  /// Host directory holding the writable layer.
  const fs::path& rw_projection() const { return view_->upper_dir(); }

 private:
  std::unique_ptr<RepoClient> client_;
  std::shared_ptr<const Catalog> catalog_;
  std::unique_ptr<UnionMount> view_;
  Manifest manifest_;
};

struct BootOptions {
  ClientOptions client;
  /// Interpreter for /.ucernvm_bootstrap.
  std::string hook_shell = "/bin/sh";
};

struct BootReport {
  std::uint64_t revision = 0;
  std::string snapshot_name;
  std::string ucvm_version;
  bool adopted_update = false;
  bool manifest_from_cache = false;
  std::uint64_t bytes_fetched = 0;
  std::uint64_t objects_fetched = 0;
  std::uint64_t requests = 0;
  std::size_t pinned = 0;
  std::vector<std::string> unknown_pins;
  /// "none", "ok" or "failed:<exit status>".
  std::string hook_status = "none";
  std::optional<MergeReport> merge;

  std::string encode() const;
};

/// Boots (or reboots) the machine:
///  1. adopt a staged early-userspace update;
///  2. mount the pinned revision, or resolve the context selector and pin
///     the result (merging the overlay when the revision changed);
///  3. assemble the union over the overlay directory;
///  4. write /.cvmfs_pids;
///  5. run /.ucernvm_bootstrap (failure is recorded, not fatal);
///  6. pin the files listed in /.ucernvm_pinfiles;
///  7. expose the projections.
BootReport boot(MachineState& machine, const Context& context, const BootOptions& options = {});

/// Rebuilds the root stack of a machine booted by an earlier process,
/// without re-running the boot sequence. NotBooted if there is no session.
RootStack& reattach(MachineState& machine, const BootOptions& options = {});

/// Cumulative transfer counters of the current session (boot plus any
/// reattached commands), persisted in the machine directory.
TransferStats session_transfer_stats(const MachineState& machine);
void record_session_transfer(const MachineState& machine, const TransferStats& delta);

struct ShutdownReport {
  bool was_booted = false;
  std::vector<std::string> order;
  std::uint64_t violations = 0;

  std::string encode() const;
};

/// Ordered teardown: rw layer read-only, union closed, root released.
/// `between_readonly_and_close` lets tests inject late writes; every
/// rejected write counts as a violation. No-op on a machine that is not
/// booted.
ShutdownReport shutdown(MachineState& machine,
                        const std::function<void(UnionMount&)>& between_readonly_and_close = {});

}  // namespace ucvm
