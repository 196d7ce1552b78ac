#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ucvm/accounts.hpp"
#include "ucvm/catalog.hpp"
#include "ucvm/idmap.hpp"
#include "ucvm/machine.hpp"
#include "ucvm/publisher.hpp"
#include "ucvm/unionfs.hpp"

namespace ucvm {

// --- staged early-userspace updates (the kexec analog) -----------------------

struct StagedUpdate {
  std::string new_ucvm_version;
  Bytes payload;
  /// Nanoseconds since the epoch; orders competing stages.
  std::uint64_t staged_at = 0;
};

/// Staging area relative to the scratch root.
inline constexpr std::string_view kStagingDir = "state/ucernvm-update";

/// Writes the update atomically into the staging area. An already staged
/// update is replaced when the new one is newer; StageConflict otherwise.
void stage_ucvm_update(const ScratchDisk& scratch, std::string_view version,
                       std::string_view payload, std::optional<std::uint64_t> staged_at = {});

/// Returns and consumes the staged update (the staging area is emptied).
std::optional<StagedUpdate> check_staged(const ScratchDisk& scratch);

/// Clears the machine's snapshot pin so the next boot resolves its selector
/// afresh. NotPinned if nothing is pinned.
void unpin_snapshot(MachineState& machine);

// --- snapshot-change merge ---------------------------------------------------

/// Conflicts under /etc and /var keep the local copy; everywhere else the
/// snapshot wins.
bool fhs_local_wins(std::string_view path);

/// Package database inside the union view.
inline constexpr std::string_view kPackageDbPath = "/var/lib/ucvm/packages";

enum class PackageOrigin { Snapshot, User };

struct PackageRecord {
  std::string name;
  std::string version;
  PackageOrigin origin = PackageOrigin::Snapshot;
  bool operator==(const PackageRecord&) const = default;
};

/// Lines `name<TAB>version<TAB>user|snapshot`.
std::vector<PackageRecord> parse_package_db(std::string_view text);
std::string format_package_db(const std::vector<PackageRecord>& records);

/// new_pkgdb plus the user's packages, sorted by name. On a name clash the
/// user's version is kept and flagged User.
std::vector<PackageRecord> reinsert_packages(const std::vector<PackageRef>& locally_installed,
                                             const std::vector<PackageRef>& new_pkgdb);

struct PackageDiscrepancy {
  std::string name;
  std::string user_version;
  std::string snapshot_version;
  bool operator==(const PackageDiscrepancy&) const = default;
};

struct AccountRemap {
  enum class Kind { Uid, Gid };
  Kind kind;
  std::uint32_t from;
  std::uint32_t to;
  bool operator==(const AccountRemap&) const = default;
};

struct MergeReport {
  std::vector<std::string> kept_local;
  std::vector<std::string> took_remote;
  std::vector<std::string> untouched_overlay;
  /// took_remote entries moved to the orphan directory (kind changes).
  std::vector<std::string> displaced;
  std::vector<PackageRef> reinserted_packages;
  /// User-kept package versions the snapshot disagrees with; their files
  /// outside /etc and /var came from the snapshot anyway.
  std::vector<PackageDiscrepancy> package_discrepancies;
  std::vector<AccountRemap> account_remaps;
  /// Rebuilt on every merge, never composed with an earlier one.
  IdMap idmap;

  /// key=value lines, one per list element.
  std::string encode() const;
};

struct MergeOptions {
  /// Lower-layer content of both snapshots.
  ObjectFetcher fetch;
  /// Where displaced local entries go (state/merge-orphans/<revision>).
  fs::path orphan_dir;
};

/// An overlay path conflicts when the snapshot entry under it changed
/// between `old_catalog` and `new_catalog` (presence, kind, content or
/// target). Upper directories only conflict when the new snapshot puts a
/// non-directory there. Conflicts resolve by fhs_local_wins(); the losing
/// overlay entry is removed, or moved to orphan_dir on a kind change.
/// Then user packages are reinserted and account databases merged.
MergeReport merge_on_update(const fs::path& upper_dir, const Catalog& old_catalog,
                            const Catalog& new_catalog, const MergeOptions& options);

}  // namespace ucvm
