#include "ucvm/updater.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <charconv>
#include <map>

#include "ucvm/error.hpp"

namespace ucvm {

// --- staged updates ----------------------------------------------------------

namespace {

std::uint64_t now_ns() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

std::optional<StagedUpdate> read_staged(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return std::nullopt;
  try {
    StagedUpdate st;
    st.new_ucvm_version = std::string(trim(read_file(dir / "version")));
    st.payload = read_file(dir / "payload");
    std::string at(trim(read_file(dir / "staged_at")));
    auto [ptr, err] = std::from_chars(at.data(), at.data() + at.size(), st.staged_at);
    if (err != std::errc() || ptr != at.data() + at.size() || st.new_ucvm_version.empty()) {
      return std::nullopt;
    }
    return st;
  } catch (const Error&) {
    return std::nullopt;  // half-written staging area; treated as absent
  }
}

}  // namespace

void stage_ucvm_update(const ScratchDisk& scratch, std::string_view version,
                       std::string_view payload, std::optional<std::uint64_t> staged_at) {
  if (trim(version).empty() || version.find('\n') != std::string_view::npos) {
    throw Error(ErrorKind::InvalidArgument, "bad version '" + std::string(version) + "'");
  }
  static std::atomic<unsigned> counter{0};
  const fs::path dir = scratch.root / kStagingDir;
  const std::uint64_t at = staged_at ? *staged_at : now_ns();
  FileLock lock(scratch.state_dir() / ".stage.lock");

  if (auto existing = read_staged(dir)) {
    if (existing->staged_at > at) {
      throw Error(ErrorKind::StageConflict, "version " + existing->new_ucvm_version +
                                                " was staged later than " + std::string(version));
    }
  }

  fs::path tmp = dir;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  std::error_code ec;
  fs::create_directories(tmp, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + tmp.string());
  write_file_atomic(tmp / "payload", payload);
  write_file_atomic(tmp / "version", std::string(version) + "\n");
  write_file_atomic(tmp / "staged_at", std::to_string(at) + "\n");

  fs::path old = dir;
  old += ".old";
  fs::remove_all(old, ec);
  if (fs::exists(dir)) fs::rename(dir, old, ec);
  fs::rename(tmp, dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot install staged update: " + ec.message());
  fs::remove_all(old, ec);
}

std::optional<StagedUpdate> check_staged(const ScratchDisk& scratch) {
  const fs::path dir = scratch.root / kStagingDir;
  auto staged = read_staged(dir);
  std::error_code ec;
  fs::remove_all(dir, ec);
  return staged;
}

void unpin_snapshot(MachineState& machine) {
  if (!machine.pinned_revision()) {
    throw Error(ErrorKind::NotPinned, "machine " + machine.dir().string() + " has no pinned snapshot");
  }
  machine.set_pinned_revision(std::nullopt);
}

// --- packages ----------------------------------------------------------------

std::vector<PackageRecord> parse_package_db(std::string_view text) {
  std::vector<PackageRecord> out;
  for (const auto& raw : split_lines(text)) {
    if (trim(raw).empty() || raw.front() == '#') continue;
    auto f = split(raw, '\t');
    if (f.size() != 3 || f[0].empty() || (f[2] != "user" && f[2] != "snapshot")) {
      throw Error(ErrorKind::DecodeError, "bad package line '" + raw + "'");
    }
    out.push_back({f[0], f[1], f[2] == "user" ? PackageOrigin::User : PackageOrigin::Snapshot});
  }
  return out;
}

std::string format_package_db(const std::vector<PackageRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.name + "\t" + r.version + "\t" +
           (r.origin == PackageOrigin::User ? "user" : "snapshot") + "\n";
  }
  return out;
}

std::vector<PackageRecord> reinsert_packages(const std::vector<PackageRef>& locally_installed,
                                             const std::vector<PackageRef>& new_pkgdb) {
  std::map<std::string, PackageRecord> merged;
  for (const auto& p : new_pkgdb) merged[p.name] = {p.name, p.version, PackageOrigin::Snapshot};
  for (const auto& p : locally_installed) merged[p.name] = {p.name, p.version, PackageOrigin::User};
  std::vector<PackageRecord> out;
  out.reserve(merged.size());
  for (auto& [name, rec] : merged) out.push_back(std::move(rec));
  return out;
}

// --- merge -------------------------------------------------------------------

bool fhs_local_wins(std::string_view path) {
  return path_is_within(path, "/etc") || path_is_within(path, "/var");
}

std::string MergeReport::encode() const {
  std::string out;
  for (const auto& p : kept_local) out += "kept_local=" + p + "\n";
  for (const auto& p : took_remote) out += "took_remote=" + p + "\n";
  for (const auto& p : untouched_overlay) out += "untouched_overlay=" + p + "\n";
  for (const auto& p : displaced) out += "displaced=" + p + "\n";
  for (const auto& p : reinserted_packages) {
    out += "reinserted_package=" + p.name + " " + p.version + "\n";
  }
  for (const auto& d : package_discrepancies) {
    out += "package_discrepancy=" + d.name + " user=" + d.user_version + " snapshot=" +
           d.snapshot_version + "\n";
  }
  for (const auto& r : account_remaps) {
    out += std::string("account_remap=") + (r.kind == AccountRemap::Kind::Uid ? "uid " : "gid ") +
           std::to_string(r.from) + " " + std::to_string(r.to) + "\n";
  }
  return out;
}

namespace {

enum class OverlayKind { File, Symlink, Dir, Whiteout };

std::map<std::string, OverlayKind> scan_overlay(const fs::path& upper) {
  std::map<std::string, OverlayKind> out;
  std::error_code ec;
  if (!fs::is_directory(upper, ec)) return out;
  const std::string prefix(UnionMount::kWhiteoutPrefix);
  for (auto it = fs::recursive_directory_iterator(upper, ec); it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (ec) break;
    std::string rel = "/" + it->path().lexically_relative(upper).generic_string();
    std::string name = it->path().filename().string();
    auto st = it->symlink_status();
    if (name.compare(0, prefix.size(), prefix) == 0) {
      out[join_path(parent_path(rel), name.substr(prefix.size()))] = OverlayKind::Whiteout;
    } else if (fs::is_symlink(st)) {
      out[rel] = OverlayKind::Symlink;
    } else if (fs::is_directory(st)) {
      out[rel] = OverlayKind::Dir;
    } else {
      out[rel] = OverlayKind::File;
    }
  }
  return out;
}

bool snapshot_changed(const Catalog& old_catalog, const Catalog& new_catalog, const std::string& path) {
  const Dirent* a = old_catalog.find(path);
  const Dirent* b = new_catalog.find(path);
  if (a == nullptr && b == nullptr) return false;
  if (a == nullptr || b == nullptr) return true;
  return !same_content(*a, *b);
}

fs::path host_of(const fs::path& upper, std::string_view path) {
  return path == "/" ? upper : upper / fs::path(std::string(path.substr(1)));
}

std::optional<Bytes> snapshot_file(const Catalog& catalog, std::string_view path,
                                   const ObjectFetcher& fetch) {
  const Dirent* e = catalog.find(path);
  if (e == nullptr || e->kind != EntryKind::File) return std::nullopt;
  return fetch(*e->content);
}

std::optional<Bytes> overlay_file(const fs::path& upper, std::string_view path) {
  fs::path host = host_of(upper, path);
  std::error_code ec;
  if (!fs::is_regular_file(fs::symlink_status(host, ec))) return std::nullopt;
  return read_file(host);
}

void write_overlay_file(const fs::path& upper, std::string_view path, std::string_view data) {
  fs::path host = host_of(upper, path);
  std::error_code ec;
  fs::create_directories(host.parent_path(), ec);
  fs::remove(host.parent_path() / (std::string(UnionMount::kWhiteoutPrefix) + base_name(path)), ec);
  write_file_atomic(host, data);
}

void merge_packages(const fs::path& upper, const Catalog& new_catalog, const MergeOptions& options,
                    MergeReport& report) {
  auto local = overlay_file(upper, kPackageDbPath);
  if (!local) return;
  std::vector<PackageRef> user;
  for (const auto& r : parse_package_db(*local)) {
    if (r.origin == PackageOrigin::User) user.push_back({r.name, r.version});
  }
  std::vector<PackageRef> snapshot;
  if (auto db = snapshot_file(new_catalog, kPackageDbPath, options.fetch)) {
    for (const auto& r : parse_package_db(*db)) snapshot.push_back({r.name, r.version});
  }
  if (user.empty()) {
    // Nothing to reinsert: let the snapshot's database show through.
    std::error_code ec;
    fs::remove(host_of(upper, kPackageDbPath), ec);
    return;
  }
  write_overlay_file(upper, kPackageDbPath, format_package_db(reinsert_packages(user, snapshot)));
  report.reinserted_packages = user;
  for (const auto& u : user) {
    for (const auto& s : snapshot) {
      if (s.name == u.name && s.version != u.version) {
        report.package_discrepancies.push_back({u.name, u.version, s.version});
      }
    }
  }
}

void merge_account_files(const fs::path& upper, const Catalog& old_catalog,
                         const Catalog& new_catalog, const MergeOptions& options,
                         MergeReport& report) {
  auto local_passwd = overlay_file(upper, "/etc/passwd");
  auto local_group = overlay_file(upper, "/etc/group");
  if (!local_passwd && !local_group) return;  // accounts never changed locally

  if (!local_passwd) local_passwd = snapshot_file(old_catalog, "/etc/passwd", options.fetch);
  if (!local_group) local_group = snapshot_file(old_catalog, "/etc/group", options.fetch);
  AccountDb local{parse_passwd(local_passwd.value_or("")), parse_group(local_group.value_or(""))};
  AccountDb incoming{
      parse_passwd(snapshot_file(new_catalog, "/etc/passwd", options.fetch).value_or("")),
      parse_group(snapshot_file(new_catalog, "/etc/group", options.fetch).value_or(""))};

  auto [merged, idmap] = merge_accounts(local, incoming);
  write_overlay_file(upper, "/etc/passwd", format_passwd(merged.users));
  write_overlay_file(upper, "/etc/group", format_group(merged.groups));
  for (const auto& [from, to] : idmap.uid_map) {
    report.account_remaps.push_back({AccountRemap::Kind::Uid, from, to});
  }
  for (const auto& [from, to] : idmap.gid_map) {
    report.account_remaps.push_back({AccountRemap::Kind::Gid, from, to});
  }
  report.idmap = std::move(idmap);
}

}  // namespace

MergeReport merge_on_update(const fs::path& upper_dir, const Catalog& old_catalog,
                            const Catalog& new_catalog, const MergeOptions& options) {
  MergeReport report;
  std::vector<std::string> moved;  // displaced directories; descendants went with them
  auto already_moved = [&](const std::string& path) {
    return std::any_of(moved.begin(), moved.end(),
                       [&](const std::string& d) { return path_is_within(path, d); });
  };
  auto displace = [&](const std::string& path) {
    fs::path dest = host_of(options.orphan_dir, path);
    std::error_code ec;
    fs::create_directories(dest.parent_path(), ec);
    fs::remove_all(dest, ec);
    fs::rename(host_of(upper_dir, path), dest, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot move " + path + " to orphans: " + ec.message());
    report.displaced.push_back(path);
    moved.push_back(path);
  };

  for (const auto& [path, kind] : scan_overlay(upper_dir)) {
    const Dirent* remote = new_catalog.find(path);
    bool changed = snapshot_changed(old_catalog, new_catalog, path);
    bool conflict = kind == OverlayKind::Dir
                        ? changed && remote != nullptr && remote->kind != EntryKind::Dir
                        : changed;
    if (!conflict) {
      if (already_moved(path)) continue;
      const Dirent* base = old_catalog.find(path);
      bool user_dir = kind == OverlayKind::Dir && (base == nullptr || base->kind != EntryKind::Dir);
      if (kind != OverlayKind::Dir || user_dir) report.untouched_overlay.push_back(path);
      continue;
    }
    if (fhs_local_wins(path)) {
      report.kept_local.push_back(path);
      continue;
    }
    report.took_remote.push_back(path);
    if (already_moved(path)) continue;
    std::error_code ec;
    switch (kind) {
      case OverlayKind::Whiteout:
        fs::remove(host_of(upper_dir, parent_path(path)) /
                       (std::string(UnionMount::kWhiteoutPrefix) + base_name(path)),
                   ec);
        break;
      case OverlayKind::Dir:
        displace(path);
        break;
      case OverlayKind::File:
      case OverlayKind::Symlink:
        if (remote != nullptr && remote->kind == EntryKind::Dir) {
          displace(path);
        } else {
          fs::remove(host_of(upper_dir, path), ec);
        }
        break;
    }
  }

  merge_packages(upper_dir, new_catalog, options, report);
  merge_account_files(upper_dir, old_catalog, new_catalog, options, report);
  return report;
}

}  // namespace ucvm
