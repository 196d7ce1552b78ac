#include "ucvm/publisher.hpp"

#include <sys/stat.h>

#include <deque>
#include <set>

#include "ucvm/error.hpp"

namespace ucvm {

bool is_exact_version(std::string_view version) {
  if (version.empty()) return false;
  for (char c : version) {
    bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
              c == '.' || c == '-' || c == '_' || c == '+' || c == ':';
    if (!ok) return false;
  }
  return true;
}

namespace {

std::vector<std::string> words(std::string_view line) {
  std::vector<std::string> out;
  for (auto& w : split(line, ' ')) {
    auto t = trim(w);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

}  // namespace

MetaPackage parse_meta_package(std::string_view text) {
  MetaPackage meta;
  std::set<std::string> seen;
  for (const auto& raw : split_lines(text)) {
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto w = words(line);
    if (w[0] == "name" && w.size() == 2) {
      meta.name = w[1];
    } else if (w[0] == "version" && w.size() == 2) {
      meta.version = w[1];
    } else if (w[0] == "dep" && w.size() == 3) {
      if (!is_exact_version(w[2])) {
        throw Error(ErrorKind::InvalidPackage, "dependency " + w[1] + " has inexact version '" +
                                                   w[2] + "'");
      }
      if (!seen.insert(w[1]).second) {
        throw Error(ErrorKind::InvalidPackage, "duplicate dependency " + w[1]);
      }
      meta.dependencies.push_back({w[1], w[2]});
    } else {
      throw Error(ErrorKind::InvalidPackage, "bad meta-package line '" + std::string(line) + "'");
    }
  }
  if (meta.name.empty() || meta.version.empty()) {
    throw Error(ErrorKind::InvalidPackage, "meta package needs name and version");
  }
  return meta;
}

PackageUniverse parse_package_universe(std::string_view text) {
  PackageUniverse u;
  for (const auto& raw : split_lines(text)) {
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto w = words(line);
    if (w.size() < 3 || w[0] != "pkg") {
      throw Error(ErrorKind::InvalidPackage, "bad universe line '" + std::string(line) + "'");
    }
    std::vector<PackageRef> deps;
    for (std::size_t i = 3; i < w.size(); ++i) {
      auto eq = w[i].find('=');
      if (eq == std::string::npos || eq == 0 || !is_exact_version(w[i].substr(eq + 1))) {
        throw Error(ErrorKind::InvalidPackage, "bad dependency '" + w[i] + "'");
      }
      deps.push_back({w[i].substr(0, eq), w[i].substr(eq + 1)});
    }
    u.packages[{w[1], w[2]}] = std::move(deps);
  }
  return u;
}

ValidationReport validate_meta_package(const MetaPackage& meta, const PackageUniverse& universe) {
  std::set<PackageRef> visited;
  std::map<std::string, std::set<std::string>> versions_by_name;
  std::deque<PackageRef> queue(meta.dependencies.begin(), meta.dependencies.end());
  ValidationReport report;
  while (!queue.empty()) {
    PackageRef ref = std::move(queue.front());
    queue.pop_front();
    if (!visited.insert(ref).second) continue;
    versions_by_name[ref.name].insert(ref.version);
    auto it = universe.packages.find(ref);
    if (it == universe.packages.end()) {
      report.missing.push_back({ref});
      continue;
    }
    for (const auto& dep : it->second) queue.push_back(dep);
  }
  std::sort(report.missing.begin(), report.missing.end(),
            [](const auto& a, const auto& b) { return a.package < b.package; });
  for (const auto& [name, versions] : versions_by_name) {
    for (auto a = versions.begin(); a != versions.end(); ++a) {
      for (auto b = std::next(a); b != versions.end(); ++b) {
        report.conflicts.push_back({name, *a, *b});
      }
    }
  }
  return report;
}

SourceTree::SourceTree() {
  SourceEntry root;
  root.kind = EntryKind::Dir;
  root.mode = 0755;
  entries_.emplace("/", std::move(root));
}

void SourceTree::ensure_parents(std::string_view path) {
  std::string parent = parent_path(path);
  if (entries_.count(parent) != 0) return;
  add_dir(parent);
}

void SourceTree::add_file(std::string_view path, Bytes data, std::uint16_t mode,
                          std::uint32_t uid, std::uint32_t gid) {
  require_canonical_path(path);
  ensure_parents(path);
  SourceEntry e;
  e.kind = EntryKind::File;
  e.mode = mode;
  e.uid = uid;
  e.gid = gid;
  e.content = std::move(data);
  entries_.insert_or_assign(std::string(path), std::move(e));
}

void SourceTree::add_host_file(std::string_view path, fs::path host, std::uint16_t mode,
                               std::uint32_t uid, std::uint32_t gid) {
  require_canonical_path(path);
  ensure_parents(path);
  SourceEntry e;
  e.kind = EntryKind::File;
  e.mode = mode;
  e.uid = uid;
  e.gid = gid;
  e.content = std::move(host);
  entries_.insert_or_assign(std::string(path), std::move(e));
}

void SourceTree::add_dir(std::string_view path, std::uint16_t mode, std::uint32_t uid,
                         std::uint32_t gid) {
  require_canonical_path(path);
  if (path != "/") ensure_parents(path);
  SourceEntry e;
  e.kind = EntryKind::Dir;
  e.mode = mode;
  e.uid = uid;
  e.gid = gid;
  entries_.insert_or_assign(std::string(path), std::move(e));
}

void SourceTree::add_symlink(std::string_view path, std::string target) {
  require_canonical_path(path);
  ensure_parents(path);
  SourceEntry e;
  e.kind = EntryKind::Symlink;
  e.mode = 0777;
  e.target = std::move(target);
  entries_.insert_or_assign(std::string(path), std::move(e));
}

void SourceTree::remove(std::string_view path) {
  if (path == "/") return;
  std::string prefix = std::string(path) + "/";
  for (auto it = entries_.begin(); it != entries_.end();) {
    if (it->first == path || it->first.compare(0, prefix.size(), prefix) == 0) {
      it = entries_.erase(it);
    } else {
      ++it;
    }
  }
}

SourceTree SourceTree::from_directory(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorKind::NotFound, "no directory " + dir.string());
  SourceTree tree;
  for (auto it = fs::recursive_directory_iterator(dir, ec); it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (ec) throw Error(ErrorKind::IoError, "walking " + dir.string() + ": " + ec.message());
    const fs::path& host = it->path();
    std::string rel = "/" + host.lexically_relative(dir).generic_string();
    struct stat st {};
    if (::lstat(host.c_str(), &st) != 0) {
      throw Error(ErrorKind::IoError, "cannot stat " + host.string());
    }
    auto mode = static_cast<std::uint16_t>(st.st_mode & 07777);
    if (S_ISDIR(st.st_mode)) {
      tree.add_dir(rel, mode, st.st_uid, st.st_gid);
    } else if (S_ISREG(st.st_mode)) {
      tree.add_host_file(rel, host, mode, st.st_uid, st.st_gid);
    } else if (S_ISLNK(st.st_mode)) {
      tree.add_symlink(rel, fs::read_symlink(host).string());
      auto& e = tree.entries_.at(rel);
      e.uid = st.st_uid;
      e.gid = st.st_gid;
    }
    // Device nodes, fifos and sockets are not modeled.
  }
  return tree;
}

Manifest publish_snapshot(Repository& repo, const SourceTree& tree,
                          std::string_view snapshot_name, std::string_view tag,
                          const PublishOptions& options) {
  if (!is_valid_label(snapshot_name)) {
    throw Error(ErrorKind::InvalidArgument, "bad snapshot name '" + std::string(snapshot_name) + "'");
  }
  if (!tag.empty() && !is_valid_label(tag)) {
    throw Error(ErrorKind::InvalidArgument, "bad tag name '" + std::string(tag) + "'");
  }
  FileLock lock = repo.lock();
  TagDatabase db = repo.tags();
  if (db.snapshots.count(std::string(snapshot_name)) != 0) {
    throw Error(ErrorKind::DuplicateSnapshotName, std::string(snapshot_name));
  }

  Catalog catalog;
  for (const auto& [path, src] : tree.entries()) {
    switch (src.kind) {
      case EntryKind::Dir:
        catalog.insert(path, Dirent::directory(src.mode, src.uid, src.gid));
        break;
      case EntryKind::Symlink:
        catalog.insert(path, Dirent::symlink(src.target, src.uid, src.gid));
        break;
      case EntryKind::File: {
        Bytes loaded;
        const Bytes* data = std::get_if<Bytes>(&src.content);
        if (data == nullptr) {
          loaded = read_file(std::get<fs::path>(src.content));
          data = &loaded;
        }
        ObjectId id = repo.store().put(*data);
        catalog.insert(path, Dirent::file(id, data->size(), src.mode, src.uid, src.gid));
        break;
      }
    }
  }
  catalog.validate();

  Manifest m;
  m.repo_name = options.repo_name ? *options.repo_name : repo.name();
  std::optional<std::uint64_t> latest = repo.latest_revision();
  m.revision = latest ? *latest + 1 : 1;
  m.parent_revision = latest;
  m.snapshot_name = std::string(snapshot_name);
  m.root_catalog = repo.store().put(encode_catalog(catalog));
  m.published_at = options.published_at ? *options.published_at : now_seconds();
  repo.write_manifest(m);

  db.snapshots[m.snapshot_name] = m.revision;
  if (!tag.empty()) db.tags[std::string(tag)] = m.revision;
  repo.write_tags(db);
  return m;
}

void set_tag(Repository& repo, std::string_view tag, std::uint64_t revision) {
  if (!is_valid_label(tag)) throw Error(ErrorKind::InvalidArgument, "bad tag name '" + std::string(tag) + "'");
  FileLock lock = repo.lock();
  if (!repo.has_revision(revision)) {
    throw Error(ErrorKind::UnknownSelector, "revision " + std::to_string(revision));
  }
  TagDatabase db = repo.tags();
  db.tags[std::string(tag)] = revision;
  repo.write_tags(db);
}

Manifest resolve(const Repository& repo, std::string_view selector) {
  auto rev = resolve_selector(repo.tags(), repo.revisions(), selector);
  if (!rev) throw Error(ErrorKind::UnknownSelector, "'" + std::string(selector) + "'");
  return repo.manifest(*rev);
}

}  // namespace ucvm
