#include "ucvm/unionfs.hpp"

#include <sys/stat.h>

#include <fstream>
#include <map>
#include <mutex>
#include <set>

#include "ucvm/error.hpp"

namespace ucvm {

namespace {

bool is_reserved(std::string_view name) {
  return name.substr(0, UnionMount::kWhiteoutPrefix.size()) == UnionMount::kWhiteoutPrefix;
}

std::optional<EntryKind> host_kind(const fs::path& p) {
  struct stat st {};
  if (::lstat(p.c_str(), &st) != 0) return std::nullopt;
  if (S_ISDIR(st.st_mode)) return EntryKind::Dir;
  if (S_ISLNK(st.st_mode)) return EntryKind::Symlink;
  return EntryKind::File;
}

}  // namespace

UnionMount::UnionMount(std::shared_ptr<const Catalog> lower, ObjectFetcher fetch,
                       fs::path upper_dir, IdMap idmap)
    : lower_(std::move(lower)), fetch_(std::move(fetch)), upper_(std::move(upper_dir)),
      idmap_(std::move(idmap)) {
  std::error_code ec;
  fs::create_directories(upper_, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create upper layer " + upper_.string());
  fs::path lock_path = upper_;
  lock_path += ".lock";
  lock_.emplace(lock_path, /*try_only=*/true);
}

UnionMount::~UnionMount() = default;

fs::path UnionMount::host_path(std::string_view path) const {
  if (path == "/") return upper_;
  return upper_ / fs::path(std::string(path.substr(1)));
}

fs::path UnionMount::whiteout_path(std::string_view path) const {
  return host_path(parent_path(path)) / (std::string(kWhiteoutPrefix) + base_name(path));
}

void UnionMount::check_open() const {
  if (closed_.load()) throw Error(ErrorKind::Closed, "union mount " + upper_.string());
}

void UnionMount::check_writable() {
  check_open();
  if (read_only_.load()) {
    rejected_writes_.fetch_add(1);
    throw Error(ErrorKind::ReadOnly, "union mount " + upper_.string());
  }
}

std::optional<UnionMount::Node> UnionMount::resolve(std::string_view path) const {
  require_canonical_path(path);
  Node node{Layer::Upper, EntryKind::Dir};
  std::string current = "/";
  for (const auto& name : path_components(path)) {
    if (node.kind != EntryKind::Dir || is_reserved(name)) return std::nullopt;
    std::string child = join_path(current, name);
    std::error_code ec;
    if (fs::exists(fs::symlink_status(whiteout_path(child), ec))) return std::nullopt;
    if (auto kind = host_kind(host_path(child))) {
      node = {Layer::Upper, *kind};
    } else if (const Dirent* e = lower_->find(child)) {
      node = {Layer::Lower, e->kind};
    } else {
      return std::nullopt;
    }
    current = std::move(child);
  }
  return node;
}

Bytes UnionMount::read(std::string_view path) const {
  std::shared_lock lock(mu_);
  check_open();
  auto node = resolve(path);
  if (!node) throw Error(ErrorKind::NotFound, std::string(path));
  if (node->kind == EntryKind::Dir) throw Error(ErrorKind::IsADirectory, std::string(path));
  if (node->kind == EntryKind::Symlink) throw Error(ErrorKind::NotARegularFile, std::string(path));
  if (node->layer == Layer::Upper) return read_file(host_path(path));
  return fetch_(*lower_->find(path)->content);
}

std::string UnionMount::readlink(std::string_view path) const {
  std::shared_lock lock(mu_);
  check_open();
  auto node = resolve(path);
  if (!node) throw Error(ErrorKind::NotFound, std::string(path));
  if (node->kind != EntryKind::Symlink) throw Error(ErrorKind::InvalidArgument, "not a symlink: " + std::string(path));
  if (node->layer == Layer::Upper) return fs::read_symlink(host_path(path)).string();
  return lower_->find(path)->target;
}

std::vector<std::string> UnionMount::readdir_locked(std::string_view path) const {
  auto node = resolve(path);
  if (!node) throw Error(ErrorKind::NotFound, std::string(path));
  if (node->kind != EntryKind::Dir) throw Error(ErrorKind::NotADirectory, std::string(path));
  std::set<std::string> names;
  std::set<std::string> hidden;
  if (node->layer == Layer::Upper) {
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(host_path(path), ec)) {
      std::string name = entry.path().filename().string();
      if (is_reserved(name)) {
        hidden.insert(name.substr(kWhiteoutPrefix.size()));
      } else {
        names.insert(std::move(name));
      }
    }
  }
  const Dirent* lower_dir = lower_->find(path);
  if (lower_dir != nullptr && lower_dir->kind == EntryKind::Dir) {
    for (auto& name : lower_->children(path)) {
      if (hidden.count(name) == 0) names.insert(std::move(name));
    }
  }
  return {names.begin(), names.end()};
}

std::vector<std::string> UnionMount::readdir(std::string_view path) const {
  std::shared_lock lock(mu_);
  check_open();
  return readdir_locked(path);
}

UnionStat UnionMount::stat_locked(std::string_view path) const {
  auto node = resolve(path);
  if (!node) throw Error(ErrorKind::NotFound, std::string(path));
  const Dirent* lower = lower_->find(path);
  UnionStat st;
  st.kind = node->kind;
  st.layer = node->layer;
  if (node->layer == Layer::Lower) {
    st.mode = lower->mode;
    st.size = lower->size;
    Owner o = apply_idmap({lower->uid, lower->gid}, idmap_);
    st.uid = o.uid;
    st.gid = o.gid;
    return st;
  }
  // Upper entries inherit owner (and, for the same kind, mode) from the
  // lower entry they shadow.
  fs::path host = host_path(path);
  switch (node->kind) {
    case EntryKind::File: st.size = fs::file_size(host); st.mode = 0644; break;
    case EntryKind::Dir: st.size = 0; st.mode = 0755; break;
    case EntryKind::Symlink:
      st.size = fs::read_symlink(host).string().size();
      st.mode = 0777;
      break;
  }
  if (lower != nullptr) {
    if (lower->kind == node->kind) st.mode = lower->mode;
    Owner o = apply_idmap({lower->uid, lower->gid}, idmap_);
    st.uid = o.uid;
    st.gid = o.gid;
  }
  return st;
}

UnionStat UnionMount::stat(std::string_view path) const {
  std::shared_lock lock(mu_);
  check_open();
  return stat_locked(path);
}

bool UnionMount::exists(std::string_view path) const {
  std::shared_lock lock(mu_);
  check_open();
  return resolve(path).has_value();
}

void UnionMount::check_parent(std::string_view path) const {
  require_canonical_path(path);
  if (path == "/") throw Error(ErrorKind::InvalidPath, "cannot replace the root");
  if (is_reserved(base_name(path))) throw Error(ErrorKind::ReservedName, std::string(path));
  auto parent = resolve(parent_path(path));
  if (!parent) throw Error(ErrorKind::ParentNotFound, std::string(path));
  if (parent->kind != EntryKind::Dir) throw Error(ErrorKind::ParentNotADirectory, std::string(path));
}

void UnionMount::copy_up_dirs(std::string_view dir) {
  std::string current = "/";
  for (const auto& name : path_components(dir)) {
    current = join_path(current, name);
    fs::path host = host_path(current);
    if (!host_kind(host)) {
      std::error_code ec;
      fs::create_directory(host, ec);
      if (ec) throw Error(ErrorKind::IoError, "copy-up of " + current + ": " + ec.message());
    }
  }
}

void UnionMount::write(std::string_view path, std::string_view data) {
  std::unique_lock lock(mu_);
  check_writable();
  check_parent(path);
  auto node = resolve(path);
  if (node && node->kind == EntryKind::Dir) throw Error(ErrorKind::IsADirectory, std::string(path));

  copy_up_dirs(parent_path(path));
  std::error_code ec;
  fs::remove(whiteout_path(path), ec);
  fs::path host = host_path(path);
  if (host_kind(host) == EntryKind::Symlink) fs::remove(host, ec);
  std::ofstream out(host, std::ios::binary | std::ios::trunc);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorKind::IoError, "write of " + std::string(path) + " failed");
}

void UnionMount::mkdir(std::string_view path) {
  std::unique_lock lock(mu_);
  check_writable();
  check_parent(path);
  if (resolve(path)) throw Error(ErrorKind::AlreadyExists, std::string(path));

  copy_up_dirs(parent_path(path));
  std::error_code ec;
  fs::remove(whiteout_path(path), ec);
  fs::path host = host_path(path);
  fs::create_directory(host, ec);
  if (ec) throw Error(ErrorKind::IoError, "mkdir " + std::string(path) + ": " + ec.message());
  // The path was hidden; keep the old lower children hidden too.
  const Dirent* lower = lower_->find(path);
  if (lower != nullptr && lower->kind == EntryKind::Dir) {
    for (const auto& child : lower_->children(path)) {
      std::ofstream(host / (std::string(kWhiteoutPrefix) + child));
    }
  }
}

void UnionMount::symlink(std::string_view path, std::string_view target) {
  std::unique_lock lock(mu_);
  check_writable();
  check_parent(path);
  if (target.empty()) throw Error(ErrorKind::InvalidArgument, "empty symlink target");
  if (resolve(path)) throw Error(ErrorKind::AlreadyExists, std::string(path));

  copy_up_dirs(parent_path(path));
  std::error_code ec;
  fs::remove(whiteout_path(path), ec);
  fs::create_symlink(std::string(target), host_path(path), ec);
  if (ec) throw Error(ErrorKind::IoError, "symlink " + std::string(path) + ": " + ec.message());
}

void UnionMount::unlink(std::string_view path) {
  std::unique_lock lock(mu_);
  check_writable();
  require_canonical_path(path);
  if (path == "/") throw Error(ErrorKind::InvalidPath, "cannot remove the root");
  auto node = resolve(path);
  if (!node) throw Error(ErrorKind::NotFound, std::string(path));
  if (node->kind == EntryKind::Dir && !readdir_locked(path).empty()) {
    throw Error(ErrorKind::NotEmpty, std::string(path));
  }
  std::error_code ec;
  fs::remove_all(host_path(path), ec);
  if (ec) throw Error(ErrorKind::IoError, "remove " + std::string(path) + ": " + ec.message());
  if (lower_->contains(path)) {
    copy_up_dirs(parent_path(path));
    std::ofstream marker(whiteout_path(path));
    if (!marker) throw Error(ErrorKind::IoError, "cannot create whiteout for " + std::string(path));
  }
}

Bytes UnionMount::read_lower(std::string_view path) const {
  check_open();
  require_canonical_path(path);
  const Dirent* e = lower_->find(path);
  if (e == nullptr) throw Error(ErrorKind::NotFound, std::string(path));
  if (e->kind == EntryKind::Dir) throw Error(ErrorKind::IsADirectory, std::string(path));
  if (e->kind == EntryKind::Symlink) throw Error(ErrorKind::NotARegularFile, std::string(path));
  return fetch_(*e->content);
}

void UnionMount::set_read_only() { read_only_.store(true); }

void UnionMount::close() {
  std::unique_lock lock(mu_);
  closed_.store(true);
  lock_.reset();
}

std::string UnionMount::tree_digest() const {
  std::shared_lock lock(mu_);
  check_open();
  // Collect first: the digest wants bytewise path order, not walk order.
  std::map<std::string, UnionStat> stats;
  std::vector<std::string> pending{"/"};
  while (!pending.empty()) {
    std::string path = std::move(pending.back());
    pending.pop_back();
    UnionStat st = stat_locked(path);
    if (st.kind == EntryKind::Dir) {
      for (const auto& name : readdir_locked(path)) pending.push_back(join_path(path, name));
    }
    stats.emplace(std::move(path), st);
  }
  TreeDigest digest;
  for (const auto& [path, st] : stats) {
    if (is_runtime_file(path)) continue;
    std::string content;
    std::string target;
    if (st.kind == EntryKind::File) {
      Bytes data = stat_locked(path).layer == Layer::Upper ? read_file(host_path(path))
                                                           : fetch_(*lower_->find(path)->content);
      content = ObjectId::of(data).hex();
    } else if (st.kind == EntryKind::Symlink) {
      target = st.layer == Layer::Upper ? fs::read_symlink(host_path(path)).string()
                                        : lower_->find(path)->target;
    }
    digest.add(path, st.kind, st.mode, st.uid, st.gid, st.size, content, target);
  }
  return digest.finish();
}

}  // namespace ucvm
