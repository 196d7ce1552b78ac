#include "ucvm/repository.hpp"

#include <algorithm>
#include <charconv>

#include "ucvm/error.hpp"

namespace ucvm {

namespace {

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::uint64_t require_u64(std::string_view s, std::string_view what) {
  auto v = parse_u64(s);
  if (!v) {
    throw Error(ErrorKind::DecodeError, "bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return *v;
}

}  // namespace

Bytes encode_manifest(const Manifest& m) {
  std::string out;
  out += "repo_name=" + m.repo_name + "\n";
  out += "revision=" + std::to_string(m.revision) + "\n";
  out += "snapshot_name=" + m.snapshot_name + "\n";
  out += "root_catalog=" + m.root_catalog.hex() + "\n";
  out += "published_at=" + format_rfc3339(m.published_at) + "\n";
  out += "parent_revision=" +
         (m.parent_revision ? std::to_string(*m.parent_revision) : std::string("none")) + "\n";
  return out;
}

Manifest decode_manifest(std::string_view bytes) {
  auto kv = parse_key_values(bytes);
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorKind::DecodeError, std::string("manifest lacks ") + key);
    return it->second;
  };
  Manifest m;
  m.repo_name = need("repo_name");
  m.revision = require_u64(need("revision"), "revision");
  if (m.revision == 0) throw Error(ErrorKind::DecodeError, "revision must be positive");
  m.snapshot_name = need("snapshot_name");
  m.root_catalog = ObjectId::parse(need("root_catalog"));
  m.published_at = parse_rfc3339(need("published_at"));
  const std::string& parent = need("parent_revision");
  if (parent != "none") m.parent_revision = require_u64(parent, "parent_revision");
  return m;
}

bool is_valid_label(std::string_view name) {
  if (name.empty() || name.front() == '@' || name == "newest") return false;
  for (char c : name) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '/' || c == '\0') return false;
  }
  return true;
}

Bytes encode_tags(const TagDatabase& db) {
  std::string out;
  for (const auto& [name, rev] : db.tags) out += "tag " + name + " " + std::to_string(rev) + "\n";
  for (const auto& [name, rev] : db.snapshots) {
    out += "snapshot " + name + " " + std::to_string(rev) + "\n";
  }
  return out;
}

TagDatabase decode_tags(std::string_view bytes) {
  TagDatabase db;
  for (const auto& raw : split_lines(bytes)) {
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto fields = split(line, ' ');
    if (fields.size() != 3 || !is_valid_label(fields[1])) {
      throw Error(ErrorKind::DecodeError, "bad tags line '" + std::string(line) + "'");
    }
    std::uint64_t rev = require_u64(fields[2], "revision");
    if (fields[0] == "tag") {
      db.tags[fields[1]] = rev;
    } else if (fields[0] == "snapshot") {
      if (!db.snapshots.emplace(fields[1], rev).second) {
        throw Error(ErrorKind::DecodeError, "duplicate snapshot " + fields[1]);
      }
    } else {
      throw Error(ErrorKind::DecodeError, "bad tags line '" + std::string(line) + "'");
    }
  }
  return db;
}

Repository::Repository(fs::path root) : root_(root), store_(root) {}

Repository Repository::create(fs::path root) {
  std::error_code ec;
  fs::create_directories(root / "manifests", ec);
  if (ec) throw Error(ErrorKind::StoreError, "cannot create " + root.string());
  Repository repo(std::move(root));
  if (!fs::exists(repo.root_ / "tags")) repo.write_tags({});
  return repo;
}

Repository Repository::open(fs::path root) {
  std::error_code ec;
  if (!fs::is_directory(root / "manifests", ec) || !fs::is_directory(root / "data", ec)) {
    throw Error(ErrorKind::NotFound, "no repository at " + root.string());
  }
  return Repository(std::move(root));
}

std::string Repository::name() const {
  if (auto latest = latest_revision()) return manifest(*latest).repo_name;
  fs::path p = root_;
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::vector<std::uint64_t> Repository::revisions() const {
  std::vector<std::uint64_t> revs;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root_ / "manifests", ec)) {
    if (auto v = parse_u64(entry.path().filename().string()); v && *v > 0) {
      revs.push_back(*v);
    }
  }
  std::sort(revs.begin(), revs.end());
  return revs;
}

std::optional<std::uint64_t> Repository::latest_revision() const {
  auto revs = revisions();
  if (revs.empty()) return std::nullopt;
  return revs.back();
}

bool Repository::has_revision(std::uint64_t revision) const {
  std::error_code ec;
  return fs::is_regular_file(root_ / "manifests" / std::to_string(revision), ec);
}

Bytes Repository::manifest_bytes(std::uint64_t revision) const {
  try {
    return read_file(root_ / "manifests" / std::to_string(revision));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotFound) {
      throw Error(ErrorKind::NotFound, "revision " + std::to_string(revision));
    }
    throw;
  }
}

Manifest Repository::manifest(std::uint64_t revision) const {
  return decode_manifest(manifest_bytes(revision));
}

void Repository::write_manifest(const Manifest& m) {
  if (has_revision(m.revision)) {
    throw Error(ErrorKind::InvariantError,
                "revision " + std::to_string(m.revision) + " already published");
  }
  if (!store_.contains(m.root_catalog)) {
    throw Error(ErrorKind::InvariantError, "root catalog " + m.root_catalog.hex() + " not stored");
  }
  write_file_atomic(root_ / "manifests" / std::to_string(m.revision), encode_manifest(m));
}

TagDatabase Repository::tags() const {
  try {
    return decode_tags(read_file(root_ / "tags"));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotFound) return {};
    throw;
  }
}

void Repository::write_tags(const TagDatabase& db) {
  for (const auto& group : {db.tags, db.snapshots}) {
    for (const auto& [name, rev] : group) {
      if (!is_valid_label(name)) throw Error(ErrorKind::InvalidArgument, "bad name '" + name + "'");
      if (!has_revision(rev)) {
        throw Error(ErrorKind::InvariantError,
                    name + " points at unpublished revision " + std::to_string(rev));
      }
    }
  }
  write_file_atomic(root_ / "tags", encode_tags(db));
}

Catalog Repository::catalog(const Manifest& m) const {
  return decode_catalog(store_.get(m.root_catalog));
}

FileLock Repository::lock() const { return FileLock(root_ / ".lock"); }

std::optional<std::uint64_t> resolve_selector(const TagDatabase& db,
                                              const std::vector<std::uint64_t>& revisions,
                                              std::string_view selector) {
  auto known = [&](std::uint64_t rev) -> std::optional<std::uint64_t> {
    if (std::binary_search(revisions.begin(), revisions.end(), rev)) return rev;
    return std::nullopt;
  };
  if (selector == "newest") {
    if (revisions.empty()) return std::nullopt;
    return revisions.back();
  }
  if (!selector.empty() && selector.front() == '@') {
    auto rev = parse_u64(selector.substr(1));
    return rev ? known(*rev) : std::nullopt;
  }
  std::string key(selector);
  if (auto it = db.tags.find(key); it != db.tags.end()) return known(it->second);
  if (auto it = db.snapshots.find(key); it != db.snapshots.end()) return known(it->second);
  return std::nullopt;
}

}  // namespace ucvm
