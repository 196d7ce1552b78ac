#include "ucvm/catalog.hpp"

#include <charconv>
#include <cstdio>

#include "ucvm/error.hpp"

namespace ucvm {

namespace {

constexpr std::string_view kCatalogHeader = "ucvm-catalog 1";

std::string escape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (++i == s.size()) throw Error(ErrorKind::DecodeError, "dangling escape");
    switch (s[i]) {
      case '\\': out += '\\'; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      default: throw Error(ErrorKind::DecodeError, "unknown escape");
    }
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, int base, std::string_view what) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value, base);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw Error(ErrorKind::DecodeError, "bad " + std::string(what) + " '" +
                                            std::string(field) + "'");
  }
  return value;
}

char kind_code(EntryKind kind) {
  switch (kind) {
    case EntryKind::File: return 'f';
    case EntryKind::Dir: return 'd';
    case EntryKind::Symlink: return 'l';
  }
  return '?';
}

void check_entry(std::string_view path, const Dirent& e) {
  if (path != "/") {
    if (e.name.empty() || e.name == "." || e.name == ".." ||
        e.name.find('/') != std::string::npos) {
      throw Error(ErrorKind::InvariantError, "bad entry name at " + std::string(path));
    }
  }
  if (e.mode > 07777) {
    throw Error(ErrorKind::InvariantError, "mode out of range at " + std::string(path));
  }
  switch (e.kind) {
    case EntryKind::File:
      if (!e.content) {
        throw Error(ErrorKind::InvariantError, "file without content at " + std::string(path));
      }
      if (!e.target.empty()) {
        throw Error(ErrorKind::InvariantError, "file with target at " + std::string(path));
      }
      break;
    case EntryKind::Dir:
      if (e.content || e.size != 0 || !e.target.empty()) {
        throw Error(ErrorKind::InvariantError, "directory with payload at " + std::string(path));
      }
      break;
    case EntryKind::Symlink:
      if (e.content || e.target.empty()) {
        throw Error(ErrorKind::InvariantError, "bad symlink at " + std::string(path));
      }
      break;
  }
}

}  // namespace

std::string_view to_string(EntryKind kind) {
  switch (kind) {
    case EntryKind::File: return "file";
    case EntryKind::Dir: return "dir";
    case EntryKind::Symlink: return "symlink";
  }
  return "unknown";
}

Dirent Dirent::directory(std::uint16_t mode, std::uint32_t uid, std::uint32_t gid) {
  Dirent d;
  d.kind = EntryKind::Dir;
  d.mode = mode;
  d.uid = uid;
  d.gid = gid;
  return d;
}

Dirent Dirent::file(const ObjectId& content, std::uint64_t size, std::uint16_t mode,
                    std::uint32_t uid, std::uint32_t gid) {
  Dirent d;
  d.kind = EntryKind::File;
  d.mode = mode;
  d.uid = uid;
  d.gid = gid;
  d.size = size;
  d.content = content;
  return d;
}

Dirent Dirent::symlink(std::string target, std::uint32_t uid, std::uint32_t gid) {
  Dirent d;
  d.kind = EntryKind::Symlink;
  d.mode = 0777;
  d.uid = uid;
  d.gid = gid;
  d.size = target.size();
  d.target = std::move(target);
  return d;
}

bool same_content(const Dirent& a, const Dirent& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case EntryKind::File: return a.content == b.content;
    case EntryKind::Symlink: return a.target == b.target;
    case EntryKind::Dir: return true;
  }
  return false;
}

Catalog::Catalog() { entries_.emplace("/", Dirent::directory()); }

void Catalog::insert(std::string_view path, Dirent entry) {
  require_canonical_path(path);
  entry.name = base_name(path);
  if (path == "/" && entry.kind != EntryKind::Dir) {
    throw Error(ErrorKind::InvariantError, "root must be a directory");
  }
  check_entry(path, entry);
  auto it = entries_.find(path);
  if (it != entries_.end()) {
    it->second = std::move(entry);
  } else {
    entries_.emplace(std::string(path), std::move(entry));
  }
}

bool Catalog::erase(std::string_view path) {
  if (path == "/") return false;
  auto it = entries_.find(path);
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

const Dirent* Catalog::find(std::string_view path) const {
  auto it = entries_.find(path);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> Catalog::children(std::string_view dir) const {
  std::vector<std::string> names;
  std::string prefix(dir);
  if (prefix != "/") prefix += '/';
  for (auto it = entries_.lower_bound(prefix); it != entries_.end(); ++it) {
    const std::string& path = it->first;
    if (path.compare(0, prefix.size(), prefix) != 0) break;
    if (path.size() == prefix.size()) continue;  // "/" itself
    if (path.find('/', prefix.size()) == std::string::npos) {
      names.push_back(path.substr(prefix.size()));
    }
  }
  return names;
}

void Catalog::validate() const {
  auto root = entries_.find("/");
  if (root == entries_.end() || root->second.kind != EntryKind::Dir) {
    throw Error(ErrorKind::InvariantError, "catalog lacks a root directory");
  }
  for (const auto& [path, entry] : entries_) {
    check_entry(path, entry);
    if (path == "/") continue;
    const Dirent* parent = find(parent_path(path));
    if (parent == nullptr || parent->kind != EntryKind::Dir) {
      throw Error(ErrorKind::InvariantError, "parent of " + path + " is not a directory");
    }
  }
}

Bytes encode_catalog(const Catalog& catalog) {
  catalog.validate();
  std::string out(kCatalogHeader);
  out += '\n';
  for (const auto& [path, e] : catalog.entries()) {
    char mode[8];
    std::snprintf(mode, sizeof(mode), "%04o", static_cast<unsigned>(e.mode));
    out += escape_field(path);
    out += '\t';
    out += kind_code(e.kind);
    out += '\t';
    out += mode;
    out += '\t' + std::to_string(e.uid);
    out += '\t' + std::to_string(e.gid);
    out += '\t' + std::to_string(e.size);
    out += '\t';
    out += e.content ? e.content->hex() : "-";
    out += '\t';
    out += e.kind == EntryKind::Symlink ? escape_field(e.target) : "-";
    out += '\n';
  }
  return out;
}

Catalog decode_catalog(std::string_view bytes) {
  if (bytes.empty() || bytes.back() != '\n') {
    throw Error(ErrorKind::DecodeError, "catalog must end with a newline");
  }
  bytes.remove_suffix(1);
  auto lines = split(bytes, '\n');
  if (lines.empty() || lines.front() != kCatalogHeader) {
    throw Error(ErrorKind::DecodeError, "missing catalog header");
  }
  Catalog catalog;
  std::string previous;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto fields = split(lines[i], '\t');
    if (fields.size() != 8) {
      throw Error(ErrorKind::DecodeError, "line " + std::to_string(i + 1) +
                                              ": expected 8 fields");
    }
    std::string path = unescape_field(fields[0]);
    if (!is_canonical_path(path)) {
      throw Error(ErrorKind::DecodeError, "non-canonical path '" + path + "'");
    }
    if (i > 1 && path <= previous) {
      throw Error(ErrorKind::DecodeError, "entries out of order at '" + path + "'");
    }
    if (i == 1 && path != "/") {
      throw Error(ErrorKind::DecodeError, "first entry must be the root");
    }
    previous = path;

    Dirent e;
    if (fields[1].size() != 1) throw Error(ErrorKind::DecodeError, "bad kind");
    switch (fields[1][0]) {
      case 'f': e.kind = EntryKind::File; break;
      case 'd': e.kind = EntryKind::Dir; break;
      case 'l': e.kind = EntryKind::Symlink; break;
      default: throw Error(ErrorKind::DecodeError, "bad kind '" + fields[1] + "'");
    }
    e.mode = parse_number<std::uint16_t>(fields[2], 8, "mode");
    e.uid = parse_number<std::uint32_t>(fields[3], 10, "uid");
    e.gid = parse_number<std::uint32_t>(fields[4], 10, "gid");
    e.size = parse_number<std::uint64_t>(fields[5], 10, "size");
    if (fields[6] != "-") e.content = ObjectId::parse(fields[6]);
    if (e.kind == EntryKind::Symlink) {
      e.target = unescape_field(fields[7]);
    } else if (fields[7] != "-") {
      throw Error(ErrorKind::DecodeError, "target on non-symlink '" + path + "'");
    }
    catalog.insert(path, std::move(e));
  }
  if (lines.size() < 2) throw Error(ErrorKind::DecodeError, "catalog has no root entry");
  catalog.validate();
  return catalog;
}

bool is_runtime_file(std::string_view path) {
  for (auto p : kRuntimeFiles) {
    if (p == path) return true;
  }
  return false;
}

void TreeDigest::add(std::string_view path, EntryKind kind, std::uint16_t mode,
                     std::uint32_t uid, std::uint32_t gid, std::uint64_t size,
                     std::string_view content_hex, std::string_view target) {
  char mode_buf[8];
  std::snprintf(mode_buf, sizeof(mode_buf), "%04o", static_cast<unsigned>(mode));
  records_ += escape_field(path);
  records_ += '\t';
  records_ += kind_code(kind);
  records_ += '\t';
  records_ += mode_buf;
  records_ += '\t' + std::to_string(uid) + '\t' + std::to_string(gid) + '\t' +
              std::to_string(size) + '\t';
  records_ += content_hex.empty() ? "-" : content_hex;
  records_ += '\t';
  records_ += target.empty() ? "-" : escape_field(target);
  records_ += '\n';
}

std::string TreeDigest::finish() const { return sha256_hex(records_); }

std::string catalog_tree_digest(const Catalog& catalog) {
  TreeDigest digest;
  for (const auto& [path, e] : catalog.entries()) {
    if (is_runtime_file(path)) continue;
    digest.add(path, e.kind, e.mode, e.uid, e.gid, e.size,
               e.content ? std::string_view(e.content->hex()) : std::string_view(),
               e.target);
  }
  return digest.finish();
}

}  // namespace ucvm
