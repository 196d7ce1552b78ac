#include "ucvm/object_store.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <memory>

#include "ucvm/error.hpp"

namespace ucvm {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error(ErrorKind::InvariantError, "SHA-256 computation failed");
  }
  return to_hex(std::string_view(reinterpret_cast<const char*>(digest), len));
}

ObjectId ObjectId::of(std::string_view bytes) { return ObjectId(sha256_hex(bytes)); }

bool ObjectId::is_valid_hex(std::string_view hex) {
  if (hex.size() != 64) return false;
  for (char c : hex) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

ObjectId ObjectId::parse(std::string_view hex) {
  if (!is_valid_hex(hex)) {
    throw Error(ErrorKind::DecodeError, "malformed object id '" + std::string(hex) + "'");
  }
  return ObjectId(std::string(hex));
}

Bytes deflate_bytes(std::string_view raw) {
  z_stream zs{};
  if (deflateInit(&zs, Z_DEFAULT_COMPRESSION) != Z_OK) {
    throw Error(ErrorKind::StoreError, "deflateInit failed");
  }
  Bytes out;
  out.resize(deflateBound(&zs, static_cast<uLong>(raw.size())));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(raw.data()));
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(ErrorKind::StoreError, "deflate failed");
  out.resize(zs.total_out);
  return out;
}

Bytes inflate_bytes(std::string_view compressed) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw Error(ErrorKind::DecodeError, "inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  Bytes out;
  char buf[64 * 1024];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorKind::DecodeError, "corrupt deflate stream");
    }
    out.append(buf, sizeof(buf) - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw Error(ErrorKind::DecodeError, "truncated deflate stream");
    }
  }
  bool trailing = zs.avail_in != 0;
  inflateEnd(&zs);
  if (trailing) throw Error(ErrorKind::DecodeError, "trailing bytes after deflate stream");
  return out;
}

Bytes decode_verified(const ObjectId& id, std::string_view compressed) {
  Bytes raw;
  try {
    raw = inflate_bytes(compressed);
  } catch (const Error& e) {
    throw Error(ErrorKind::IntegrityError, id.hex() + ": " + e.what());
  }
  if (ObjectId::of(raw) != id) {
    throw Error(ErrorKind::IntegrityError, id.hex() + ": digest mismatch");
  }
  return raw;
}

ObjectStore::ObjectStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "data", ec);
  if (ec) throw Error(ErrorKind::StoreError, "cannot create " + (root_ / "data").string());
}

fs::path ObjectStore::object_path(const ObjectId& id) const {
  return root_ / "data" / std::string(id.prefix()) / std::string(id.suffix());
}

ObjectId ObjectStore::put(std::string_view bytes) {
  ObjectId id = ObjectId::of(bytes);
  if (contains(id)) return id;
  fs::path path = object_path(id);
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  try {
    write_file_atomic(path, deflate_bytes(bytes));
  } catch (const Error& e) {
    throw Error(ErrorKind::StoreError, e.what());
  }
  return id;
}

void ObjectStore::put_compressed(const ObjectId& id, std::string_view compressed) {
  decode_verified(id, compressed);
  fs::path path = object_path(id);
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  try {
    write_file_atomic(path, compressed);
  } catch (const Error& e) {
    throw Error(ErrorKind::StoreError, e.what());
  }
}

Bytes ObjectStore::get(const ObjectId& id) const {
  return decode_verified(id, get_compressed(id));
}

Bytes ObjectStore::get_compressed(const ObjectId& id) const {
  try {
    return read_file(object_path(id));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotFound) throw Error(ErrorKind::NotFound, "object " + id.hex());
    throw;
  }
}

bool ObjectStore::contains(const ObjectId& id) const {
  std::error_code ec;
  return fs::is_regular_file(object_path(id), ec);
}

bool ObjectStore::remove(const ObjectId& id) {
  std::error_code ec;
  return fs::remove(object_path(id), ec);
}

std::uintmax_t ObjectStore::stored_size(const ObjectId& id) const {
  std::error_code ec;
  auto size = fs::file_size(object_path(id), ec);
  if (ec) throw Error(ErrorKind::NotFound, "object " + id.hex());
  return size;
}

std::vector<ObjectId> ObjectStore::list() const {
  std::vector<ObjectId> ids;
  std::error_code ec;
  for (const auto& bucket : fs::directory_iterator(root_ / "data", ec)) {
    if (!bucket.is_directory()) continue;
    std::string prefix = bucket.path().filename().string();
    for (const auto& obj : fs::directory_iterator(bucket.path(), ec)) {
      std::string hex = prefix + obj.path().filename().string();
      if (obj.is_regular_file() && ObjectId::is_valid_hex(hex)) {
        ids.push_back(ObjectId::parse(hex));
      }
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::size_t ObjectStore::object_count() const { return list().size(); }

std::uintmax_t ObjectStore::total_stored_bytes() const {
  std::uintmax_t total = 0;
  for (const auto& id : list()) total += stored_size(id);
  return total;
}

ObjectStore::FsckReport ObjectStore::fsck() const {
  FsckReport report;
  std::error_code ec;
  for (const auto& bucket : fs::directory_iterator(root_ / "data", ec)) {
    if (!bucket.is_directory()) continue;
    std::string prefix = bucket.path().filename().string();
    for (const auto& obj : fs::directory_iterator(bucket.path(), ec)) {
      std::string rel = "data/" + prefix + "/" + obj.path().filename().string();
      std::string hex = prefix + obj.path().filename().string();
      if (obj.path().filename().string().find(".tmp.") != std::string::npos) {
        continue;  // interrupted write, never visible under an object name
      }
      ++report.checked;
      if (!ObjectId::is_valid_hex(hex)) {
        report.errors.emplace_back(rel, "not an object name");
        continue;
      }
      try {
        decode_verified(ObjectId::parse(hex), read_file(obj.path()));
      } catch (const Error& e) {
        report.errors.emplace_back(rel, e.what());
      }
    }
  }
  std::sort(report.errors.begin(), report.errors.end());
  return report;
}

}  // namespace ucvm
