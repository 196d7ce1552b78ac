#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ucvm/util.hpp"

namespace ucvm {

/// SHA-256 digest of an object's uncompressed bytes, as 64 lowercase hex
/// characters. A default-constructed id is all zeros and names no content.
class ObjectId {
 public:
  ObjectId() : hex_(64, '0') {}

  static ObjectId of(std::string_view bytes);

  /// Throws DecodeError unless `hex` is 64 chars of [0-9a-f].
  static ObjectId parse(std::string_view hex);
  static bool is_valid_hex(std::string_view hex);

  const std::string& hex() const { return hex_; }
  /// Fan-out directory ("ab") and file name (remaining 62 chars).
  std::string_view prefix() const { return std::string_view(hex_).substr(0, 2); }
  std::string_view suffix() const { return std::string_view(hex_).substr(2); }

  auto operator<=>(const ObjectId&) const = default;

 private:
  explicit ObjectId(std::string hex) : hex_(std::move(hex)) {}
  std::string hex_;
};

/// Raw SHA-256 helper shared by object ids and tree digests.
std::string sha256_hex(std::string_view bytes);

Bytes deflate_bytes(std::string_view raw);
/// Throws DecodeError on a malformed stream.
Bytes inflate_bytes(std::string_view compressed);

/// Inflates `compressed` and checks it hashes to `id`; any failure is an
/// IntegrityError.
Bytes decode_verified(const ObjectId& id, std::string_view compressed);

/// DEFLATE-compressed blobs under `<root>/data/xx/<62 hex>`.
///
/// Writes go through write-then-rename, so concurrent readers only ever see
/// complete objects and concurrent writers of the same object are harmless.
class ObjectStore {
 public:
  explicit ObjectStore(fs::path root);

  /// Idempotent: re-putting existing content does not rewrite it.
  ObjectId put(std::string_view bytes);
  /// Stores already-compressed bytes after verifying they decode to `id`.
  void put_compressed(const ObjectId& id, std::string_view compressed);

  /// NotFound, or IntegrityError when the stored bytes fail the digest check.
  Bytes get(const ObjectId& id) const;
  /// The stored (compressed) bytes, unverified. NotFound if absent.
  Bytes get_compressed(const ObjectId& id) const;

  bool contains(const ObjectId& id) const;
  bool remove(const ObjectId& id);
  std::uintmax_t stored_size(const ObjectId& id) const;
  std::vector<ObjectId> list() const;
  std::size_t object_count() const;
  /// Total compressed bytes on disk.
  std::uintmax_t total_stored_bytes() const;

  fs::path object_path(const ObjectId& id) const;
  const fs::path& root() const { return root_; }

  struct FsckReport {
    std::size_t checked = 0;
    /// (relative path, reason)
    std::vector<std::pair<std::string, std::string>> errors;
  };
  /// Re-hashes every object.
  FsckReport fsck() const;

 private:
  fs::path root_;
};

}  // namespace ucvm

template <>
struct std::hash<ucvm::ObjectId> {
  std::size_t operator()(const ucvm::ObjectId& id) const noexcept {
    return std::hash<std::string>{}(id.hex());
  }
};
