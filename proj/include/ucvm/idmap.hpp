#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>

namespace ucvm {

/// Snapshot-side id -> machine-local id. Identity entries are never stored.
struct IdMap {
  std::map<std::uint32_t, std::uint32_t> uid_map;
  std::map<std::uint32_t, std::uint32_t> gid_map;

  bool empty() const { return uid_map.empty() && gid_map.empty(); }
  /// No two sources share a target, in either map.
  bool injective() const;
  bool operator==(const IdMap&) const = default;
};

struct Owner {
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  bool operator==(const Owner&) const = default;
};

/// Translates mapped ids; unmapped ids pass through.
Owner apply_idmap(Owner owner, const IdMap& map);

/// Lines `uid <from> <to>` / `gid <from> <to>`.
std::string encode_idmap(const IdMap& map);
IdMap decode_idmap(std::string_view text);

}  // namespace ucvm
