#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ucvm/idmap.hpp"

namespace ucvm {

struct UserRecord {
  std::string name;
  std::string password_hash;
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::string gecos;
  std::string home;
  std::string shell;
  bool operator==(const UserRecord&) const = default;
};

struct GroupRecord {
  std::string name;
  std::string password_hash;
  std::uint32_t gid = 0;
  std::vector<std::string> members;
  bool operator==(const GroupRecord&) const = default;
};

/// /etc/passwd plus /etc/group. Names and ids are unique per table.
struct AccountDb {
  std::vector<UserRecord> users;
  std::vector<GroupRecord> groups;

  /// Throws InvariantError on a duplicate name or id.
  void validate() const;
  bool operator==(const AccountDb&) const = default;
};

/// passwd(5) / group(5) line formats. DecodeError on malformed lines.
std::vector<UserRecord> parse_passwd(std::string_view text);
std::string format_passwd(const std::vector<UserRecord>& users);
std::vector<GroupRecord> parse_group(std::string_view text);
std::string format_group(const std::vector<GroupRecord>& groups);

/// First id handed out when an incoming id collides with a local one.
inline constexpr std::uint32_t kFirstRemapId = 1000;

/// Record-by-record merge of the machine's accounts with a new snapshot's.
///
///  - users/groups in both: the local record wins (password, ids, fields);
///    group members become the union, local order first. A differing
///    incoming id maps to the local id.
///  - local-only records are kept verbatim.
///  - incoming-only records are appended; an id already used locally is
///    replaced by the smallest unused id >= kFirstRemapId and mapped.
///    Incoming-only users also get their primary gid translated.
///
/// Local ids never change. The returned map is injective.
std::pair<AccountDb, IdMap> merge_accounts(const AccountDb& local, const AccountDb& incoming);

}  // namespace ucvm
