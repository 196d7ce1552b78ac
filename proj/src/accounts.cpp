#include "ucvm/accounts.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

#include "ucvm/error.hpp"
#include "ucvm/util.hpp"

namespace ucvm {

bool IdMap::injective() const {
  for (const auto* m : {&uid_map, &gid_map}) {
    std::set<std::uint32_t> targets;
    for (const auto& [from, to] : *m) {
      if (from == to || !targets.insert(to).second) return false;
    }
  }
  return true;
}

Owner apply_idmap(Owner owner, const IdMap& map) {
  if (auto it = map.uid_map.find(owner.uid); it != map.uid_map.end()) owner.uid = it->second;
  if (auto it = map.gid_map.find(owner.gid); it != map.gid_map.end()) owner.gid = it->second;
  return owner;
}

namespace {

std::uint32_t parse_id(std::string_view s) {
  std::uint32_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::DecodeError, "bad id '" + std::string(s) + "'");
  }
  return v;
}

std::uint32_t smallest_unused(const std::set<std::uint32_t>& used) {
  std::uint32_t id = kFirstRemapId;
  while (used.count(id) != 0) ++id;
  return id;
}

}  // namespace

std::string encode_idmap(const IdMap& map) {
  std::string out;
  for (const auto& [from, to] : map.uid_map) {
    out += "uid " + std::to_string(from) + " " + std::to_string(to) + "\n";
  }
  for (const auto& [from, to] : map.gid_map) {
    out += "gid " + std::to_string(from) + " " + std::to_string(to) + "\n";
  }
  return out;
}

IdMap decode_idmap(std::string_view text) {
  IdMap map;
  for (const auto& raw : split_lines(text)) {
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto f = split(line, ' ');
    if (f.size() != 3 || (f[0] != "uid" && f[0] != "gid")) {
      throw Error(ErrorKind::DecodeError, "bad idmap line '" + std::string(line) + "'");
    }
    auto& m = f[0] == "uid" ? map.uid_map : map.gid_map;
    std::uint32_t from = parse_id(f[1]);
    std::uint32_t to = parse_id(f[2]);
    if (from != to) m[from] = to;
  }
  return map;
}

void AccountDb::validate() const {
  std::set<std::string> names;
  std::set<std::uint32_t> ids;
  for (const auto& u : users) {
    if (!names.insert(u.name).second) throw Error(ErrorKind::InvariantError, "duplicate user " + u.name);
    if (!ids.insert(u.uid).second) {
      throw Error(ErrorKind::InvariantError, "duplicate uid " + std::to_string(u.uid));
    }
  }
  names.clear();
  ids.clear();
  for (const auto& g : groups) {
    if (!names.insert(g.name).second) throw Error(ErrorKind::InvariantError, "duplicate group " + g.name);
    if (!ids.insert(g.gid).second) {
      throw Error(ErrorKind::InvariantError, "duplicate gid " + std::to_string(g.gid));
    }
  }
}

std::vector<UserRecord> parse_passwd(std::string_view text) {
  std::vector<UserRecord> users;
  for (const auto& raw : split_lines(text)) {
    if (trim(raw).empty() || raw.front() == '#') continue;
    auto f = split(raw, ':');
    if (f.size() != 7 || f[0].empty()) {
      throw Error(ErrorKind::DecodeError, "bad passwd line '" + raw + "'");
    }
    users.push_back({f[0], f[1], parse_id(f[2]), parse_id(f[3]), f[4], f[5], f[6]});
  }
  return users;
}

std::string format_passwd(const std::vector<UserRecord>& users) {
  std::string out;
  for (const auto& u : users) {
    out += u.name + ":" + u.password_hash + ":" + std::to_string(u.uid) + ":" +
           std::to_string(u.gid) + ":" + u.gecos + ":" + u.home + ":" + u.shell + "\n";
  }
  return out;
}

std::vector<GroupRecord> parse_group(std::string_view text) {
  std::vector<GroupRecord> groups;
  for (const auto& raw : split_lines(text)) {
    if (trim(raw).empty() || raw.front() == '#') continue;
    auto f = split(raw, ':');
    if (f.size() != 4 || f[0].empty()) {
      throw Error(ErrorKind::DecodeError, "bad group line '" + raw + "'");
    }
    GroupRecord g{f[0], f[1], parse_id(f[2]), {}};
    if (!f[3].empty()) g.members = split(f[3], ',');
    groups.push_back(std::move(g));
  }
  return groups;
}

std::string format_group(const std::vector<GroupRecord>& groups) {
  std::string out;
  for (const auto& g : groups) {
    out += g.name + ":" + g.password_hash + ":" + std::to_string(g.gid) + ":";
    for (std::size_t i = 0; i < g.members.size(); ++i) {
      if (i != 0) out += ',';
      out += g.members[i];
    }
    out += '\n';
  }
  return out;
}

namespace {

/// Shared merge skeleton for users and groups. `id_of` projects the id
/// field; `merge_common` folds an incoming record into its local twin.
template <typename Record, typename IdOf, typename MergeCommon, typename FixIncoming>
std::vector<Record> merge_table(const std::vector<Record>& local, const std::vector<Record>& incoming,
                                std::map<std::uint32_t, std::uint32_t>& map, IdOf id_of,
                                MergeCommon merge_common, FixIncoming fix_incoming) {
  std::vector<Record> out = local;
  std::map<std::string, std::size_t> by_name;
  std::set<std::uint32_t> local_ids;
  for (std::size_t i = 0; i < out.size(); ++i) {
    by_name.emplace(out[i].name, i);
    local_ids.insert(id_of(out[i]));
  }

  std::vector<Record> added;
  for (const auto& rec : incoming) {
    auto it = by_name.find(rec.name);
    if (it == by_name.end()) {
      added.push_back(rec);
      continue;
    }
    Record& mine = out[it->second];
    merge_common(mine, rec);
    if (id_of(rec) != id_of(mine)) map[id_of(rec)] = id_of(mine);
  }

  // Ids already taken: every local id and every incoming-only id that can
  // stay as it is. Colliding records draw from what is left, in order.
  std::set<std::uint32_t> used = local_ids;
  for (const auto& rec : added) {
    if (local_ids.count(id_of(rec)) == 0) used.insert(id_of(rec));
  }
  for (auto& rec : added) {
    if (local_ids.count(id_of(rec)) != 0) {
      std::uint32_t fresh = smallest_unused(used);
      used.insert(fresh);
      map[id_of(rec)] = fresh;
      id_of(rec) = fresh;
    }
  }
  for (auto& rec : added) {
    fix_incoming(rec);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

std::pair<AccountDb, IdMap> merge_accounts(const AccountDb& local, const AccountDb& incoming) {
  IdMap map;
  AccountDb merged;
  merged.groups = merge_table(
      local.groups, incoming.groups, map.gid_map,
      [](auto& g) -> auto& { return g.gid; },
      [](GroupRecord& mine, const GroupRecord& theirs) {
        for (const auto& m : theirs.members) {
          if (std::find(mine.members.begin(), mine.members.end(), m) == mine.members.end()) {
            mine.members.push_back(m);
          }
        }
      },
      [](GroupRecord&) {});
  merged.users = merge_table(
      local.users, incoming.users, map.uid_map,
      [](auto& u) -> auto& { return u.uid; },
      [](UserRecord&, const UserRecord&) {},
      [&map](UserRecord& u) {
        if (auto it = map.gid_map.find(u.gid); it != map.gid_map.end()) u.gid = it->second;
      });
  merged.validate();
  return {std::move(merged), std::move(map)};
}

}  // namespace ucvm
