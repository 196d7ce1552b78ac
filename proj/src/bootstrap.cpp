#include "ucvm/bootstrap.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <charconv>

#include "ucvm/error.hpp"

extern char** environ;

namespace ucvm {

namespace {

constexpr std::string_view kBlockBegin = "[ucernvm-begin]";
constexpr std::string_view kBlockEnd = "[ucernvm-end]";

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::string> read_optional(const fs::path& p) {
  try {
    return std::string(trim(read_file(p)));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotFound) return std::nullopt;
    throw;
  }
}

fs::path session_file(const MachineState& m) { return m.dir() / "session"; }

}  // namespace

// --- ScratchDisk / MachineState ------------------------------------------------

ScratchDisk ScratchDisk::initialize(const fs::path& root) {
  std::error_code ec;
  for (const char* sub : {"overlay", "cache", "state"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot initialize scratch at " + root.string());
  }
  write_file_atomic(root / kLabelFile, std::string(kLabel) + "\n");
  return ScratchDisk{root, std::string(kLabel)};
}

bool ScratchDisk::initialized() const {
  std::error_code ec;
  return label == kLabel && fs::is_directory(overlay_dir(), ec) &&
         fs::is_directory(cache_dir(), ec) && fs::is_directory(state_dir(), ec) &&
         fs::exists(root / kLabelFile, ec);
}

MachineState::MachineState(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create machine " + dir_.string());
  if (auto conf = read_optional(dir_ / "machine.conf")) {
    auto kv = parse_key_values(*conf);
    if (auto it = kv.find("scratch"); it != kv.end()) {
      VolumeProbe probe = probe_volume(it->second);
      if (probe.label == ScratchDisk::kLabel) attach(ScratchDisk{probe.path, *probe.label});
    }
  }
}

MachineState::~MachineState() = default;
MachineState::MachineState(MachineState&&) noexcept = default;
MachineState& MachineState::operator=(MachineState&&) noexcept = default;

void MachineState::attach(ScratchDisk scratch) {
  scratch_ = std::move(scratch);
  write_file_atomic(dir_ / "machine.conf", "scratch=" + fs::absolute(scratch_->root).string() + "\n");
  pinned_.reset();
  if (auto pinned = read_optional(scratch_->state_dir() / "pinned-revision")) {
    pinned_ = parse_u64(*pinned);
  }
  ucvm_version_ = read_optional(scratch_->state_dir() / "ucvm-version")
                      .value_or(std::string(kDefaultUcvmVersion));
}

const ScratchDisk& MachineState::require_scratch() const {
  if (!scratch_) throw Error(ErrorKind::InvalidArgument, "machine " + dir_.string() + " has no scratch disk");
  return *scratch_;
}

void MachineState::set_pinned_revision(std::optional<std::uint64_t> revision) {
  fs::path p = require_scratch().state_dir() / "pinned-revision";
  if (revision) {
    write_file_atomic(p, std::to_string(*revision) + "\n");
  } else {
    std::error_code ec;
    fs::remove(p, ec);
  }
  pinned_ = revision;
}

void MachineState::set_ucvm_version(std::string version) {
  write_file_atomic(require_scratch().state_dir() / "ucvm-version", version + "\n");
  ucvm_version_ = std::move(version);
}

void MachineState::set_booted(std::unique_ptr<RootStack> stack) { booted_ = std::move(stack); }

std::unique_ptr<RootStack> MachineState::release_booted() { return std::move(booted_); }

// --- user data / volumes -------------------------------------------------------

Context parse_user_data(std::string_view text) {
  auto lines = split_lines(text);
  std::optional<std::size_t> begin;
  std::optional<std::size_t> end;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = trim(lines[i]);
    if (!begin && line == kBlockBegin) {
      begin = i;
    } else if (begin && line == kBlockEnd) {
      end = i;
      break;
    }
  }
  if (begin && !end) throw Error(ErrorKind::MalformedBlock, "[ucernvm-begin] without [ucernvm-end]");

  std::map<std::string, std::string> kv;
  if (begin) {
    std::string block;
    for (std::size_t i = *begin + 1; i < *end; ++i) block += lines[i] + "\n";
    kv = parse_key_values(block);
  }
  Context ctx;
  auto take = [&](const char* key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto url = take("repo_url");
  auto name = take("repo_name");
  if (!url || url->empty()) throw Error(ErrorKind::MissingRequiredKey, "repo_url");
  if (!name || name->empty()) throw Error(ErrorKind::MissingRequiredKey, "repo_name");
  ctx.repo_url = *url;
  ctx.repo_name = *name;
  if (auto s = take("snapshot"); s && !s->empty()) ctx.snapshot_selector = *s;
  if (auto p = take("proxy"); p && !p->empty()) ctx.proxy = *p;
  if (auto q = take("cache_quota")) {
    auto v = parse_u64(*q);
    if (!v) throw Error(ErrorKind::InvalidArgument, "cache_quota must be a byte count");
    ctx.cache_quota_bytes = *v;
  }
  ctx.extra = std::move(kv);
  return ctx;
}

VolumeProbe probe_volume(const fs::path& path) {
  VolumeProbe probe;
  probe.path = path;
  std::error_code ec;
  if (!fs::exists(path, ec)) {
    probe.empty = true;
    return probe;
  }
  if (auto label = read_optional(path / ScratchDisk::kLabelFile)) probe.label = *label;
  probe.empty = fs::is_directory(path, ec) && fs::directory_iterator(path, ec) == fs::directory_iterator();
  return probe;
}

ScratchDisk discover_scratch(const std::vector<VolumeProbe>& volumes) {
  for (const auto& v : volumes) {
    if (v.label == ScratchDisk::kLabel) return ScratchDisk{v.path, *v.label};
  }
  for (const auto& v : volumes) {
    if (v.empty && !v.label) return ScratchDisk::initialize(v.path);
  }
  throw Error(ErrorKind::NoScratchAvailable, "no labelled or empty volume among " +
                                                 std::to_string(volumes.size()));
}

// --- root stack --------------------------------------------------------------------

RootStack::RootStack(std::unique_ptr<RepoClient> client, std::shared_ptr<const Catalog> catalog,
                     std::unique_ptr<UnionMount> view, Manifest manifest)
    : client_(std::move(client)), catalog_(std::move(catalog)), view_(std::move(view)),
      manifest_(std::move(manifest)) {}

RootStack::~RootStack() = default;

std::string BootReport::encode() const {
  std::string out;
  out += "revision=" + std::to_string(revision) + "\n";
  out += "snapshot_name=" + snapshot_name + "\n";
  out += "ucvm_version=" + ucvm_version + "\n";
  out += std::string("adopted_update=") + (adopted_update ? "yes" : "no") + "\n";
  out += std::string("manifest_from_cache=") + (manifest_from_cache ? "yes" : "no") + "\n";
  out += "bytes_fetched=" + std::to_string(bytes_fetched) + "\n";
  out += "objects_fetched=" + std::to_string(objects_fetched) + "\n";
  out += "requests=" + std::to_string(requests) + "\n";
  out += "pinned=" + std::to_string(pinned) + "\n";
  for (const auto& p : unknown_pins) out += "unknown_pin=" + p + "\n";
  out += "hook_status=" + hook_status + "\n";
  out += std::string("merged=") + (merge ? "yes" : "no") + "\n";
  return out;
}

namespace {

struct SessionInfo {
  std::string repo_url;
  std::string repo_name;
  std::optional<std::string> proxy;
  std::optional<std::uint64_t> cache_quota;
  Manifest manifest;
};

void write_session(const MachineState& m, const Context& ctx, const Manifest& manifest,
                   const TransferStats& stats) {
  std::string out;
  out += "repo_url=" + ctx.repo_url + "\n";
  out += "repo_name=" + ctx.repo_name + "\n";
  if (ctx.proxy) out += "proxy=" + *ctx.proxy + "\n";
  if (ctx.cache_quota_bytes) out += "cache_quota=" + std::to_string(*ctx.cache_quota_bytes) + "\n";
  out += "revision=" + std::to_string(manifest.revision) + "\n";
  out += "bytes_fetched=" + std::to_string(stats.bytes_downloaded) + "\n";
  out += "objects_fetched=" + std::to_string(stats.objects_fetched) + "\n";
  out += "requests=" + std::to_string(stats.requests) + "\n";
  write_file_atomic(session_file(m), out);
  write_file_atomic(m.dir() / "session.manifest", encode_manifest(manifest));
}

std::optional<SessionInfo> read_session(const MachineState& m) {
  auto text = read_optional(session_file(m));
  if (!text) return std::nullopt;
  auto kv = parse_key_values(*text);
  SessionInfo s;
  s.repo_url = kv["repo_url"];
  s.repo_name = kv["repo_name"];
  if (kv.count("proxy")) s.proxy = kv["proxy"];
  if (kv.count("cache_quota")) s.cache_quota = parse_u64(kv["cache_quota"]);
  s.manifest = decode_manifest(read_file(m.dir() / "session.manifest"));
  return s;
}

IdMap load_idmap(const ScratchDisk& scratch) {
  auto text = read_optional(scratch.state_dir() / "idmap");
  return text ? decode_idmap(*text) : IdMap{};
}

std::unique_ptr<RootStack> assemble(const ScratchDisk& scratch, std::unique_ptr<RepoClient> client,
                                    const Manifest& manifest) {
  auto catalog = std::make_shared<const Catalog>(
      decode_catalog(client->fetch_object(manifest.root_catalog)));
  RepoClient* raw = client.get();
  auto view = std::make_unique<UnionMount>(
      catalog, [raw](const ObjectId& id) { return raw->fetch_object(id); }, scratch.overlay_dir(),
      load_idmap(scratch));
  return std::make_unique<RootStack>(std::move(client), std::move(catalog), std::move(view), manifest);
}

std::string run_hook(const Bytes& script, const MachineState& machine, const RootStack& stack,
                     const BootOptions& options) {
  fs::path file = machine.require_scratch().state_dir() / "bootstrap-hook.sh";
  write_file_atomic(file, script);

  std::vector<std::string> env_storage;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) env_storage.emplace_back(*e);
  env_storage.push_back("UCVM_ROOT_RW=" + fs::absolute(stack.rw_projection()).string());
  env_storage.push_back("UCVM_MACHINE=" + fs::absolute(machine.dir()).string());
  env_storage.push_back("UCVM_REVISION=" + std::to_string(stack.mounted_manifest().revision));
  std::vector<char*> envp;
  for (auto& s : env_storage) envp.push_back(s.data());
  envp.push_back(nullptr);

  std::string shell = options.hook_shell;
  std::string path = file.string();
  char* argv[] = {shell.data(), path.data(), nullptr};
  pid_t pid = 0;
  if (::posix_spawn(&pid, shell.c_str(), nullptr, nullptr, argv, envp.data()) != 0) {
    return "failed:spawn";
  }
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status) && WEXITSTATUS(status) == 0) return "ok";
  if (WIFEXITED(status)) return "failed:" + std::to_string(WEXITSTATUS(status));
  return "failed:signal";
}

struct MountedRecord {
  std::uint64_t revision;
  ObjectId root_catalog;
};

std::optional<MountedRecord> read_mounted(const ScratchDisk& scratch) {
  auto text = read_optional(scratch.state_dir() / "mounted");
  if (!text) return std::nullopt;
  auto kv = parse_key_values(*text);
  auto rev = parse_u64(kv["revision"]);
  if (!rev || !ObjectId::is_valid_hex(kv["root_catalog"])) return std::nullopt;
  return MountedRecord{*rev, ObjectId::parse(kv["root_catalog"])};
}

void write_mounted(const ScratchDisk& scratch, const Manifest& m) {
  write_file_atomic(scratch.state_dir() / "mounted", "revision=" + std::to_string(m.revision) +
                                                         "\nroot_catalog=" + m.root_catalog.hex() + "\n");
}

ClientOptions client_options(const BootOptions& options, const std::optional<std::string>& proxy) {
  ClientOptions co = options.client;
  if (proxy) co.proxy = proxy;
  return co;
}

}  // namespace

BootReport boot(MachineState& machine, const Context& context, const BootOptions& options) {
  if (machine.booted() != nullptr) shutdown(machine);
  const ScratchDisk& scratch = machine.require_scratch();
  BootReport report;

  // (1) A staged early-userspace update takes over before anything else.
  if (auto staged = check_staged(scratch)) {
    machine.set_ucvm_version(staged->new_ucvm_version);
    report.adopted_update = true;
  }
  report.ucvm_version = machine.ucvm_version();

  // (2) Snapshot selection: the pin wins over the context.
  auto cache = std::make_shared<CacheManager>(
      scratch.cache_dir(), context.cache_quota_bytes.value_or(CacheManager::kDefaultQuota));
  auto client = std::make_unique<RepoClient>(context.repo_url, context.repo_name, cache,
                                             client_options(options, context.proxy));
  const std::string selector = machine.pinned_revision()
                                   ? "@" + std::to_string(*machine.pinned_revision())
                                   : context.snapshot_selector;
  auto fetched = client->fetch_manifest(selector);
  const Manifest& manifest = fetched.manifest;
  report.manifest_from_cache = fetched.from_cache;
  report.revision = manifest.revision;
  report.snapshot_name = manifest.snapshot_name;
  if (!machine.pinned_revision()) machine.set_pinned_revision(manifest.revision);

  Bytes catalog_bytes = client->fetch_object(manifest.root_catalog);
  cache->pin(manifest.root_catalog);
  Catalog new_catalog = decode_catalog(catalog_bytes);

  auto previous = read_mounted(scratch);
  if (previous && previous->revision != manifest.revision) {
    Catalog old_catalog = decode_catalog(client->fetch_object(previous->root_catalog));
    MergeOptions mo;
    RepoClient* raw = client.get();
    mo.fetch = [raw](const ObjectId& id) { return raw->fetch_object(id); };
    mo.orphan_dir = scratch.state_dir() / "merge-orphans" / std::to_string(manifest.revision);
    MergeReport merge = merge_on_update(scratch.overlay_dir(), old_catalog, new_catalog, mo);
    write_file_atomic(scratch.state_dir() / "idmap", encode_idmap(merge.idmap));
    write_file_atomic(scratch.state_dir() / "last-merge-report", merge.encode());
    report.merge = std::move(merge);
  }
  write_mounted(scratch, manifest);

  // (3) Union of the snapshot and the persistent overlay.
  auto stack = assemble(scratch, std::move(client), manifest);
  UnionMount& view = stack->view();

  // (4) Let the OS know which processes serve its root.
  view.write(kPidsFile, std::to_string(::getpid()) + "\n" +
                            std::to_string(stack->client().instance_id()) + "\n");

  // (5) Repository hook, before the root is declared switched.
  if (view.exists(kBootstrapHook)) {
    report.hook_status = run_hook(view.read(kBootstrapHook), machine, *stack, options);
  }

  // (6) Keep the working set needed to come back without network.
  if (view.exists(kPinFile)) {
    PinReport pins = stack->client().pin(stack->catalog(), PinSet::parse(view.read(kPinFile)));
    report.pinned = pins.pinned.size();
    report.unknown_pins = pins.unknown;
  }

  TransferStats stats = stack->client().stats();
  report.bytes_fetched = stats.bytes_downloaded;
  report.objects_fetched = stats.objects_fetched;
  report.requests = stats.requests;
  write_session(machine, context, manifest, stats);
  write_file_atomic(scratch.state_dir() / "last-boot-report", report.encode());

  // (7) Root switched; projections are served by the stack.
  machine.set_booted(std::move(stack));
  return report;
}

RootStack& reattach(MachineState& machine, const BootOptions& options) {
  if (machine.booted() != nullptr) return *machine.booted();
  auto session = read_session(machine);
  if (!session) throw Error(ErrorKind::NotBooted, "machine " + machine.dir().string());
  const ScratchDisk& scratch = machine.require_scratch();
  auto cache = std::make_shared<CacheManager>(
      scratch.cache_dir(), session->cache_quota.value_or(CacheManager::kDefaultQuota));
  auto client = std::make_unique<RepoClient>(session->repo_url, session->repo_name, cache,
                                             client_options(options, session->proxy));
  machine.set_booted(assemble(scratch, std::move(client), session->manifest));
  return *machine.booted();
}

TransferStats session_transfer_stats(const MachineState& machine) {
  TransferStats stats;
  auto text = read_optional(session_file(machine));
  if (!text) return stats;
  auto kv = parse_key_values(*text);
  stats.bytes_downloaded = parse_u64(kv["bytes_fetched"]).value_or(0);
  stats.objects_fetched = parse_u64(kv["objects_fetched"]).value_or(0);
  stats.requests = parse_u64(kv["requests"]).value_or(0);
  return stats;
}

void record_session_transfer(const MachineState& machine, const TransferStats& delta) {
  auto text = read_optional(session_file(machine));
  if (!text) return;
  auto kv = parse_key_values(*text);
  auto bump = [&](const char* key, std::uint64_t by) {
    kv[key] = std::to_string(parse_u64(kv[key]).value_or(0) + by);
  };
  bump("bytes_fetched", delta.bytes_downloaded);
  bump("objects_fetched", delta.objects_fetched);
  bump("requests", delta.requests);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  write_file_atomic(session_file(machine), out);
}

std::string ShutdownReport::encode() const {
  std::string out = std::string("was_booted=") + (was_booted ? "yes" : "no") + "\n";
  std::string joined;
  for (const auto& step : order) joined += (joined.empty() ? "" : ",") + step;
  out += "order=" + joined + "\n";
  out += "violations=" + std::to_string(violations) + "\n";
  return out;
}

ShutdownReport shutdown(MachineState& machine,
                        const std::function<void(UnionMount&)>& between_readonly_and_close) {
  ShutdownReport report;
  if (machine.booted() == nullptr) {
    std::error_code ec;
    if (!fs::exists(session_file(machine), ec)) return report;
    try {
      reattach(machine);
    } catch (const Error&) {
      // Session without a usable stack: nothing mounted to protect.
      fs::remove(session_file(machine), ec);
      return report;
    }
  }
  report.was_booted = true;
  std::unique_ptr<RootStack> stack = machine.release_booted();
  UnionMount& view = stack->view();

  view.set_read_only();
  report.order.emplace_back("rw_readonly");
  const std::uint64_t rejected_before = view.rejected_writes();
  if (between_readonly_and_close) {
    try {
      between_readonly_and_close(view);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ReadOnly) throw;
    }
  }
  report.violations = view.rejected_writes() - rejected_before;

  view.close();
  report.order.emplace_back("union_close");

  stack.reset();
  std::error_code ec;
  fs::remove(session_file(machine), ec);
  fs::remove(machine.dir() / "session.manifest", ec);
  report.order.emplace_back("root_release");
  return report;
}

}  // namespace ucvm
