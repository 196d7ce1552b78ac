// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "ucvm/bootstrap.hpp"
#include "ucvm/error.hpp"
#include "ucvm/updater.hpp"

using namespace ucvm;
using namespace ucvm::testing;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Collects failed checks; the first few are reported.
class Checker {
 public:
  void expect(bool cond, const std::string& what) {
    if (cond) return;
    ++failures_;
    if (failures_ <= 5) msg_ += (msg_.empty() ? "" : "; ") + what;
  }
  Outcome done(std::string detail) const {
    if (failures_ == 0) return {true, std::move(detail)};
    return {false, std::to_string(failures_) + " failed check(s): " + msg_ + " [" + detail + "]"};
  }

 private:
  std::size_t failures_ = 0;
  std::string msg_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SourceTree small_os(int flavour) {
  SourceTree t;
  std::string f = std::to_string(flavour);
  t.add_file("/bin/sh", "sh-" + f, 0755);
  t.add_file("/etc/os-release", "VERSION=" + f + "\n");
  t.add_file("/usr/lib/libc.so", std::string(3000 + flavour * 17, 'c'));
  for (int i = 0; i < flavour; ++i) t.add_file("/usr/share/doc/r" + std::to_string(i), "doc " + f);
  if (flavour % 2 == 0) t.add_symlink("/usr/bin/python", "python" + f);
  t.add_file("/.ucernvm_pinfiles", "/bin/sh\n/etc/os-release\n/usr/lib/libc.so\n");
  return t;
}

// ---- 1 ----------------------------------------------------------------------

Outcome fetch_economics() {
  Checker c;
  TempDir dir{"acc1"};
  LiveRepo live(dir / "repo");
  std::mt19937_64 rng(20140601);

  constexpr std::size_t kFiles = 2000;
  constexpr std::uint64_t kMinTotal = 200ull * 1024 * 1024;
  SourceTree tree;
  std::vector<std::string> paths;
  std::uint64_t total = 0;
  const char* dirs[] = {"/usr/lib", "/usr/bin", "/usr/share/data", "/opt/sw", "/lib/modules"};
  std::uniform_int_distribution<std::size_t> size_dist(60000, 150000);
  for (std::size_t i = 0; i < kFiles; ++i) {
    std::size_t n = size_dist(rng);
    if (i + 1 == kFiles && total + n < kMinTotal) n = kMinTotal - total;
    std::string path = std::string(dirs[i % 5]) + "/f" + std::to_string(i);
    // Half binary-like, half text-like content.
    tree.add_file(path, i % 2 ? random_bytes(rng, n) : random_text(rng, n));
    paths.push_back(path);
    total += n;
  }

  std::vector<std::string> shuffled = paths;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::size_t touched_count = kFiles / 20;
  std::vector<std::string> pin_paths(shuffled.begin(), shuffled.begin() + touched_count / 2);
  std::vector<std::string> exec_paths(shuffled.begin() + touched_count / 2, shuffled.begin() + touched_count);
  std::string pinfile;
  for (const auto& p : pin_paths) pinfile += p + "\n";
  tree.add_file("/.ucernvm_pinfiles", pinfile);

  Manifest m = live.publish(tree, "big-1.0", "production");
  Repository& repo = live.repo();
  Catalog catalog = repo.catalog(m);

  std::uint64_t touched_compressed = 0;
  std::set<ObjectId> touched_ids;
  for (const auto& p : pin_paths) touched_ids.insert(*catalog.find(p)->content);
  for (const auto& p : exec_paths) touched_ids.insert(*catalog.find(p)->content);
  touched_ids.insert(*catalog.find("/.ucernvm_pinfiles")->content);
  for (const auto& id : touched_ids) touched_compressed += repo.store().stored_size(id);
  std::uint64_t overhead = repo.store().stored_size(m.root_catalog) + repo.manifest_bytes(m.revision).size();
  std::uint64_t repo_bytes = repo.store().total_stored_bytes();

  MachineState machine = fresh_machine(dir.path());
  auto t0 = std::chrono::steady_clock::now();
  BootReport report = boot(machine, make_context(live, "production"), fast_boot_options());
  for (const auto& p : exec_paths) machine.booted()->view().read(p);
  double elapsed = seconds_since(t0);
  std::uint64_t downloaded = machine.booted()->client().stats().bytes_downloaded;
  shutdown(machine);

  double budget = 1.25 * static_cast<double>(touched_compressed) + static_cast<double>(overhead);
  c.expect(total >= kMinTotal, "tree smaller than 200 MiB");
  c.expect(report.pinned == pin_paths.size(), "not every pin was cached");
  c.expect(static_cast<double>(downloaded) <= budget, "download exceeds 1.25x touched + metadata");
  c.expect(downloaded * 100 < repo_bytes * 15, "download not below 15% of repository");
  c.expect(elapsed < 60.0, "boot working set took >= 60 s");
  std::ostringstream d;
  d << "files=" << kFiles << " tree_bytes=" << total << " repo_bytes=" << repo_bytes
    << " touched_files=" << touched_count << " downloaded=" << downloaded << " budget=" << std::uint64_t(budget)
    << " ratio=" << static_cast<double>(downloaded) / static_cast<double>(repo_bytes)
    << " seconds=" << elapsed;
  return c.done(d.str());
}

// ---- 2 ----------------------------------------------------------------------

Outcome time_travel() {
  Checker c;
  TempDir dir{"acc2"};
  LiveRepo live(dir / "repo");
  std::map<std::uint64_t, std::string> recorded;
  for (int r = 1; r <= 5; ++r) {
    Manifest m = live.publish(small_os(r), "os-" + std::to_string(r) + ".0", "production");
    recorded[m.revision] = catalog_tree_digest(live.repo().catalog(m));
  }
  std::set<std::string> distinct;
  for (const auto& [rev, d] : recorded) distinct.insert(d);
  c.expect(distinct.size() == 5, "revisions share a tree digest");

  MachineState machine = fresh_machine(dir.path());
  BootReport report = boot(machine, make_context(live, "os-2.0"), fast_boot_options());
  std::string digest = machine.booted()->view().tree_digest();
  c.expect(report.revision == 2, "booted revision " + std::to_string(report.revision));
  c.expect(digest == recorded[2], "union digest differs from the one recorded at publish");
  c.expect(machine.booted()->view().read("/etc/os-release") == "VERSION=2\n", "wrong content");
  shutdown(machine);
  return c.done("revision=" + std::to_string(report.revision) + " digest=" + digest);
}

// ---- 3 ----------------------------------------------------------------------

Outcome stickiness() {
  Checker c;
  TempDir dir{"acc3"};
  LiveRepo live(dir / "repo");
  for (int r = 1; r <= 3; ++r) live.publish(small_os(r), "os-" + std::to_string(r), r == 3 ? "production" : "");
  MachineState machine = fresh_machine(dir.path());
  Context ctx = make_context(live, "production");

  BootReport first = boot(machine, ctx, fast_boot_options());
  c.expect(first.revision == 3, "first boot at " + std::to_string(first.revision));
  machine.booted()->view().write("/etc/motd", "local");
  live.publish(small_os(4), "os-4", "production");

  std::vector<std::uint64_t> seen;
  for (int i = 0; i < 2; ++i) {
    BootReport again = boot(machine, ctx, fast_boot_options());
    seen.push_back(again.revision);
    c.expect(again.revision == 3, "reboot moved to " + std::to_string(again.revision));
    c.expect(!again.merge, "merge on a sticky reboot");
  }
  shutdown(machine);
  unpin_snapshot(machine);

  int merges = 0;
  for (int i = 0; i < 3; ++i) {
    BootReport after = boot(machine, ctx, fast_boot_options());
    seen.push_back(after.revision);
    c.expect(after.revision == 4, "after unpin at " + std::to_string(after.revision));
    if (after.merge) ++merges;
  }
  c.expect(merges == 1, "merges after unpin: " + std::to_string(merges));
  c.expect(machine.booted()->view().read("/etc/motd") == "local", "local edit lost");
  shutdown(machine);

  std::string trail;
  for (auto r : seen) trail += (trail.empty() ? "" : ",") + std::to_string(r);
  return c.done("revisions=" + trail + " merges=" + std::to_string(merges));
}

// ---- 4 ----------------------------------------------------------------------

Outcome union_equivalence() {
  Checker c;
  TempDir dir{"acc4"};
  std::size_t ops = 0;
  std::vector<std::uint64_t> bad;
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    fs::path scratch = dir / ("s" + std::to_string(seed));
    UnionRun run = run_union_sequence(seed, 200, scratch);
    ops += run.ops;
    if (!run.ok) {
      bad.push_back(seed);
      c.expect(false, "seed " + std::to_string(seed) + ": " + run.divergence);
    }
    fs::remove_all(scratch);
  }
  std::string seeds;
  for (auto s : bad) seeds += " " + std::to_string(s);
  return c.done("sequences=1000 ops=" + std::to_string(ops) + " divergent_seeds=" + std::to_string(bad.size()) +
                seeds);
}

// ---- 5 ----------------------------------------------------------------------

struct NamedTriple {
  TempDir dir{"acc5"};
  BlobPool blobs;
  Catalog old_catalog;
  Catalog new_catalog;

  void file(Catalog& cat, const std::string& path, const std::string& content) {
    for (std::size_t at = path.find('/', 1); at != std::string::npos; at = path.find('/', at + 1)) {
      std::string d = path.substr(0, at);
      if (!cat.contains(d)) cat.insert(d, Dirent::directory());
    }
    cat.insert(path, Dirent::file(blobs.add(content), content.size()));
  }
  std::unique_ptr<UnionMount> mount(const Catalog& cat) {
    return std::make_unique<UnionMount>(std::make_shared<const Catalog>(cat), blobs.fetcher(), dir / "upper");
  }
  MergeReport merge() {
    return merge_on_update(dir / "upper", old_catalog, new_catalog, {blobs.fetcher(), dir / "orphans"});
  }
};

Outcome merge_rules() {
  Checker c;
  TempDir dir{"acc5"};
  std::size_t conflicts = 0;
  std::size_t entries = 0;
  std::size_t bad = 0;
  for (std::uint64_t seed = 1; seed <= 500; ++seed) {
    fs::path scratch = dir / ("t" + std::to_string(seed));
    MergeRun run = run_merge_triple(seed, scratch);
    conflicts += run.conflicts;
    entries += run.overlay_entries;
    if (!run.ok) {
      ++bad;
      c.expect(false, "seed " + std::to_string(seed) + ": " + run.divergence);
    }
    fs::remove_all(scratch);
  }
  c.expect(conflicts > 0, "random triples produced no conflicts");

  {
    NamedTriple t;
    t.file(t.old_catalog, "/usr/bin/gcc", "gcc-4.4");
    t.file(t.new_catalog, "/usr/bin/gcc", "gcc-4.8");
    t.mount(t.old_catalog)->write("/usr/bin/gcc", "my-gcc");
    MergeReport r = t.merge();
    c.expect(r.took_remote == std::vector<std::string>{"/usr/bin/gcc"}, "gcc: not remote-wins");
    c.expect(t.mount(t.new_catalog)->read("/usr/bin/gcc") == "gcc-4.8", "gcc: local copy visible");
  }
  {
    NamedTriple t;
    t.file(t.old_catalog, "/etc/resolv.conf", "nameserver 1");
    t.file(t.new_catalog, "/etc/resolv.conf", "nameserver 2");
    t.mount(t.old_catalog)->write("/etc/resolv.conf", "nameserver local");
    MergeReport r = t.merge();
    c.expect(r.kept_local == std::vector<std::string>{"/etc/resolv.conf"}, "/etc: not local-wins");
    c.expect(t.mount(t.new_catalog)->read("/etc/resolv.conf") == "nameserver local", "/etc: local copy lost");
  }
  {
    NamedTriple t;
    t.file(t.old_catalog, "/usr/bin/gcc", "a");
    t.file(t.new_catalog, "/usr/bin/gcc", "b");
    {
      auto m = t.mount(t.old_catalog);
      m->mkdir("/opt");
      m->write("/opt/tool", "mine");
    }
    MergeReport r = t.merge();
    c.expect(r.untouched_overlay == std::vector<std::string>{"/opt", "/opt/tool"}, "/opt: not untouched");
    c.expect(r.kept_local.empty(), "/opt: listed as conflict");
    c.expect(t.mount(t.new_catalog)->read("/opt/tool") == "mine", "/opt: addition lost");
  }
  return c.done("triples=500 divergent=" + std::to_string(bad) + " overlay_entries=" + std::to_string(entries) +
                " conflicts=" + std::to_string(conflicts) + " named=gcc,/etc,/opt");
}

// ---- 6 ----------------------------------------------------------------------

Outcome account_merge() {
  Checker c;
  AccountSweep sweep = run_account_sweep(20000, 6);
  c.expect(sweep.first_failure.empty(), sweep.first_failure);
  c.expect(sweep.collisions > 0, "sweep produced no id collisions");
  return c.done("merges=" + std::to_string(sweep.merges) + " collisions=" + std::to_string(sweep.collisions));
}

// ---- 7 ----------------------------------------------------------------------

Outcome staged_update() {
  Checker c;
  TempDir dir{"acc7"};
  LiveRepo live(dir / "repo");
  live.publish(small_os(1), "os-1", "production");
  MachineState machine = fresh_machine(dir.path());
  Context ctx = make_context(live, "production");
  BootReport first = boot(machine, ctx, fast_boot_options());
  c.expect(first.ucvm_version == "1.0", "initial version " + first.ucvm_version);

  stage_ucvm_update(machine.require_scratch(), "2.0", "kernel+initrd v2");
  fs::path staging = machine.require_scratch().root / kStagingDir;
  BootReport second = boot(machine, ctx, fast_boot_options());
  c.expect(second.ucvm_version == "2.0", "after staging version " + second.ucvm_version);
  c.expect(second.adopted_update, "update not reported as adopted");
  c.expect(!fs::exists(staging) || fs::is_empty(staging), "staging area not empty");

  BootReport third = boot(machine, ctx, fast_boot_options());
  c.expect(third.ucvm_version == "2.0", "version reverted to " + third.ucvm_version);
  c.expect(!third.adopted_update, "update adopted twice");
  shutdown(machine);
  return c.done("versions=" + first.ucvm_version + "," + second.ucvm_version + "," + third.ucvm_version);
}

// ---- 8 ----------------------------------------------------------------------

Outcome offline_reboot() {
  Checker c;
  TempDir dir{"acc8"};
  LiveRepo live(dir / "repo");
  live.publish(small_os(3), "os-3", "production");
  MachineState machine = fresh_machine(dir.path());
  Context ctx = make_context(live, "production");
  BootReport online = boot(machine, ctx, fast_boot_options());
  c.expect(online.pinned == 3, "pinned " + std::to_string(online.pinned));
  shutdown(machine);
  live.stop();

  BootReport offline;
  try {
    offline = boot(machine, ctx, fast_boot_options());
  } catch (const Error& e) {
    c.expect(false, std::string("offline boot failed: ") + e.what());
    return c.done("");
  }
  c.expect(offline.manifest_from_cache, "manifest not served from cache");
  c.expect(offline.bytes_fetched == 0, "bytes fetched while offline");
  c.expect(offline.revision == online.revision, "revision changed offline");
  UnionMount& view = machine.booted()->view();
  c.expect(view.read("/bin/sh") == "sh-3", "pinned file unreadable");
  c.expect(view.read("/etc/os-release") == "VERSION=3\n", "pinned file unreadable");
  c.expect(view.read("/usr/lib/libc.so").size() == 3051, "pinned file unreadable");
  shutdown(machine);
  return c.done("revision=" + std::to_string(offline.revision) + " from_cache=1 pinned=" +
                std::to_string(online.pinned));
}

// ---- 9 ----------------------------------------------------------------------

Outcome shutdown_ordering() {
  Checker c;
  TempDir dir{"acc9"};
  LiveRepo live(dir / "repo");
  live.publish(small_os(4), "os-4", "production");
  MachineState machine = fresh_machine(dir.path());
  Context ctx = make_context(live, "production");
  const std::vector<std::string> expected{"rw_readonly", "union_close", "root_release"};
  std::mt19937_64 rng(9);
  std::size_t injected_total = 0;
  int passed = 0;
  for (int trial = 0; trial < 50; ++trial) {
    boot(machine, ctx, fast_boot_options());
    UnionMount& view = machine.booted()->view();
    for (int i = 0; i < 5; ++i) {
      try {
        view.write(random_path(rng), random_text(rng, 20));
      } catch (const Error&) {
      }
    }
    auto before = read_overlay(machine.require_scratch().overlay_dir());
    std::size_t injected = std::uniform_int_distribution<std::size_t>(0, 12)(rng);
    std::size_t rejected = 0;
    ShutdownReport r = shutdown(machine, [&](UnionMount& v) {
      for (std::size_t i = 0; i < injected; ++i) {
        std::string p = random_path(rng);
        try {
          switch (rng() % 4) {
            case 0: v.write(p, "late"); break;
            case 1: v.mkdir(p); break;
            case 2: v.symlink(p, "/bin/sh"); break;
            default: v.unlink(p); break;
          }
        } catch (const Error& e) {
          if (e.kind() == ErrorKind::ReadOnly) ++rejected;
        }
      }
    });
    auto after = read_overlay(machine.require_scratch().overlay_dir());
    bool same = before.size() == after.size();
    for (auto it = before.begin(), jt = after.begin(); same && it != before.end(); ++it, ++jt) {
      same = it->first == jt->first && it->second.kind == jt->second.kind && it->second.payload == jt->second.payload;
    }
    bool ok = r.was_booted && r.order == expected && rejected == injected && r.violations == injected && same &&
              machine.booted() == nullptr;
    c.expect(ok, "trial " + std::to_string(trial) + " injected=" + std::to_string(injected) +
                     " rejected=" + std::to_string(rejected) + " violations=" + std::to_string(r.violations));
    injected_total += injected;
    if (ok) ++passed;
  }
  return c.done("trials=50 passed=" + std::to_string(passed) + " injected_writes=" + std::to_string(injected_total));
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 on-demand fetch economics", fetch_economics},
      {"2 time travel", time_travel},
      {"3 snapshot stickiness", stickiness},
      {"4 union oracle equivalence", union_equivalence},
      {"5 merge rules", merge_rules},
      {"6 account merge", account_merge},
      {"7 staged update", staged_update},
      {"8 offline reboot", offline_reboot},
      {"9 shutdown ordering", shutdown_ordering},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.ok) ++failed;
    std::printf("%s [%s] %s (%.1fs)\n", o.ok ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
