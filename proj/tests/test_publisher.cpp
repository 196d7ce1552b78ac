#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "ucvm/error.hpp"
#include "ucvm/publisher.hpp"

using namespace ucvm;
using ucvm::testing::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::IoError;
}

SourceTree base_tree() {
  SourceTree t;
  t.add_file("/bin/sh", "#!shell\n", 0755);
  t.add_file("/etc/motd", "welcome\n");
  t.add_symlink("/usr/bin", "/bin");
  return t;
}

}  // namespace

TEST(MetaPackage, ParsesAndRejectsInexactVersions) {
  MetaPackage m = parse_meta_package("name cernvm-system\nversion 3.1.0\ndep glibc 2.12\ndep bash 4.1.2\n");
  EXPECT_EQ(m.name, "cernvm-system");
  EXPECT_EQ(m.version, "3.1.0");
  EXPECT_EQ(m.dependencies.size(), 2u);
  EXPECT_EQ(kind_of([] { parse_meta_package("name x\nversion 1\ndep glibc >=2.12\n"); }),
            ErrorKind::InvalidPackage);
  EXPECT_EQ(kind_of([] { parse_meta_package("name x\nversion 1\ndep glibc 2.*\n"); }),
            ErrorKind::InvalidPackage);
  EXPECT_EQ(kind_of([] { parse_meta_package("name x\nversion 1\ndep a 1\ndep a 2\n"); }),
            ErrorKind::InvalidPackage);
  EXPECT_EQ(kind_of([] { parse_meta_package("version 1\n"); }), ErrorKind::InvalidPackage);
}

TEST(MetaPackage, ClosureExamples) {
  MetaPackage m = parse_meta_package("name sys\nversion 1\ndep glibc 2.12\n");
  PackageUniverse u = parse_package_universe("pkg glibc 2.12\n");
  EXPECT_TRUE(validate_meta_package(m, u).ok());

  ValidationReport missing = validate_meta_package(m, PackageUniverse{});
  ASSERT_EQ(missing.missing.size(), 1u);
  EXPECT_EQ(missing.missing[0].package, (PackageRef{"glibc", "2.12"}));

  MetaPackage ab = parse_meta_package("name sys\nversion 1\ndep a 1\ndep b 1\n");
  PackageUniverse abc = parse_package_universe("pkg a 1 c=1\npkg b 1 c=2\npkg c 1\npkg c 2\n");
  ValidationReport r = validate_meta_package(ab, abc);
  EXPECT_TRUE(r.missing.empty());
  ASSERT_EQ(r.conflicts.size(), 1u);
  EXPECT_EQ(r.conflicts[0], (VersionConflict{"c", "1", "2"}));
}

// Every universe over packages {p,q,r} x versions {1,2} with at most six
// members and up to two dependency edges each, against a DFS closure.
TEST(MetaPackage, AgreesWithBruteForceClosureOnSmallUniverses) {
  std::vector<PackageRef> refs;
  for (std::string n : {"p", "q", "r"}) {
    for (std::string v : {"1", "2"}) refs.push_back({n, v});
  }
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (unsigned mask = 0; mask < (1u << refs.size()); ++mask) {
    for (int variant = 0; variant < 40; ++variant) {
      PackageUniverse u;
      for (std::size_t i = 0; i < refs.size(); ++i) {
        if ((mask & (1u << i)) == 0) continue;
        std::vector<PackageRef> deps;
        std::size_t ndeps = rng() % 3;
        for (std::size_t d = 0; d < ndeps; ++d) {
          const PackageRef& dep = refs[rng() % refs.size()];
          bool dup = std::any_of(deps.begin(), deps.end(), [&](auto& x) { return x.name == dep.name; });
          if (!dup) deps.push_back(dep);
        }
        u.packages[refs[i]] = deps;
      }
      MetaPackage m{"meta", "1", {}};
      std::size_t nroots = 1 + rng() % 2;
      for (std::size_t d = 0; d < nroots; ++d) {
        const PackageRef& dep = refs[rng() % refs.size()];
        bool dup = std::any_of(m.dependencies.begin(), m.dependencies.end(),
                               [&](auto& x) { return x.name == dep.name; });
        if (!dup) m.dependencies.push_back(dep);
      }
      ValidationReport got = validate_meta_package(m, u);
      ValidationReport want = ucvm::testing::oracle_closure(m, u);
      ASSERT_EQ(got.missing, want.missing) << "mask " << mask << " variant " << variant;
      ASSERT_EQ(got.conflicts, want.conflicts) << "mask " << mask << " variant " << variant;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 64 * 40);
}

TEST(Publish, GenesisAndTag) {
  TempDir dir;
  Repository repo = Repository::create(dir.path());
  Manifest m = publish_snapshot(repo, base_tree(), "1.0", "production");
  EXPECT_EQ(m.revision, 1u);
  EXPECT_FALSE(m.parent_revision);
  EXPECT_EQ(repo.tags().tags.at("production"), 1u);
  EXPECT_EQ(repo.tags().snapshots.at("1.0"), 1u);
  Catalog c = repo.catalog(m);
  ASSERT_NE(c.find("/bin/sh"), nullptr);
  EXPECT_EQ(c.find("/bin/sh")->mode, 0755);
  EXPECT_EQ(repo.store().get(*c.find("/bin/sh")->content), "#!shell\n");
  EXPECT_EQ(c.find("/usr/bin")->target, "/bin");
  EXPECT_EQ(resolve(repo, "1.0"), m);
}

TEST(Publish, OnlyChangedContentIsStored) {
  TempDir dir;
  Repository repo = Repository::create(dir.path());
  publish_snapshot(repo, base_tree(), "1.0", "production");
  std::size_t before = repo.store().object_count();
  SourceTree t = base_tree();
  t.add_file("/etc/motd", "changed\n");
  Manifest m2 = publish_snapshot(repo, t, "1.1", "");
  EXPECT_EQ(m2.revision, 2u);
  EXPECT_EQ(m2.parent_revision, 1u);
  EXPECT_EQ(repo.store().object_count(), before + 2);
  EXPECT_EQ(repo.tags().tags.at("production"), 1u);
}

TEST(Publish, HistoryIsAppendOnly) {
  TempDir dir;
  Repository repo = Repository::create(dir.path());
  SourceTree t = base_tree();
  publish_snapshot(repo, t, "1.0", "");
  Bytes first = repo.manifest_bytes(1);
  std::string digest = catalog_tree_digest(repo.catalog(repo.manifest(1)));
  for (int i = 2; i <= 4; ++i) {
    t.add_file("/var/log/boot" + std::to_string(i), "x");
    t.remove("/etc/motd");
    publish_snapshot(repo, t, std::to_string(i) + ".0", "");
  }
  EXPECT_EQ(repo.manifest_bytes(1), first);
  EXPECT_EQ(catalog_tree_digest(repo.catalog(repo.manifest(1))), digest);
  EXPECT_TRUE(repo.store().fsck().errors.empty());
}

TEST(Publish, DuplicateSnapshotNameRejected) {
  TempDir dir;
  Repository repo = Repository::create(dir.path());
  publish_snapshot(repo, base_tree(), "1.0", "");
  EXPECT_EQ(kind_of([&] { publish_snapshot(repo, base_tree(), "1.0", ""); }),
            ErrorKind::DuplicateSnapshotName);
  EXPECT_EQ(repo.revisions().size(), 1u);
}

TEST(Publish, TagsAdvanceIndependently) {
  TempDir dir;
  Repository repo = Repository::create(dir.path());
  for (int i = 1; i <= 3; ++i) {
    SourceTree t = base_tree();
    t.add_file("/version", std::to_string(i));
    publish_snapshot(repo, t, "v" + std::to_string(i), "development");
  }
  set_tag(repo, "testing", 2);
  set_tag(repo, "production", 1);
  EXPECT_EQ(resolve(repo, "development").revision, 3u);
  EXPECT_EQ(resolve(repo, "testing").revision, 2u);
  EXPECT_EQ(resolve(repo, "production").revision, 1u);
  EXPECT_EQ(resolve(repo, "newest").revision, 3u);
  EXPECT_EQ(resolve(repo, "@2").snapshot_name, "v2");
  EXPECT_EQ(kind_of([&] { resolve(repo, "stable"); }), ErrorKind::UnknownSelector);
  EXPECT_EQ(kind_of([&] { set_tag(repo, "stable", 9); }), ErrorKind::UnknownSelector);
}

TEST(SourceTree, FromDirectoryKeepsSymlinksAndModes) {
  TempDir dir;
  fs::create_directories(dir / "t/bin");
  std::ofstream(dir / "t/bin/tool") << "tool";
  fs::permissions(dir / "t/bin/tool", fs::perms::owner_all | fs::perms::group_read);
  fs::create_symlink("tool", dir / "t/bin/alias");
  SourceTree t = SourceTree::from_directory(dir / "t");
  const auto& e = t.entries();
  ASSERT_TRUE(e.count("/bin/tool"));
  EXPECT_EQ(e.at("/bin/tool").mode, 0740);
  ASSERT_TRUE(e.count("/bin/alias"));
  EXPECT_EQ(e.at("/bin/alias").kind, EntryKind::Symlink);
  EXPECT_EQ(e.at("/bin/alias").target, "tool");
}
