#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "oracles.hpp"
#include "support.hpp"
#include "ucvm/error.hpp"
#include "ucvm/unionfs.hpp"

using namespace ucvm;
using namespace ucvm::testing;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::IoError;
}

struct Mounted {
  TempDir dir{"union"};
  BlobPool blobs;
  std::shared_ptr<Catalog> lower = std::make_shared<Catalog>();
  std::unique_ptr<UnionMount> view;

  Mounted() {
    lower->insert("/etc", Dirent::directory());
    lower->insert("/etc/hosts", Dirent::file(blobs.add("127.0.0.1 localhost\n"), 20, 0644, 38, 38));
    lower->insert("/etc/skel", Dirent::directory());
    lower->insert("/etc/skel/.bashrc", Dirent::file(blobs.add("rc"), 2));
    lower->insert("/bin", Dirent::directory());
    lower->insert("/bin/sh", Dirent::file(blobs.add("sh"), 2, 0755));
    lower->insert("/lib", Dirent::symlink("usr/lib"));
    mount();
  }
  void mount(IdMap map = {}) {
    view.reset();
    view = std::make_unique<UnionMount>(lower, blobs.fetcher(), dir / "upper", map);
  }
};

}  // namespace

TEST(UnionMount, ReadsFallThroughToLower) {
  Mounted m;
  EXPECT_EQ(m.view->read("/bin/sh"), "sh");
  EXPECT_EQ(m.view->readdir("/"), (std::vector<std::string>{"bin", "etc", "lib"}));
  EXPECT_EQ(m.view->readlink("/lib"), "usr/lib");
  EXPECT_EQ(m.view->stat("/bin/sh").mode, 0755);
  EXPECT_EQ(m.view->stat("/bin/sh").layer, Layer::Lower);
  EXPECT_EQ(kind_of([&] { m.view->read("/lib"); }), ErrorKind::NotARegularFile);
  EXPECT_EQ(kind_of([&] { m.view->read("/etc"); }), ErrorKind::IsADirectory);
  EXPECT_EQ(kind_of([&] { m.view->read("/nope"); }), ErrorKind::NotFound);
}

TEST(UnionMount, CopyOnWriteLeavesLowerIntact) {
  Mounted m;
  m.view->write("/etc/hosts", "10.0.0.1 db\n");
  EXPECT_EQ(m.view->read("/etc/hosts"), "10.0.0.1 db\n");
  EXPECT_EQ(m.view->read_lower("/etc/hosts"), "127.0.0.1 localhost\n");
  EXPECT_EQ(m.view->stat("/etc/hosts").layer, Layer::Upper);
  EXPECT_EQ(m.view->stat("/etc/hosts").uid, 38u);
  EXPECT_TRUE(fs::exists(m.dir / "upper/etc/hosts"));
}

TEST(UnionMount, DeletionUsesWhiteoutMarkers) {
  Mounted m;
  m.view->unlink("/bin/sh");
  EXPECT_FALSE(m.view->exists("/bin/sh"));
  EXPECT_TRUE(fs::exists(m.dir / "upper/bin/.wh.sh"));
  EXPECT_TRUE(m.view->readdir("/bin").empty());
  m.view->write("/bin/sh", "replacement");
  EXPECT_FALSE(fs::exists(m.dir / "upper/bin/.wh.sh"));
  EXPECT_EQ(m.view->read("/bin/sh"), "replacement");
}

TEST(UnionMount, RecreatedDirectoryStaysOpaque) {
  Mounted m;
  EXPECT_EQ(kind_of([&] { m.view->unlink("/etc/skel"); }), ErrorKind::NotEmpty);
  m.view->unlink("/etc/skel/.bashrc");
  m.view->unlink("/etc/skel");
  m.view->mkdir("/etc/skel");
  EXPECT_TRUE(m.view->readdir("/etc/skel").empty());
  m.mount();
  EXPECT_TRUE(m.view->readdir("/etc/skel").empty());
}

TEST(UnionMount, ReservedNamesAndBadPaths) {
  Mounted m;
  EXPECT_EQ(kind_of([&] { m.view->write("/etc/.wh.hosts", ""); }), ErrorKind::ReservedName);
  EXPECT_EQ(kind_of([&] { m.view->write("etc/hosts", ""); }), ErrorKind::InvalidPath);
  EXPECT_EQ(kind_of([&] { m.view->write("/etc/../x", ""); }), ErrorKind::InvalidPath);
  EXPECT_EQ(kind_of([&] { m.view->write("/bin/sh/x", ""); }), ErrorKind::ParentNotADirectory);
  EXPECT_EQ(kind_of([&] { m.view->write("/x/y", ""); }), ErrorKind::ParentNotFound);
  EXPECT_EQ(kind_of([&] { m.view->mkdir("/bin"); }), ErrorKind::AlreadyExists);
}

TEST(UnionMount, ReadOnlyAndClosed) {
  Mounted m;
  m.view->set_read_only();
  EXPECT_EQ(kind_of([&] { m.view->write("/new", "x"); }), ErrorKind::ReadOnly);
  EXPECT_EQ(kind_of([&] { m.view->unlink("/bin/sh"); }), ErrorKind::ReadOnly);
  EXPECT_EQ(m.view->rejected_writes(), 2u);
  EXPECT_EQ(m.view->read("/bin/sh"), "sh");
  m.view->close();
  EXPECT_EQ(kind_of([&] { m.view->read("/bin/sh"); }), ErrorKind::Closed);
}

TEST(UnionMount, UpperDirectoryIsExclusive) {
  Mounted m;
  EXPECT_EQ(kind_of([&] { UnionMount second(m.lower, m.blobs.fetcher(), m.dir / "upper"); }),
            ErrorKind::Locked);
  m.view->close();
  UnionMount third(m.lower, m.blobs.fetcher(), m.dir / "upper");
  EXPECT_TRUE(third.exists("/bin/sh"));
}

TEST(UnionMount, IdMapAppliesToLowerOwnership) {
  Mounted m;
  IdMap map;
  map.uid_map[38] = 1000;
  m.mount(map);
  UnionStat st = m.view->stat("/etc/hosts");
  EXPECT_EQ(st.uid, 1000u);
  EXPECT_EQ(st.gid, 38u);
}

TEST(UnionMount, TreeDigestOfPristineViewMatchesCatalog) {
  Mounted m;
  EXPECT_EQ(m.view->tree_digest(), catalog_tree_digest(*m.lower));
  m.view->write("/.cvmfs_pids", "1\n");
  EXPECT_EQ(m.view->tree_digest(), catalog_tree_digest(*m.lower));
  m.view->write("/bin/sh", "changed");
  EXPECT_NE(m.view->tree_digest(), catalog_tree_digest(*m.lower));
}

TEST(UnionMount, ConcurrentReadersAndWriter) {
  Mounted m;
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::vector<std::thread> readers;
  for (int i = 0; i < 3; ++i) {
    readers.emplace_back([&] {
      while (!stop) {
        Bytes v = m.view->read("/etc/hosts");
        if (v != "127.0.0.1 localhost\n" && v.rfind("gen", 0) != 0) ++bad;
      }
    });
  }
  for (int i = 0; i < 200; ++i) m.view->write("/etc/hosts", "gen" + std::to_string(i));
  stop = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(bad.load(), 0);
}

TEST(UnionMount, MatchesPlainDirectoryOracle) {
  TempDir dir{"union-oracle"};
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    UnionRun r = run_union_sequence(seed, 200, dir / "run");
    ASSERT_TRUE(r.ok) << "seed " << seed << ": " << r.divergence;
  }
}
