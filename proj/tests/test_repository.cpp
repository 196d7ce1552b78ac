#include <gtest/gtest.h>

#include "support.hpp"
#include "ucvm/error.hpp"
#include "ucvm/repository.hpp"

using namespace ucvm;
using ucvm::testing::TempDir;

TEST(Manifest, RoundTrip) {
  Manifest m;
  m.repo_name = "cernvm-prod.cern.ch";
  m.revision = 7;
  m.snapshot_name = "3.1.0";
  m.root_catalog = ObjectId::of("catalog");
  m.published_at = parse_rfc3339("2013-10-14T12:00:00Z");
  m.parent_revision = 6;
  EXPECT_EQ(decode_manifest(encode_manifest(m)), m);
  m.parent_revision.reset();
  Bytes text = encode_manifest(m);
  EXPECT_NE(text.find("parent_revision=none"), std::string::npos);
  EXPECT_EQ(decode_manifest(text), m);
}

TEST(Manifest, MissingKeyIsDecodeError) {
  try {
    decode_manifest("repo_name=x\nrevision=1\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DecodeError);
  }
}

TEST(Tags, RoundTripAndInjectiveSnapshots) {
  TagDatabase db;
  db.tags = {{"production", 3}, {"testing", 4}};
  db.snapshots = {{"1.0", 1}, {"1.1", 2}};
  EXPECT_EQ(decode_tags(encode_tags(db)), db);
  EXPECT_THROW(decode_tags("snapshot 1.0 1\nsnapshot 1.0 2\n"), Error);
}

TEST(Labels, ReservedFormsRejected) {
  EXPECT_TRUE(is_valid_label("production"));
  EXPECT_TRUE(is_valid_label("1.0"));
  EXPECT_FALSE(is_valid_label(""));
  EXPECT_FALSE(is_valid_label("newest"));
  EXPECT_FALSE(is_valid_label("@3"));
  EXPECT_FALSE(is_valid_label("two words"));
}

TEST(ResolveSelector, Precedence) {
  TagDatabase db;
  db.tags = {{"production", 3}, {"2.0", 1}};
  db.snapshots = {{"1.0", 1}, {"2.0", 2}};
  std::vector<std::uint64_t> revs = {1, 2, 3};
  EXPECT_EQ(resolve_selector(db, revs, "newest"), 3u);
  EXPECT_EQ(resolve_selector(db, revs, "@2"), 2u);
  EXPECT_EQ(resolve_selector(db, revs, "@9"), std::nullopt);
  EXPECT_EQ(resolve_selector(db, revs, "production"), 3u);
  EXPECT_EQ(resolve_selector(db, revs, "1.0"), 1u);
  EXPECT_EQ(resolve_selector(db, revs, "2.0"), 1u);  // a tag shadows a snapshot name
  EXPECT_EQ(resolve_selector(db, revs, "nope"), std::nullopt);
  EXPECT_EQ(resolve_selector(db, {}, "newest"), std::nullopt);
}

TEST(Repository, CreateOpenAndManifestsAreWriteOnce) {
  TempDir dir;
  Repository repo = Repository::create(dir.path());
  EXPECT_FALSE(repo.latest_revision());
  EXPECT_THROW(Repository::open(dir / "missing"), Error);

  ObjectId cat = repo.store().put(encode_catalog(Catalog{}));
  Manifest m{"demo", 1, "1.0", cat, parse_rfc3339("2020-01-01T00:00:00Z"), std::nullopt};
  repo.write_manifest(m);
  EXPECT_EQ(Repository::open(dir.path()).manifest(1), m);
  EXPECT_EQ(repo.name(), "demo");
  try {
    repo.write_manifest(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvariantError);
  }
  Manifest dangling{"demo", 2, "2.0", ObjectId::of("nothing"), m.published_at, 1};
  EXPECT_THROW(repo.write_manifest(dangling), Error);
}

TEST(Repository, TagsMustPointAtPublishedRevisions) {
  TempDir dir;
  Repository repo = Repository::create(dir.path());
  TagDatabase db;
  db.tags = {{"production", 1}};
  EXPECT_THROW(repo.write_tags(db), Error);
}
