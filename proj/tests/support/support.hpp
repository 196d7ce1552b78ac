#pragma once

#include <memory>
#include <random>
#include <string>

#include "ucvm/bootstrap.hpp"
#include "ucvm/publisher.hpp"
#include "ucvm/repository.hpp"
#include "ucvm/transport.hpp"

namespace ucvm::testing {

// mkdtemp-backed directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(std::string_view tag = "ucvm");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(std::string_view rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

// A repository on disk served over localhost.
class LiveRepo {
 public:
  explicit LiveRepo(fs::path root, std::string name = "demo");
  ~LiveRepo();

  Repository& repo() { return repo_; }
  RepoServer& server() { return *server_; }
  const std::string& name() const { return name_; }
  std::string url() const { return server_->base_url(); }

  Manifest publish(const SourceTree& tree, std::string_view snapshot, std::string_view tag = "");
  void stop() { server_->stop(); }

 private:
  fs::path root_;
  std::string name_;
  Repository repo_;
  std::unique_ptr<RepoServer> server_;
};

Context make_context(const LiveRepo& live, std::string selector = "newest");
std::string user_data_text(const std::string& url, const std::string& repo,
                           const std::string& selector);

// Retries without the production back-off, so offline paths stay fast.
BootOptions fast_boot_options();

// Machine with a fresh scratch volume under `dir`.
MachineState fresh_machine(const fs::path& dir);

Bytes random_bytes(std::mt19937_64& rng, std::size_t n);
Bytes random_text(std::mt19937_64& rng, std::size_t n);

}  // namespace ucvm::testing
