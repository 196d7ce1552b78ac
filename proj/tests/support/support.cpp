#include "support.hpp"

#include <cstdlib>
#include <cstring>

#include "ucvm/error.hpp"

namespace ucvm::testing {

TempDir::TempDir(std::string_view tag) {
  std::string tmpl = (fs::temp_directory_path() / (std::string(tag) + "-XXXXXX")).string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw Error(ErrorKind::IoError, "mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

LiveRepo::LiveRepo(fs::path root, std::string name)
    : root_(std::move(root)), name_(std::move(name)), repo_(Repository::create(root_)) {
  server_ = std::make_unique<RepoServer>(root_);
  server_->bind("127.0.0.1", 0);
  server_->start();
}

LiveRepo::~LiveRepo() { server_->stop(); }

Manifest LiveRepo::publish(const SourceTree& tree, std::string_view snapshot, std::string_view tag) {
  PublishOptions options;
  options.repo_name = name_;
  return publish_snapshot(repo_, tree, snapshot, tag, options);
}

Context make_context(const LiveRepo& live, std::string selector) {
  Context ctx;
  ctx.repo_url = live.url();
  ctx.repo_name = live.name();
  ctx.snapshot_selector = std::move(selector);
  return ctx;
}

std::string user_data_text(const std::string& url, const std::string& repo,
                           const std::string& selector) {
  return "#cloud-config\nhostname: vm\n[ucernvm-begin]\nrepo_url=" + url + "\nrepo_name=" + repo +
         "\nsnapshot=" + selector + "\n[ucernvm-end]\n";
}

BootOptions fast_boot_options() {
  BootOptions o;
  o.client.retry.connect_retries = 1;
  o.client.retry.backoff_base = std::chrono::milliseconds(1);
  o.client.timeout = std::chrono::seconds(5);
  return o;
}

MachineState fresh_machine(const fs::path& dir) {
  MachineState m(dir / "machine");
  m.attach(discover_scratch({probe_volume(dir / "scratch")}));
  return m;
}

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes out(n, '\0');
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    std::uint64_t v = rng();
    std::memcpy(out.data() + i, &v, 8);
  }
  for (; i < n; ++i) out[i] = static_cast<char>(rng() & 0xff);
  return out;
}

Bytes random_text(std::mt19937_64& rng, std::size_t n) {
  static constexpr std::string_view alphabet = "abcdefghijklmnopqrstuvwxyz0123456789 \n";
  Bytes out(n, ' ');
  for (auto& c : out) c = alphabet[rng() % alphabet.size()];
  return out;
}

}  // namespace ucvm::testing
