#include "ucvm/transport.hpp"

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <thread>

#include "httplib.h"
#include "ucvm/error.hpp"

namespace ucvm {

namespace {

std::string percent_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == '@') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 0x0f];
    }
  }
  return out;
}

std::atomic<std::uint64_t> g_client_instances{0};

}  // namespace

// --- CacheManager ------------------------------------------------------------

CacheManager::CacheManager(fs::path dir, std::uint64_t quota_bytes)
    : dir_(std::move(dir)), quota_(quota_bytes), store_(dir_) {
  std::error_code ec;
  fs::create_directories(dir_ / "manifests", ec);

  // Rebuild LRU order from modification times; lookups touch them.
  std::vector<std::pair<fs::file_time_type, ObjectId>> found;
  for (const auto& id : store_.list()) {
    found.emplace_back(fs::last_write_time(store_.object_path(id), ec), id);
  }
  std::sort(found.begin(), found.end());
  for (const auto& [mtime, id] : found) {
    auto pos = lru_.insert(lru_.end(), id);
    std::uint64_t size = store_.stored_size(id);
    slots_.emplace(id, Slot{size, pos});
    used_ += size;
  }

  try {
    for (const auto& line : split_lines(read_file(dir_ / "pinned"))) {
      auto hex = trim(line);
      if (ObjectId::is_valid_hex(hex)) {
        ObjectId id = ObjectId::parse(hex);
        if (slots_.count(id) != 0) pinned_.insert(id);
      }
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotFound) throw;
  }
}

void CacheManager::touch_locked(const ObjectId& id) {
  auto it = slots_.find(id);
  if (it == slots_.end()) return;
  lru_.splice(lru_.end(), lru_, it->second.lru_pos);
  std::error_code ec;
  fs::last_write_time(store_.object_path(id), fs::file_time_type::clock::now(), ec);
}

std::optional<Bytes> CacheManager::lookup(const ObjectId& id) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(id);
  if (it == slots_.end()) return std::nullopt;
  try {
    Bytes data = store_.get(id);
    touch_locked(id);
    return data;
  } catch (const Error&) {
    // Corrupted or vanished entry: forget it so the caller refetches.
    used_ -= it->second.size;
    lru_.erase(it->second.lru_pos);
    slots_.erase(it);
    store_.remove(id);
    if (pinned_.erase(id) != 0) save_pins_locked();
    return std::nullopt;
  }
}

bool CacheManager::contains(const ObjectId& id) const {
  std::lock_guard lock(mu_);
  return slots_.count(id) != 0;
}

void CacheManager::evict_locked(std::uint64_t target_used) {
  for (auto it = lru_.begin(); it != lru_.end() && used_ > target_used;) {
    if (pinned_.count(*it) != 0) {
      ++it;
      continue;
    }
    auto slot = slots_.find(*it);
    used_ -= slot->second.size;
    store_.remove(*it);
    slots_.erase(slot);
    it = lru_.erase(it);
  }
}

void CacheManager::insert(const ObjectId& id, std::string_view compressed) {
  const std::uint64_t size = compressed.size();
  if (size > quota_) {
    throw Error(ErrorKind::QuotaTooSmall, "object " + id.hex() + " is " + std::to_string(size) +
                                              " bytes, quota " + std::to_string(quota_));
  }
  std::lock_guard lock(mu_);
  if (slots_.count(id) != 0) {
    touch_locked(id);
    return;
  }
  if (used_ + size > quota_) {
    auto low_water = static_cast<std::uint64_t>(static_cast<double>(quota_) * kEvictionLowWater);
    evict_locked(low_water > size ? low_water - size : 0);
    if (used_ + size > quota_) {
      throw Error(ErrorKind::QuotaTooSmall,
                  "pinned objects leave no room for " + id.hex());
    }
  }
  store_.put_compressed(id, compressed);
  auto pos = lru_.insert(lru_.end(), id);
  slots_.emplace(id, Slot{size, pos});
  used_ += size;
}

void CacheManager::pin(const ObjectId& id) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(id);
  if (it == slots_.end()) throw Error(ErrorKind::NotFound, "object " + id.hex() + " not cached");
  if (pinned_.count(id) != 0) return;
  std::uint64_t pinned_total = 0;
  for (const auto& p : pinned_) pinned_total += slots_.at(p).size;
  if (pinned_total + it->second.size > quota_) {
    throw Error(ErrorKind::PinExceedsQuota,
                "pinning " + id.hex() + " exceeds quota " + std::to_string(quota_));
  }
  pinned_.insert(id);
  save_pins_locked();
}

bool CacheManager::is_pinned(const ObjectId& id) const {
  std::lock_guard lock(mu_);
  return pinned_.count(id) != 0;
}

std::set<ObjectId> CacheManager::pinned() const {
  std::lock_guard lock(mu_);
  return pinned_;
}

void CacheManager::unpin_all() {
  std::lock_guard lock(mu_);
  pinned_.clear();
  save_pins_locked();
}

void CacheManager::save_pins_locked() const {
  std::string out;
  for (const auto& id : pinned_) out += id.hex() + "\n";
  write_file_atomic(dir_ / "pinned", out);
}

void CacheManager::evict_to_quota() {
  std::lock_guard lock(mu_);
  evict_locked(quota_);
}

std::uint64_t CacheManager::used_bytes() const {
  std::lock_guard lock(mu_);
  return used_;
}

std::uint64_t CacheManager::pinned_bytes() const {
  std::lock_guard lock(mu_);
  std::uint64_t total = 0;
  for (const auto& p : pinned_) total += slots_.at(p).size;
  return total;
}

std::size_t CacheManager::object_count() const {
  std::lock_guard lock(mu_);
  return slots_.size();
}

std::vector<ObjectId> CacheManager::lru_order() const {
  std::lock_guard lock(mu_);
  return {lru_.begin(), lru_.end()};
}

std::optional<Bytes> CacheManager::cached_manifest(std::string_view selector) const {
  try {
    return read_file(dir_ / "manifests" / percent_encode(selector));
  } catch (const Error&) {
    return std::nullopt;
  }
}

void CacheManager::store_manifest(std::string_view selector, std::string_view bytes) {
  write_file_atomic(dir_ / "manifests" / percent_encode(selector), bytes);
}

// --- PinSet / URLs -----------------------------------------------------------

PinSet PinSet::parse(std::string_view text) {
  PinSet set;
  for (const auto& raw : split_lines(text)) {
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    set.paths.emplace_back(line);
  }
  return set;
}

ParsedUrl ParsedUrl::parse(std::string_view url) {
  ParsedUrl out;
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(ErrorKind::InvalidArgument, "URL lacks scheme: " + std::string(url));
  }
  out.scheme = std::string(url.substr(0, scheme_end));
  if (out.scheme != "http") {
    throw Error(ErrorKind::InvalidArgument, "only http:// is supported: " + std::string(url));
  }
  std::string_view rest = url.substr(scheme_end + 3);
  std::size_t slash = rest.find('/');
  std::string_view authority = rest.substr(0, slash);
  if (slash != std::string_view::npos) out.path = std::string(rest.substr(slash));
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  std::size_t colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    std::string_view port = authority.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), out.port);
    if (ec != std::errc() || ptr != port.data() + port.size() || out.port <= 0 || out.port > 65535) {
      throw Error(ErrorKind::InvalidArgument, "bad port in " + std::string(url));
    }
    authority = authority.substr(0, colon);
  }
  if (authority.empty()) throw Error(ErrorKind::InvalidArgument, "URL lacks host: " + std::string(url));
  out.host = std::string(authority);
  return out;
}

std::string ParsedUrl::origin() const {
  return scheme + "://" + host + ":" + std::to_string(port);
}

namespace {

void configure(httplib::Client& cli, const std::optional<std::string>& proxy,
               std::chrono::milliseconds timeout) {
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_keep_alive(false);
  if (proxy && !proxy->empty()) {
    ParsedUrl p = ParsedUrl::parse(*proxy);
    cli.set_proxy(p.host, p.port);
  }
}

}  // namespace

Bytes http_get(const std::string& url, const std::optional<std::string>& proxy) {
  ParsedUrl u = ParsedUrl::parse(url);
  httplib::Client cli(u.host, u.port);
  configure(cli, proxy, std::chrono::milliseconds(10000));
  auto res = cli.Get(u.path.empty() ? "/" : u.path);
  if (!res) throw Error(ErrorKind::Unreachable, url + ": " + httplib::to_string(res.error()));
  if (res->status == 404) throw Error(ErrorKind::NotFound, url);
  if (res->status != 200) {
    throw Error(ErrorKind::Unreachable, url + ": HTTP " + std::to_string(res->status));
  }
  return res->body;
}

// --- RepoClient --------------------------------------------------------------

RepoClient::RepoClient(std::string base_url, std::string repo_name,
                       std::shared_ptr<CacheManager> cache, ClientOptions options)
    : base_url_(std::move(base_url)),
      repo_name_(std::move(repo_name)),
      cache_(std::move(cache)),
      options_(std::move(options)),
      url_(ParsedUrl::parse(base_url_)),
      instance_id_(++g_client_instances) {}

RepoClient::~RepoClient() = default;

std::optional<RepoClient::Response> RepoClient::get(const std::string& path_and_query) {
  const std::string target = url_.path + "/" + repo_name_ + path_and_query;
  for (int attempt = 0;; ++attempt) {
    httplib::Client cli(url_.host, url_.port);
    configure(cli, options_.proxy, options_.timeout);
    if (auto res = cli.Get(target)) {
      requests_.fetch_add(1);
      bytes_.fetch_add(res->body.size());
      return Response{res->status, std::move(res->body)};
    }
    if (attempt >= options_.retry.connect_retries) return std::nullopt;
    std::this_thread::sleep_for(options_.retry.backoff_base * (1 << attempt));
  }
}

RepoClient::ManifestResult RepoClient::fetch_manifest(std::string_view selector) {
  auto res = get("/manifest?selector=" + percent_encode(selector));
  if (res && res->status == 404) {
    throw Error(ErrorKind::UnknownSelector, "'" + std::string(selector) + "'");
  }
  ManifestResult result;
  if (res && res->status == 200) {
    result.manifest = decode_manifest(res->body);
    if (result.manifest.repo_name != repo_name_) {
      throw Error(ErrorKind::InvariantError, "server sent manifest of repository " +
                                                 result.manifest.repo_name);
    }
    cache_->store_manifest(selector, res->body);
    cache_->store_manifest("@" + std::to_string(result.manifest.revision), res->body);
  } else {
    auto cached = cache_->cached_manifest(selector);
    if (!cached) {
      throw Error(ErrorKind::Unreachable, base_url_ + " (no cached manifest for '" +
                                              std::string(selector) + "')");
    }
    result.manifest = decode_manifest(*cached);
    result.from_cache = true;
  }
  current_ = result.manifest;
  return result;
}

Bytes RepoClient::download_object(const ObjectId& id) {
  const std::string path =
      "/data/" + std::string(id.prefix()) + "/" + std::string(id.suffix());
  for (int attempt = 0; attempt <= options_.retry.integrity_retries; ++attempt) {
    auto res = get(path);
    if (!res) throw Error(ErrorKind::Unreachable, base_url_ + " (object " + id.hex() + ")");
    if (res->status == 404) throw Error(ErrorKind::NotFound, "object " + id.hex() + " on server");
    if (res->status != 200) {
      throw Error(ErrorKind::Unreachable, "HTTP " + std::to_string(res->status) + " for " + id.hex());
    }
    Bytes raw;
    try {
      raw = decode_verified(id, res->body);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::IntegrityError) continue;
      throw;
    }
    objects_.fetch_add(1);
    cache_->insert(id, res->body);
    return raw;
  }
  throw Error(ErrorKind::IntegrityError, "object " + id.hex() + " failed verification after retry");
}

Bytes RepoClient::fetch_object(const ObjectId& id) {
  if (auto hit = cache_->lookup(id)) return std::move(*hit);

  std::promise<Bytes> promise;
  std::shared_future<Bytes> future;
  bool leader = false;
  {
    std::lock_guard lock(mu_);
    auto it = inflight_.find(id);
    if (it != inflight_.end()) {
      future = it->second;
    } else {
      future = promise.get_future().share();
      inflight_.emplace(id, future);
      leader = true;
    }
  }
  if (!leader) return future.get();

  try {
    // A previous leader may have filled the cache between our miss and now.
    if (auto hit = cache_->lookup(id)) {
      promise.set_value(std::move(*hit));
    } else {
      promise.set_value(download_object(id));
    }
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
  {
    std::lock_guard lock(mu_);
    inflight_.erase(id);
  }
  return future.get();
}

PinReport RepoClient::pin(const Catalog& catalog, const PinSet& pinset) {
  PinReport report;
  std::map<ObjectId, std::uint64_t> wanted;
  std::vector<std::pair<std::string, ObjectId>> files;
  for (const auto& path : pinset.paths) {
    const Dirent* e = is_canonical_path(path) ? catalog.find(path) : nullptr;
    if (e == nullptr) {
      report.unknown.push_back(path);
    } else if (e->kind != EntryKind::File) {
      report.skipped.push_back(path);
    } else {
      files.emplace_back(path, *e->content);
      wanted.emplace(*e->content, e->size);
    }
  }
  std::uint64_t total = 0;
  for (const auto& [id, size] : wanted) total += size;
  if (total > cache_->quota_bytes()) {
    throw Error(ErrorKind::PinExceedsQuota, std::to_string(total) + " pinned bytes, quota " +
                                                std::to_string(cache_->quota_bytes()));
  }
  for (const auto& [path, id] : files) {
    fetch_object(id);
    cache_->pin(id);
    report.pinned.push_back(path);
  }
  report.pinned_bytes = total;
  return report;
}

TransferStats RepoClient::stats() const {
  return {requests_.load(), bytes_.load(), objects_.load()};
}

// --- RepoServer --------------------------------------------------------------

struct RepoServer::Impl {
  httplib::Server server;
  std::thread thread;
  std::mutex filter_mu;
  std::function<void(const ObjectId&, Bytes&)> filter;
};

RepoServer::RepoServer(fs::path repo_root) : impl_(std::make_unique<Impl>()), root_(std::move(repo_root)) {
  repo_name_ = Repository::open(root_).name();
  auto& svr = impl_->server;

  auto repo_matches = [this](const httplib::Request& req) {
    return req.matches[1] == Repository::open(root_).name();
  };

  svr.Get(R"(/([^/]+)/manifest)", [this, repo_matches](const httplib::Request& req,
                                                         httplib::Response& res) {
    requests_.fetch_add(1);
    if (!repo_matches(req) || !req.has_param("selector")) {
      res.status = 404;
      return;
    }
    try {
      Repository repo = Repository::open(root_);
      auto rev = resolve_selector(repo.tags(), repo.revisions(), req.get_param_value("selector"));
      if (!rev) {
        res.status = 404;
        res.set_content("UnknownSelector\n", "text/plain");
        return;
      }
      res.set_content(repo.manifest_bytes(*rev), "text/plain");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(e.what(), "text/plain");
    }
  });

  svr.Get(R"(/([^/]+)/data/([0-9a-f]{2})/([0-9a-f]{62}))",
          [this, repo_matches](const httplib::Request& req, httplib::Response& res) {
            requests_.fetch_add(1);
            if (!repo_matches(req)) {
              res.status = 404;
              return;
            }
            ObjectId id = ObjectId::parse(req.matches[2].str() + req.matches[3].str());
            Bytes body;
            try {
              body = ObjectStore(root_).get_compressed(id);
            } catch (const Error&) {
              res.status = 404;
              return;
            }
            {
              std::lock_guard lock(impl_->filter_mu);
              if (impl_->filter) impl_->filter(id, body);
            }
            res.set_content(std::move(body), "application/octet-stream");
          });

  svr.Get(R"(/([^/]+)/tags)", [this, repo_matches](const httplib::Request& req,
                                                     httplib::Response& res) {
    requests_.fetch_add(1);
    if (!repo_matches(req)) {
      res.status = 404;
      return;
    }
    res.set_content(encode_tags(Repository::open(root_).tags()), "text/plain");
  });
}

RepoServer::~RepoServer() { stop(); }

int RepoServer::bind(const std::string& host, int port) {
  host_ = host;
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
    if (port_ < 0) throw Error(ErrorKind::IoError, "cannot bind " + host);
  } else {
    if (!impl_->server.bind_to_port(host, port)) {
      throw Error(ErrorKind::IoError, "cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  return port_;
}

void RepoServer::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void RepoServer::run() { impl_->server.listen_after_bind(); }

void RepoServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string RepoServer::base_url() const {
  std::string host = (host_ == "0.0.0.0" || host_.empty()) ? "127.0.0.1" : host_;
  return "http://" + host + ":" + std::to_string(port_);
}

void RepoServer::set_object_filter(std::function<void(const ObjectId&, Bytes&)> filter) {
  std::lock_guard lock(impl_->filter_mu);
  impl_->filter = std::move(filter);
}

}  // namespace ucvm
