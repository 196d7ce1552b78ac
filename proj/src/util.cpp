#include "ucvm/util.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "ucvm/error.hpp"

namespace ucvm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::IntegrityError: return "IntegrityError";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::InvariantError: return "InvariantError";
    case ErrorKind::StoreError: return "StoreError";
    case ErrorKind::DuplicateSnapshotName: return "DuplicateSnapshotName";
    case ErrorKind::UnknownSelector: return "UnknownSelector";
    case ErrorKind::InvalidPackage: return "InvalidPackage";
    case ErrorKind::Unreachable: return "Unreachable";
    case ErrorKind::QuotaTooSmall: return "QuotaTooSmall";
    case ErrorKind::PinExceedsQuota: return "PinExceedsQuota";
    case ErrorKind::ParentNotFound: return "ParentNotFound";
    case ErrorKind::ParentNotADirectory: return "ParentNotADirectory";
    case ErrorKind::IsADirectory: return "IsADirectory";
    case ErrorKind::NotADirectory: return "NotADirectory";
    case ErrorKind::NotARegularFile: return "NotARegularFile";
    case ErrorKind::AlreadyExists: return "AlreadyExists";
    case ErrorKind::NotEmpty: return "NotEmpty";
    case ErrorKind::ReservedName: return "ReservedName";
    case ErrorKind::InvalidPath: return "InvalidPath";
    case ErrorKind::ReadOnly: return "ReadOnly";
    case ErrorKind::Closed: return "Closed";
    case ErrorKind::Locked: return "Locked";
    case ErrorKind::MissingRequiredKey: return "MissingRequiredKey";
    case ErrorKind::MalformedBlock: return "MalformedBlock";
    case ErrorKind::NoScratchAvailable: return "NoScratchAvailable";
    case ErrorKind::NotBooted: return "NotBooted";
    case ErrorKind::StageConflict: return "StageConflict";
    case ErrorKind::NotPinned: return "NotPinned";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::error_code ec;
    if (!fs::exists(path, ec)) {
      throw Error(ErrorKind::NotFound, path.string());
    }
    throw Error(ErrorKind::IoError, "cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw Error(ErrorKind::IoError, "read failed: " + path.string());
  return std::move(buf).str();
}

void write_file_atomic(const fs::path& path, std::string_view data) {
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot create " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorKind::IoError, "write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorKind::IoError, "rename to " + path.string() + " failed");
  }
}

FileLock::FileLock(const fs::path& path, bool try_only) {
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error(ErrorKind::IoError, "cannot open lock " + path.string() +
                                        ": " + std::strerror(errno));
  }
  int rc;
  do {
    rc = ::flock(fd_, LOCK_EX | (try_only ? LOCK_NB : 0));
  } while (rc != 0 && errno == EINTR);
  if (rc != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(ErrorKind::Locked, path.string() + " is held by another user");
  }
}

FileLock::~FileLock() {
  if (fd_ >= 0) ::close(fd_);
}

FileLock::FileLock(FileLock&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

FileLock& FileLock::operator=(FileLock&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

bool is_canonical_path(std::string_view path) {
  if (path.empty() || path.front() != '/') return false;
  if (path == "/") return true;
  if (path.back() == '/') return false;
  std::size_t pos = 1;
  while (pos <= path.size()) {
    std::size_t next = path.find('/', pos);
    if (next == std::string_view::npos) next = path.size();
    std::string_view comp = path.substr(pos, next - pos);
    if (comp.empty() || comp == "." || comp == "..") return false;
    if (comp.find('\0') != std::string_view::npos) return false;
    pos = next + 1;
  }
  return true;
}

void require_canonical_path(std::string_view path) {
  if (!is_canonical_path(path)) {
    throw Error(ErrorKind::InvalidPath, "'" + std::string(path) + "'");
  }
}

std::string parent_path(std::string_view path) {
  if (path == "/") return "/";
  std::size_t slash = path.rfind('/');
  if (slash == 0 || slash == std::string_view::npos) return "/";
  return std::string(path.substr(0, slash));
}

std::string base_name(std::string_view path) {
  if (path == "/") return "";
  std::size_t slash = path.rfind('/');
  return std::string(slash == std::string_view::npos ? path : path.substr(slash + 1));
}

std::string join_path(std::string_view dir, std::string_view name) {
  std::string out(dir);
  if (out.empty() || out.back() != '/') out += '/';
  out += name;
  return out;
}

std::vector<std::string> path_components(std::string_view path) {
  std::vector<std::string> out;
  for (auto& part : split(path, '/')) {
    if (!part.empty()) out.push_back(std::move(part));
  }
  return out;
}

bool path_is_within(std::string_view path, std::string_view dir) {
  if (dir == "/") return !path.empty() && path.front() == '/';
  if (path.size() < dir.size() || path.substr(0, dir.size()) != dir) return false;
  return path.size() == dir.size() || path[dir.size()] == '/';
}

std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  std::size_t b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.emplace_back(s.substr(pos));
      return out;
    }
    out.emplace_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  for (const auto& raw : split_lines(text)) {
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

std::string to_hex(std::string_view bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out += kDigits[c >> 4];
    out += kDigits[c & 0x0f];
  }
  return out;
}

std::string format_rfc3339(Timestamp t) {
  std::time_t secs = static_cast<std::time_t>(t.time_since_epoch().count());
  std::tm tm{};
  ::gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Timestamp parse_rfc3339(std::string_view text) {
  std::tm tm{};
  std::string s(text);
  const char* end = ::strptime(s.c_str(), "%Y-%m-%dT%H:%M:%SZ", &tm);
  if (end == nullptr || *end != '\0') {
    throw Error(ErrorKind::DecodeError, "bad RFC 3339 timestamp '" + s + "'");
  }
  return Timestamp(std::chrono::seconds(::timegm(&tm)));
}

Timestamp now_seconds() {
  return std::chrono::time_point_cast<std::chrono::seconds>(
      std::chrono::system_clock::now());
}

}  // namespace ucvm
