#include "flowpipe/ipc.hpp"

#include <openssl/rand.h>

#include <fcntl.h>
#include <poll.h>
#include <pthread.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <thread>
#include <unordered_set>

#include "flowpipe/error.hpp"
#include "flowpipe/log.hpp"
#include "flowpipe/net.hpp"

namespace flowpipe::ipc {

namespace {

constexpr const char* kLogSource = "ipc";

std::string random_token() {
  // RAND_bytes reseeds after fork, so a child never repeats its parent's tokens.
  unsigned char raw[16];
  if (RAND_bytes(raw, sizeof(raw)) != 1) throw Error(ErrorCode::StagingFailed, "no randomness");
  char buf[33];
  for (std::size_t i = 0; i < sizeof(raw); ++i) std::snprintf(buf + 2 * i, 3, "%02x", raw[i]);
  return buf;
}

std::string length_header(std::uint64_t n) {
  std::string out(8, '\0');
  for (int i = 7; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = static_cast<char>(n & 0xff);
    n >>= 8;
  }
  return out;
}

std::uint64_t parse_header(const char* p) {
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n = (n << 8) | static_cast<unsigned char>(p[i]);
  return n;
}

/// Tokens redeemed or expired in this process.
struct Ledger {
  std::mutex mu;
  std::unordered_set<std::string> claimed;
  std::unordered_set<std::string> expired;
};

Ledger& ledger() {
  static Ledger* l = [] {
    auto* created = new Ledger();
    pthread_atfork([] { ledger().mu.lock(); }, [] { ledger().mu.unlock(); },
                   [] { ledger().mu.unlock(); });
    return created;
  }();
  return *l;
}

void mark_expired(const std::string& token) {
  std::lock_guard lock(ledger().mu);
  ledger().expired.insert(token);
}

/// Writes `data` to a non-blocking descriptor, giving up when `cancel` is set.
bool write_cancellable(int fd, std::string_view data, const std::atomic<bool>& cancel) {
  std::size_t off = 0;
  while (off < data.size()) {
    if (cancel) return false;
    ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        pollfd p{fd, POLLOUT, 0};
        ::poll(&p, 1, 100);
        continue;
      }
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

std::string read_framed(int fd, int timeout_ms) {
  char header[8];
  if (!net::read_exact(fd, header, 8, timeout_ms)) {
    throw Error(ErrorCode::TransportError, "producer closed before sending");
  }
  const std::uint64_t n = parse_header(header);
  std::string body(n, '\0');
  if (n > 0 && !net::read_exact(fd, body.data(), n, timeout_ms)) {
    throw Error(ErrorCode::TransportError, "short payload");
  }
  return body;
}

Value decode_payload(std::string_view bytes, CodecId codec) {
  try {
    return decode(bytes, codec);
  } catch (const Error& e) {
    throw Error(ErrorCode::TransportError, std::string("corrupt staged payload: ") + e.what());
  }
}

}  // namespace

std::string_view method_name(Method method) noexcept {
  switch (method) {
    case Method::Socket: return "socket";
    case Method::Pipe: return "pipe";
    case Method::File: return "file";
    case Method::Shm: return "shm";
    case Method::Database: return "database";
  }
  return "file";
}

Method parse_method(std::string_view name) {
  if (name == "socket" || name == "tcp") return Method::Socket;
  if (name == "pipe") return Method::Pipe;
  if (name == "file") return Method::File;
  if (name == "shm") return Method::Shm;
  if (name == "database") return Method::Database;
  throw Error(ErrorCode::UnsupportedMethod, "unknown transport '" + std::string(name) + "'");
}

bool method_supported(Method method) noexcept {
  switch (method) {
    case Method::Socket:
    case Method::File:
      return true;
    case Method::Pipe:
#if defined(__unix__) || defined(__APPLE__)
      return true;
#else
      return false;
#endif
    case Method::Shm:
    case Method::Database:
      return false;
  }
  return false;
}

Value to_value(const Locator& locator) {
  Value inner{{"method", method_name(locator.method)},
              {"address", locator.address},
              {"codec", codec_name(locator.codec)},
              {"one_shot", locator.one_shot},
              {"token", locator.token}};
  if (locator.payload_bytes) inner["bytes"] = *locator.payload_bytes;
  return Value{{"$locator", std::move(inner)}};
}

bool is_locator(const Value& value) {
  return value.is_object() && value.size() == 1 && value.contains("$locator");
}

std::optional<Locator> locator_from_value(const Value& value) {
  if (!is_locator(value)) return std::nullopt;
  try {
    const Value& v = value.at("$locator");
    Locator l;
    l.method = parse_method(v.at("method").get<std::string>());
    l.address = v.at("address").get<std::string>();
    l.codec = parse_codec(v.at("codec").get<std::string>());
    l.one_shot = v.value("one_shot", true);
    l.token = v.at("token").get<std::string>();
    if (v.contains("bytes")) l.payload_bytes = v.at("bytes").get<std::uint64_t>();
    return l;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------

struct StagingArea::Staged {
  std::string token;
  Method method = Method::File;
  Clock::time_point created;
  std::filesystem::path path;
  std::shared_ptr<std::atomic<bool>> cancel = std::make_shared<std::atomic<bool>>(false);
  std::shared_ptr<std::atomic<bool>> done = std::make_shared<std::atomic<bool>>(false);
  std::thread worker;

  void release() {
    *cancel = true;
    if (worker.joinable()) worker.join();
    std::error_code ec;
    if (method == Method::Pipe) {
      std::filesystem::remove(path, ec);
      std::filesystem::remove(path.string() + ".claim", ec);
    } else if (method == Method::File) {
      std::filesystem::remove(path, ec);
    }
  }
};

StagingArea::StagingArea(StagingConfig config) : config_(std::move(config)) {
  if (config_.root.empty()) {
    std::error_code ec;
    auto tmp = std::filesystem::temp_directory_path(ec);
    config_.root = (ec ? std::filesystem::path("/tmp") : tmp) / "flowpipe-stage";
  }
  if (config_.advertise_host.empty()) {
    config_.advertise_host =
        (config_.bind_host == "0.0.0.0" || config_.bind_host.empty()) ? "127.0.0.1"
                                                                       : config_.bind_host;
  }
  net::ignore_sigpipe();
}

StagingArea::~StagingArea() {
  std::lock_guard lock(mu_);
  for (auto& [token, item] : staged_) item->release();
  staged_.clear();
}

Clock::time_point StagingArea::now() const {
  return config_.clock ? config_.clock() : Clock::now();
}

Locator StagingArea::dump_item(const Value& payload, Method method, CodecId codec) {
  if (!method_supported(method)) {
    throw Error(ErrorCode::UnsupportedMethod,
                std::string(method_name(method)) + " transport is not available here");
  }
  auto bytes = std::make_shared<const std::string>(encode(payload, codec));
  auto item = std::make_unique<Staged>();
  item->token = random_token();
  item->method = method;
  item->created = now();

  Locator loc;
  loc.method = method;
  loc.codec = codec;
  loc.payload_bytes = bytes->size();
  loc.token = item->token;

  std::error_code ec;
  if (method != Method::Socket) {
    std::filesystem::create_directories(config_.root, ec);
    if (ec) {
      throw Error(ErrorCode::StagingFailed,
                  "cannot create staging root " + config_.root.string() + ": " + ec.message());
    }
  }

  switch (method) {
    case Method::Socket: {
      net::Fd listener;
      try {
        listener = net::tcp_listen(config_.bind_host, 0, 1);
      } catch (const Error& e) {
        throw Error(ErrorCode::StagingFailed, e.what());
      }
      loc.address = config_.advertise_host + ":" + std::to_string(net::local_port(listener.get()));
      item->worker = std::thread([listener = std::move(listener), bytes, cancel = item->cancel,
                                  done = item->done]() mutable {
        while (!*cancel) {
          if (!net::wait_readable(listener.get(), 100)) continue;
          net::Fd conn(::accept4(listener.get(), nullptr, nullptr, SOCK_CLOEXEC));
          if (!conn) continue;
          listener.reset();  // one payload per socket
          try {
            net::write_all(conn.get(), length_header(bytes->size()));
            net::write_all(conn.get(), *bytes);
          } catch (const std::exception& e) {
            log::error(kLogSource, std::string("socket staging: ") + e.what());
          }
          break;
        }
        *done = true;
      });
      break;
    }
    case Method::Pipe: {
      item->path = config_.root / (item->token + ".fifo");
      if (::mkfifo(item->path.c_str(), 0600) != 0) {
        throw Error(ErrorCode::StagingFailed,
                    "mkfifo " + item->path.string() + ": " + std::strerror(errno));
      }
      loc.address = item->path.string();
      item->worker = std::thread([path = item->path, bytes, cancel = item->cancel,
                                  done = item->done] {
        int fd = -1;
        while (!*cancel) {
          fd = ::open(path.c_str(), O_WRONLY | O_NONBLOCK | O_CLOEXEC);
          if (fd >= 0 || errno != ENXIO) break;
          std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
        if (fd >= 0) {
          const std::string header = length_header(bytes->size());
          if (!write_cancellable(fd, header, *cancel) || !write_cancellable(fd, *bytes, *cancel)) {
            if (!*cancel) log::error(kLogSource, "pipe staging: consumer went away");
          }
          ::close(fd);
        }
        *done = true;
      });
      break;
    }
    case Method::File: {
      item->path = config_.root / (item->token + ".item");
      const auto tmp = config_.root / (item->token + ".tmp");
      {
        std::ofstream out(tmp, std::ios::binary);
        out.write(bytes->data(), static_cast<std::streamsize>(bytes->size()));
        if (!out) {
          throw Error(ErrorCode::StagingFailed, "cannot write " + tmp.string());
        }
      }
      std::filesystem::rename(tmp, item->path, ec);
      if (ec) throw Error(ErrorCode::StagingFailed, "rename: " + ec.message());
      loc.address = item->path.string();
      break;
    }
    default:
      throw Error(ErrorCode::UnsupportedMethod, std::string(method_name(method)));
  }

  log::debug(kLogSource, "staged " + std::to_string(bytes->size()) + " bytes via " +
                             std::string(method_name(method)) + " as " + item->token);
  std::lock_guard lock(mu_);
  prune_locked();
  staged_.emplace(item->token, std::move(item));
  return loc;
}

void StagingArea::prune_locked() {
  for (auto it = staged_.begin(); it != staged_.end();) {
    Staged& s = *it->second;
    bool finished = false;
    if (s.method == Method::File) {
      finished = !std::filesystem::exists(s.path);
    } else {
      finished = *s.done;
    }
    if (finished) {
      s.release();
      it = staged_.erase(it);
    } else {
      ++it;
    }
  }
}

std::size_t StagingArea::staged_count() {
  std::lock_guard lock(mu_);
  prune_locked();
  return staged_.size();
}

std::size_t StagingArea::reap_expired() { return reap_expired(now()); }

std::size_t StagingArea::reap_expired(Clock::time_point at) {
  std::lock_guard lock(mu_);
  prune_locked();
  std::size_t released = 0;
  for (auto it = staged_.begin(); it != staged_.end();) {
    if (at - it->second->created > config_.expiry) {
      mark_expired(it->first);
      it->second->release();
      log::info(kLogSource, "expired staged payload " + it->first);
      it = staged_.erase(it);
      ++released;
    } else {
      ++it;
    }
  }
  return released;
}

void StagingArea::before_fork() { mu_.lock(); }

void StagingArea::after_fork(bool in_child) {
  if (in_child) {
    // Leaked on purpose: destroying joinable threads that only exist in the
    // parent would terminate the child.
    auto* orphaned = new std::map<std::string, std::unique_ptr<Staged>>();
    orphaned->swap(staged_);
  }
  mu_.unlock();
}

StagingArea& default_staging() {
  static StagingArea* area = [] {
    StagingConfig cfg;
    if (const char* root = std::getenv("FLOWPIPE_STAGING_ROOT")) cfg.root = root;
    if (const char* host = std::getenv("FLOWPIPE_STAGING_HOST")) cfg.advertise_host = host;
    if (const char* bind = std::getenv("FLOWPIPE_STAGING_BIND")) cfg.bind_host = bind;
    auto* created = new StagingArea(cfg);
    pthread_atfork([] { default_staging().before_fork(); },
                   [] { default_staging().after_fork(false); },
                   [] { default_staging().after_fork(true); });
    return created;
  }();
  return *area;
}

// ---------------------------------------------------------------------------

Value load_item(const Locator& locator, LoadOptions options) {
  if (!method_supported(locator.method)) {
    throw Error(ErrorCode::UnsupportedMethod, std::string(method_name(locator.method)));
  }
  {
    std::lock_guard lock(ledger().mu);
    if (ledger().expired.count(locator.token)) {
      throw Error(ErrorCode::Expired, "locator " + locator.token);
    }
    if (!ledger().claimed.insert(locator.token).second) {
      throw Error(ErrorCode::AlreadyRedeemed, "locator " + locator.token);
    }
  }
  const int timeout_ms = static_cast<int>(options.timeout.count());

  switch (locator.method) {
    case Method::Socket: {
      const auto colon = locator.address.rfind(':');
      if (colon == std::string::npos) {
        throw Error(ErrorCode::TransportError, "bad socket address " + locator.address);
      }
      net::Fd fd;
      try {
        fd = net::tcp_connect(locator.address.substr(0, colon),
                              static_cast<std::uint16_t>(std::stoi(locator.address.substr(colon + 1))),
                              options.timeout);
      } catch (const Error& e) {
        throw Error(ErrorCode::TransportError, e.what());
      }
      return decode_payload(read_framed(fd.get(), timeout_ms), locator.codec);
    }
    case Method::Pipe: {
      const std::string claim = locator.address + ".claim";
      net::Fd marker(::open(claim.c_str(), O_CREAT | O_EXCL | O_WRONLY | O_CLOEXEC, 0600));
      if (!marker) {
        if (errno == EEXIST) throw Error(ErrorCode::AlreadyRedeemed, locator.address);
        throw Error(ErrorCode::TransportError, "claim " + claim + ": " + std::strerror(errno));
      }
      struct stat st {};
      if (::stat(locator.address.c_str(), &st) != 0 || !S_ISFIFO(st.st_mode)) {
        ::unlink(claim.c_str());
        throw Error(ErrorCode::TransportError, "no staged FIFO at " + locator.address);
      }
      // Read-write keeps the open from blocking and from reporting EOF before
      // the producer attaches; a vanished producer surfaces as a timeout.
      net::Fd fd(::open(locator.address.c_str(), O_RDWR | O_CLOEXEC));
      if (!fd) throw Error(ErrorCode::TransportError, "open " + locator.address);
      std::string body = read_framed(fd.get(), timeout_ms);
      ::unlink(locator.address.c_str());
      return decode_payload(body, locator.codec);
    }
    case Method::File: {
      const std::string claimed = locator.address + ".claimed." + random_token();
      if (::rename(locator.address.c_str(), claimed.c_str()) != 0) {
        if (errno == ENOENT) {
          throw Error(ErrorCode::AlreadyRedeemed, "nothing staged at " + locator.address);
        }
        throw Error(ErrorCode::TransportError, "claim " + locator.address + ": " +
                                                   std::strerror(errno));
      }
      std::ifstream in(claimed, std::ios::binary);
      std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      in.close();
      ::unlink(claimed.c_str());
      return decode_payload(body, locator.codec);
    }
    default:
      throw Error(ErrorCode::UnsupportedMethod, std::string(method_name(locator.method)));
  }
}

}  // namespace flowpipe::ipc
