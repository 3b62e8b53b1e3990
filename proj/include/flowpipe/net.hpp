#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace flowpipe::net {

/// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) noexcept : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) reset(std::exchange(other.fd_, -1));
    return *this;
  }
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset(int fd = -1) noexcept;

 private:
  int fd_ = -1;
};

/// Process-wide SIGPIPE suppression; writes report EPIPE instead.
void ignore_sigpipe();

/// Throws Error(PortInUse) when the port is taken, Error(TransportError) otherwise.
Fd tcp_listen(const std::string& host, std::uint16_t port, int backlog = 64);
std::uint16_t local_port(int fd);
/// Throws Error(Unreachable).
Fd tcp_connect(const std::string& host, std::uint16_t port,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(3000));

/// Throws Error(TransportError) on any failure.
void write_all(int fd, std::string_view data);
/// Reads exactly n bytes. Returns false on EOF before the first byte; throws
/// Error(TransportError) on EOF mid-read, I/O failure or timeout (ms, -1 = none).
bool read_exact(int fd, char* buf, std::size_t n, int timeout_ms = -1);
/// poll() for readability; false on timeout.
bool wait_readable(int fd, int timeout_ms);

std::string host_name();

}  // namespace flowpipe::net
