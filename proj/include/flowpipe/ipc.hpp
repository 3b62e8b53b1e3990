#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "flowpipe/codec.hpp"

namespace flowpipe::ipc {

/// Direct producer -> consumer transports. shm and database are reserved
/// identifiers and are rejected with UnsupportedMethod.
enum class Method { Socket, Pipe, File, Shm, Database };

std::string_view method_name(Method method) noexcept;
/// Accepts "socket" (alias "tcp"), "pipe", "file", "shm", "database".
Method parse_method(std::string_view name);
bool method_supported(Method method) noexcept;

/// Small in-band token addressing a staged payload. Redeemable once.
struct Locator {
  Method method = Method::File;
  std::string address;  // socket: host:port; pipe: FIFO path; file: path
  CodecId codec = CodecId::Text;
  std::optional<std::uint64_t> payload_bytes;
  bool one_shot = true;
  std::string token;

  friend bool operator==(const Locator&, const Locator&) = default;
};

/// {"$locator": {...}} so a Locator can travel as an ordinary payload.
Value to_value(const Locator& locator);
std::optional<Locator> locator_from_value(const Value& value);
bool is_locator(const Value& value);

using Clock = std::chrono::system_clock;

struct StagingConfig {
  std::filesystem::path root;         // empty: <temp>/flowpipe-stage
  std::string bind_host = "127.0.0.1";
  std::string advertise_host;         // empty: bind_host
  std::chrono::seconds expiry{300};
  std::function<Clock::time_point()> clock;  // empty: Clock::now
};

/// Producer-side staging state. Each dump_item() stages one payload; the
/// staged resource is released when the consumer redeems it or when
/// reap_expired() finds it older than the expiry window.
class StagingArea {
 public:
  explicit StagingArea(StagingConfig config = {});
  ~StagingArea();
  StagingArea(const StagingArea&) = delete;
  StagingArea& operator=(const StagingArea&) = delete;

  /// Throws Error(UnsupportedMethod) or Error(StagingFailed).
  Locator dump_item(const Value& payload, Method method, CodecId codec);
  std::size_t reap_expired();
  std::size_t reap_expired(Clock::time_point now);
  /// Staged payloads not yet redeemed or reaped.
  std::size_t staged_count();
  const StagingConfig& config() const noexcept { return config_; }

  /// fork() support: hold the lock across the fork; a child forgets the
  /// parent's staged items (their serving threads do not exist there).
  void before_fork();
  void after_fork(bool in_child);

 private:
  struct Staged;
  Clock::time_point now() const;
  void prune_locked();

  StagingConfig config_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<Staged>> staged_;
};

/// Process-wide staging area used by the io.dump_item worker. The root can be
/// set with FLOWPIPE_STAGING_ROOT and the advertised socket host with
/// FLOWPIPE_STAGING_HOST.
StagingArea& default_staging();

struct LoadOptions {
  std::chrono::milliseconds timeout{30000};
};

/// Redeems a Locator. Throws Error(AlreadyRedeemed), Error(Expired),
/// Error(TransportError) or Error(UnsupportedMethod).
Value load_item(const Locator& locator, LoadOptions options = {});

}  // namespace flowpipe::ipc
