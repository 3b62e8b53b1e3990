#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "flowpipe/codec.hpp"
#include "flowpipe/net.hpp"
#include "flowpipe/protocol.hpp"
#include "flowpipe/worker.hpp"

namespace flowpipe::remote {

struct ServerOptions {
  std::string host = "0.0.0.0";
  std::uint16_t port = 0;  // 0: ephemeral
  int slots = 1;
};

class ServerCore;

/// Worker server: answers HELLO with the registry's names and its slot
/// count, and evaluates up to `slots` CALLs at a time across all connections.
class WorkerServer {
 public:
  /// Binds immediately; throws Error(PortInUse).
  WorkerServer(std::shared_ptr<WorkerRegistry> registry, ServerOptions options);
  ~WorkerServer();
  WorkerServer(const WorkerServer&) = delete;
  WorkerServer& operator=(const WorkerServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  /// Serves until shutdown() or a SHUTDOWN message.
  void run();
  void shutdown();
  /// Highest number of CALLs evaluated at the same time so far.
  int peak_concurrency() const;

 private:
  std::shared_ptr<ServerCore> core_;
  net::Fd listener_;
  net::Fd wake_read_;
  net::Fd wake_write_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
};

/// Blocking convenience wrapper used by the CLI.
void serve(std::shared_ptr<WorkerRegistry> registry, ServerOptions options);

/// Serves one already-connected descriptor until it closes or SHUTDOWN
/// arrives. Used by out-of-process lanes.
void serve_connection(std::shared_ptr<WorkerRegistry> registry, net::Fd fd, int slots);

struct ConnectOptions {
  std::string client_name = "flowpipe";
  CodecId codec = CodecId::Text;
  int protocol_version = protocol::kVersion;
  std::chrono::milliseconds timeout{3000};
};

/// Client side of one server connection. Calls may be issued from many
/// threads; at most `slots()` are outstanding at once and RESULTs are matched
/// by call_id in whatever order they arrive.
class RemoteSlotPool {
 public:
  /// Throws Error(Unreachable) or Error(VersionMismatch).
  static std::shared_ptr<RemoteSlotPool> connect(const std::string& host, std::uint16_t port,
                                                 ConnectOptions options = {});
  /// Adopts a connected descriptor (out-of-process lanes) and handshakes.
  static std::shared_ptr<RemoteSlotPool> adopt(net::Fd fd, std::string label,
                                               ConnectOptions options = {});
  ~RemoteSlotPool();
  RemoteSlotPool(const RemoteSlotPool&) = delete;
  RemoteSlotPool& operator=(const RemoteSlotPool&) = delete;

  /// Never throws: transport failures become Fault{remote_error}.
  Envelope call(const WorkerChain& chain, std::string_view piper, std::vector<Envelope> inbox);

  int slots() const noexcept { return slots_; }
  const std::vector<std::string>& worker_names() const noexcept { return worker_names_; }
  const std::string& label() const noexcept { return label_; }
  CodecId codec() const noexcept { return codec_; }
  bool alive() const noexcept { return alive_; }
  int peak_outstanding() const;

  /// Sends SHUTDOWN to the server (best effort).
  void send_shutdown();
  void close();

 private:
  RemoteSlotPool() = default;
  void handshake(const ConnectOptions& options);
  void reader_loop();
  void fail_all(const std::string& why);

  net::Fd fd_;
  std::string label_;
  CodecId codec_ = CodecId::Text;
  int slots_ = 1;
  std::vector<std::string> worker_names_;

  std::mutex write_mu_;
  mutable std::mutex mu_;
  std::condition_variable slot_cv_;
  int outstanding_ = 0;
  int peak_outstanding_ = 0;
  std::uint64_t next_call_id_ = 1;
  std::map<std::uint64_t, std::promise<Envelope>> pending_;
  std::atomic<bool> alive_{false};
  std::string failure_;
  std::thread reader_;
};

}  // namespace flowpipe::remote
