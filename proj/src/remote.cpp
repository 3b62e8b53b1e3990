#include "flowpipe/remote.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <deque>

#include "flowpipe/error.hpp"
#include "flowpipe/log.hpp"

namespace flowpipe::remote {

namespace {
constexpr const char* kLogSource = "remote";
}

class ServerCore : public std::enable_shared_from_this<ServerCore> {
 public:
  struct Connection {
    explicit Connection(net::Fd f) : fd(std::move(f)) {}
    net::Fd fd;
    std::mutex write_mu;
    CodecId codec = CodecId::Text;
    std::atomic<bool> open{true};
    std::thread reader;
  };

  ServerCore(std::shared_ptr<WorkerRegistry> registry, int slots)
      : registry_(std::move(registry)), slots_(slots < 1 ? 1 : slots) {
    registry_->freeze();
  }

  std::function<void()> on_shutdown_request;

  void start() {
    for (int i = 0; i < slots_; ++i) slot_threads_.emplace_back([this] { slot_loop(); });
  }

  void adopt(net::Fd fd) {
    auto conn = std::make_shared<Connection>(std::move(fd));
    std::lock_guard lock(mu_);
    std::erase_if(conns_, [](const std::shared_ptr<Connection>& c) {
      if (c->open) return false;
      if (c->reader.joinable()) c->reader.join();
      return true;
    });
    conns_.push_back(conn);
    conn->reader = std::thread([self = shared_from_this(), conn] { self->handle(conn); });
  }

  /// Reader loop for one connection; returns when the peer is gone.
  void handle(const std::shared_ptr<Connection>& conn) {
    try {
      auto first = protocol::read_message(conn->fd.get(), CodecId::Text);
      if (!first || !std::holds_alternative<protocol::Hello>(*first)) {
        log::error(kLogSource, "connection closed before HELLO");
        conn->open = false;
        return;
      }
      const auto& hello = std::get<protocol::Hello>(*first);
      protocol::HelloAck ack;
      ack.worker_names = registry_->names();
      ack.slots = slots_;
      ack.codec = (hello.codec == "bin-v1") ? "bin-v1" : "text-v1";
      {
        std::lock_guard lock(conn->write_mu);
        protocol::write_message(conn->fd.get(), ack, CodecId::Text);
      }
      if (hello.protocol_version != protocol::kVersion) {
        log::error(kLogSource, "protocol version " + std::to_string(hello.protocol_version) +
                                   " from " + hello.client_name + " rejected");
        conn->open = false;
        ::shutdown(conn->fd.get(), SHUT_RDWR);
        return;
      }
      conn->codec = parse_codec(ack.codec);
      log::debug(kLogSource, "client " + hello.client_name + " connected (" + ack.codec + ")");
      for (;;) {
        auto msg = protocol::read_message(conn->fd.get(), conn->codec);
        if (!msg) break;
        if (auto* call = std::get_if<protocol::Call>(&*msg)) {
          std::lock_guard lock(mu_);
          jobs_.push_back(Job{conn, std::move(*call)});
          cv_.notify_one();
        } else if (auto* ping = std::get_if<protocol::Ping>(&*msg)) {
          std::lock_guard lock(conn->write_mu);
          protocol::write_message(conn->fd.get(), protocol::Pong{ping->nonce}, conn->codec);
        } else if (std::holds_alternative<protocol::Shutdown>(*msg)) {
          log::info(kLogSource, "SHUTDOWN received");
          if (on_shutdown_request) on_shutdown_request();
          break;
        } else {
          log::error(kLogSource, "unexpected " + std::string(protocol::type_name(*msg)) +
                                     " from client");
          break;
        }
      }
    } catch (const std::exception& e) {
      if (!stopping_) log::error(kLogSource, std::string("connection error: ") + e.what());
    }
    conn->open = false;
  }

  void stop() {
    std::vector<std::shared_ptr<Connection>> conns;
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
      conns = conns_;
    }
    cv_.notify_all();
    for (auto& t : slot_threads_) t.join();
    slot_threads_.clear();
    for (auto& c : conns) {
      c->open = false;
      ::shutdown(c->fd.get(), SHUT_RDWR);
    }
    for (auto& c : conns) {
      if (c->reader.joinable()) c->reader.join();
    }
  }

  int peak() const { return peak_; }

 private:
  struct Job {
    std::shared_ptr<Connection> conn;
    protocol::Call call;
  };

  void slot_loop() {
    for (;;) {
      Job job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
        if (stopping_) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      const int now = ++active_;
      for (int p = peak_; now > p && !peak_.compare_exchange_weak(p, now);) {
      }
      Envelope result = evaluate(job.call);
      --active_;
      if (!job.conn->open) continue;
      try {
        std::lock_guard lock(job.conn->write_mu);
        protocol::write_message(job.conn->fd.get(),
                                protocol::Result{job.call.call_id, std::move(result)},
                                job.conn->codec);
      } catch (const std::exception& e) {
        log::error(kLogSource, std::string("cannot send RESULT: ") + e.what());
      }
    }
  }

  Envelope evaluate(const protocol::Call& call) {
    const ItemKey key = call.inbox.empty() ? ItemKey{} : call.inbox.front().key();
    for (std::size_t i = 0; i < call.chain.size(); ++i) {
      if (!registry_->contains(call.chain[i].name)) {
        return make_fault(key, call.piper, static_cast<int>(i), error_class::kRemote,
                          "worker '" + call.chain[i].name + "' is not registered on " +
                              net::host_name() + " pid " + std::to_string(::getpid()));
      }
    }
    return apply_chain(*registry_, WorkerChain{call.chain, call.handles_faults}, call.piper,
                       call.inbox);
  }

  std::shared_ptr<WorkerRegistry> registry_;
  int slots_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  bool stopping_ = false;
  std::vector<std::thread> slot_threads_;
  std::vector<std::shared_ptr<Connection>> conns_;
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

WorkerServer::WorkerServer(std::shared_ptr<WorkerRegistry> registry, ServerOptions options)
    : core_(std::make_shared<ServerCore>(std::move(registry), options.slots)) {
  listener_ = net::tcp_listen(options.host, options.port);
  port_ = net::local_port(listener_.get());
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw Error(ErrorCode::TransportError, "pipe");
  wake_read_.reset(fds[0]);
  wake_write_.reset(fds[1]);
  const int wake = wake_write_.get();
  core_->on_shutdown_request = [wake] {
    char c = 'x';
    [[maybe_unused]] auto n = ::write(wake, &c, 1);
  };
}

WorkerServer::~WorkerServer() { shutdown(); }

void WorkerServer::shutdown() {
  if (stopping_.exchange(true)) return;
  char c = 'x';
  [[maybe_unused]] auto n = ::write(wake_write_.get(), &c, 1);
}

void WorkerServer::run() {
  core_->start();
  log::info(kLogSource, "serving on port " + std::to_string(port_));
  for (;;) {
    pollfd fds[2] = {{listener_.get(), POLLIN, 0}, {wake_read_.get(), POLLIN, 0}};
    int n = ::poll(fds, 2, -1);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (fds[1].revents) break;
    if (fds[0].revents & POLLIN) {
      int c = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (c >= 0) core_->adopt(net::Fd(c));
    }
  }
  stopping_ = true;
  listener_.reset();
  core_->stop();
  log::info(kLogSource, "server on port " + std::to_string(port_) + " stopped");
}

int WorkerServer::peak_concurrency() const { return core_->peak(); }

void serve(std::shared_ptr<WorkerRegistry> registry, ServerOptions options) {
  WorkerServer server(std::move(registry), options);
  server.run();
}

void serve_connection(std::shared_ptr<WorkerRegistry> registry, net::Fd fd, int slots) {
  auto core = std::make_shared<ServerCore>(std::move(registry), slots);
  core->start();
  auto conn = std::make_shared<ServerCore::Connection>(std::move(fd));
  core->handle(conn);
  core->stop();
}

// ---------------------------------------------------------------------------

std::shared_ptr<RemoteSlotPool> RemoteSlotPool::connect(const std::string& host,
                                                        std::uint16_t port,
                                                        ConnectOptions options) {
  net::Fd fd = net::tcp_connect(host, port, options.timeout);
  return adopt(std::move(fd), host + ":" + std::to_string(port), options);
}

std::shared_ptr<RemoteSlotPool> RemoteSlotPool::adopt(net::Fd fd, std::string label,
                                                      ConnectOptions options) {
  std::shared_ptr<RemoteSlotPool> pool(new RemoteSlotPool());
  pool->fd_ = std::move(fd);
  pool->label_ = std::move(label);
  pool->handshake(options);
  pool->alive_ = true;
  pool->reader_ = std::thread([p = pool.get()] { p->reader_loop(); });
  return pool;
}

void RemoteSlotPool::handshake(const ConnectOptions& options) {
  std::optional<protocol::Message> reply;
  try {
    protocol::write_message(fd_.get(),
                            protocol::Hello{options.protocol_version, options.client_name,
                                            std::string(codec_name(options.codec))},
                            CodecId::Text);
    reply = protocol::read_message(fd_.get(), CodecId::Text,
                                   static_cast<int>(options.timeout.count()));
  } catch (const Error& e) {
    throw Error(ErrorCode::Unreachable, label_ + ": handshake failed: " + e.what());
  }
  if (!reply || !std::holds_alternative<protocol::HelloAck>(*reply)) {
    throw Error(ErrorCode::Unreachable, label_ + ": no HELLO_ACK");
  }
  const auto& ack = std::get<protocol::HelloAck>(*reply);
  if (ack.protocol_version != options.protocol_version) {
    fd_.reset();
    throw Error(ErrorCode::VersionMismatch,
                label_ + " speaks protocol " + std::to_string(ack.protocol_version) +
                    ", client speaks " + std::to_string(options.protocol_version));
  }
  codec_ = parse_codec(ack.codec);
  slots_ = ack.slots < 1 ? 1 : ack.slots;
  worker_names_ = ack.worker_names;
}

RemoteSlotPool::~RemoteSlotPool() { close(); }

void RemoteSlotPool::close() {
  alive_ = false;
  if (fd_) ::shutdown(fd_.get(), SHUT_RDWR);
  if (reader_.joinable()) reader_.join();
  slot_cv_.notify_all();
}

void RemoteSlotPool::send_shutdown() {
  try {
    std::lock_guard lock(write_mu_);
    protocol::write_message(fd_.get(), protocol::Shutdown{}, codec_);
  } catch (const std::exception&) {
  }
}

int RemoteSlotPool::peak_outstanding() const {
  std::lock_guard lock(mu_);
  return peak_outstanding_;
}

void RemoteSlotPool::reader_loop() {
  std::string why = "connection closed";
  try {
    for (;;) {
      auto msg = protocol::read_message(fd_.get(), codec_);
      if (!msg) break;
      if (auto* result = std::get_if<protocol::Result>(&*msg)) {
        std::lock_guard lock(mu_);
        auto it = pending_.find(result->call_id);
        if (it == pending_.end()) {
          log::error(kLogSource, label_ + ": RESULT for unknown call " +
                                     std::to_string(result->call_id));
          continue;
        }
        it->second.set_value(std::move(result->envelope));
        pending_.erase(it);
      }
    }
  } catch (const std::exception& e) {
    why = e.what();
  }
  fail_all(why);
}

void RemoteSlotPool::fail_all(const std::string& why) {
  std::lock_guard lock(mu_);
  alive_ = false;
  failure_ = why;
  // The promises carry their own fault; callers see remote_error envelopes.
  for (auto& [id, promise] : pending_) {
    promise.set_exception(std::make_exception_ptr(Error(ErrorCode::TransportError, why)));
  }
  pending_.clear();
  slot_cv_.notify_all();
}

Envelope RemoteSlotPool::call(const WorkerChain& chain, std::string_view piper,
                              std::vector<Envelope> inbox) {
  const ItemKey key = inbox.empty() ? ItemKey{} : inbox.front().key();
  auto lost = [&](const std::string& why) {
    return make_fault(key, std::string(piper), -1, error_class::kRemote,
                      "lost connection to " + label_ + ": " + why);
  };

  std::future<Envelope> result;
  std::uint64_t id = 0;
  {
    std::unique_lock lock(mu_);
    slot_cv_.wait(lock, [&] { return outstanding_ < slots_ || !alive_; });
    if (!alive_) return lost(failure_.empty() ? "closed" : failure_);
    id = next_call_id_++;
    result = pending_[id].get_future();
    ++outstanding_;
    peak_outstanding_ = std::max(peak_outstanding_, outstanding_);
  }
  auto release = [&] {
    std::lock_guard lock(mu_);
    --outstanding_;
    slot_cv_.notify_one();
  };

  try {
    protocol::Call msg{id, std::string(piper), chain.stages, chain.handles_faults,
                       std::move(inbox)};
    std::lock_guard lock(write_mu_);
    protocol::write_message(fd_.get(), msg, codec_);
  } catch (const std::exception& e) {
    std::unique_lock lock(mu_);
    if (pending_.erase(id) > 0) {
      --outstanding_;
      slot_cv_.notify_one();
      lock.unlock();
      return lost(e.what());
    }
  }

  try {
    Envelope env = result.get();
    release();
    return env;
  } catch (const std::exception& e) {
    release();
    return lost(e.what());
  }
}

}  // namespace flowpipe::remote
