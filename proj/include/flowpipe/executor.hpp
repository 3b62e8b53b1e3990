#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowpipe/channel.hpp"
#include "flowpipe/envelope.hpp"
#include "flowpipe/worker.hpp"

namespace flowpipe {

using SteadyClock = std::chrono::steady_clock;

struct RemoteEndpoint {
  std::string host;
  std::uint16_t port = 0;
  int slots = 1;

  friend bool operator==(const RemoteEndpoint&, const RemoteEndpoint&) = default;
};

struct ExecutorConfig {
  std::string name = "default";
  int lanes_inproc = 0;
  int lanes_outproc = 0;
  std::vector<RemoteEndpoint> remote;
  int stride = 1;
  /// Record text-encoded inbox/result sizes in the dispatch log.
  bool measure_inband = false;

  int total_lanes() const;
  friend bool operator==(const ExecutorConfig& a, const ExecutorConfig& b) {
    return a.name == b.name && a.lanes_inproc == b.lanes_inproc &&
           a.lanes_outproc == b.lanes_outproc && a.remote == b.remote && a.stride == b.stride;
  }
};

/// One unit of work: the assembled inbox of a node for one item.
struct WorkUnit {
  ItemKey key;
  std::vector<Envelope> inbox;
};

/// Pull-based, non-blocking stream of work units. try_pull() is only called
/// from the owning executor's scheduler (or the manager pump for serial
/// nodes). A source that may later produce more items after returning Empty
/// must call notify_ready() when it does.
class TaskSource {
 public:
  enum class Status { Item, Empty, End };
  virtual ~TaskSource() = default;
  virtual Status try_pull(WorkUnit& out) = 0;

  void set_ready_callback(std::function<void()> fn) { ready_ = std::move(fn); }

 protected:
  void notify_ready() const {
    if (ready_) ready_();
  }

 private:
  std::function<void()> ready_;
};

/// A fixed list of payloads, keyed 0..n-1.
class VectorSource : public TaskSource {
 public:
  explicit VectorSource(std::vector<Value> items);
  Status try_pull(WorkUnit& out) override;
  std::uint64_t pulled() const noexcept { return next_; }
  std::uint64_t size() const noexcept { return items_.size(); }

 private:
  std::vector<Value> items_;
  std::uint64_t next_ = 0;
};

/// Reads one reader slot of another task's output channel.
class ChannelSource : public TaskSource {
 public:
  ChannelSource(std::shared_ptr<Channel> channel, std::size_t reader);
  Status try_pull(WorkUnit& out) override;

 private:
  std::shared_ptr<Channel> channel_;
  std::size_t reader_;
};

enum class Outcome { Ok, Fault, Timeout };
std::string_view to_string(Outcome outcome) noexcept;

struct TaskSpec {
  std::string name;  // fault provenance and logs
  WorkerChain chain;
  bool ordered = true;
  std::optional<int> timeout_ms;
  std::shared_ptr<TaskSource> source;
  std::size_t readers = 1;
  /// Applied to every result on the scheduler before delivery.
  std::function<Envelope(Envelope)> finish;
  /// Observes every delivered result (after finish) with its lane latency.
  std::function<void(const Envelope&, SteadyClock::duration, Outcome)> on_result;
};

struct DispatchRecord {
  int task_seq = 0;
  ItemKey key;
  int lane_id = 0;
  SteadyClock::time_point t_dispatch;
  std::optional<SteadyClock::time_point> t_complete;
  std::optional<Outcome> outcome;
  std::uint64_t dispatch_seq = 0;
  std::uint64_t pull_seq = 0;  // position within the task's source
  /// Items of this task dispatched but not yet read by every consumer,
  /// including this one, as seen by the scheduler at dispatch time.
  std::uint64_t outstanding = 0;
  std::size_t in_bytes = 0;    // only with measure_inband
  std::size_t out_bytes = 0;
};

/// Exogenous events in the order the scheduler processed them. Every
/// dispatch decision is a function of this sequence and the sources.
struct TraceEvent {
  enum class Kind { Start, Completion, Timeout, Consumed, SourceReady, Pause, Resume, Stop };
  Kind kind = Kind::Start;
  int task_seq = -1;
  std::uint64_t dispatch_seq = 0;
  std::uint64_t consumed = 0;  // Consumed: min_consumed snapshot
  bool stale = false;          // Completion of an item already timed out
};

class Executor;

/// Result side of an attached task.
class TaskHandle {
 public:
  int task_seq() const noexcept { return task_seq_; }
  const std::string& name() const noexcept { return name_; }
  const std::shared_ptr<Channel>& channel() const noexcept { return channel_; }

  /// Blocks for the next result on `reader`. nullopt = end of stream.
  /// Throws Error(ExecutorStopped) once a stopped task's results are drained.
  std::optional<Envelope> next_result(std::size_t reader = 0);

 private:
  friend class Executor;
  int task_seq_ = 0;
  std::string name_;
  std::shared_ptr<Channel> channel_;
};

/// Shared lane pool evaluating several tasks with stride rotation.
class Executor {
 public:
  struct Impl;

  /// Throws Error(ZeroLanes), Error(InvalidConfig) or Error(RemoteUnreachable).
  Executor(ExecutorConfig config, std::shared_ptr<WorkerRegistry> registry);
  ~Executor();
  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  const ExecutorConfig& config() const;
  int total_lanes() const;
  /// "inproc", "outproc" or "remote:host:port", by lane id.
  std::vector<std::string> lane_kinds() const;

  /// Throws Error(AlreadyStarted).
  std::shared_ptr<TaskHandle> attach_task(TaskSpec spec);
  /// Throws Error(NoTasks). A second call does nothing.
  void start();
  /// Draining stop: no new dispatches, in-flight work is delivered. Idempotent.
  void stop();
  void pause();
  void resume();
  /// Blocks until nothing is in flight.
  void wait_idle();

  bool started() const;
  bool stopped() const;
  std::size_t in_flight() const;
  /// Work units pulled but not yet delivered, per task (in flight or reordering).
  std::vector<ItemKey> held_keys(int task_seq) const;

  std::vector<DispatchRecord> dispatch_log() const;
  std::vector<TraceEvent> scheduler_trace() const;

 private:
  std::shared_ptr<Impl> impl_;
};

std::shared_ptr<Executor> create_executor(ExecutorConfig config,
                                          std::shared_ptr<WorkerRegistry> registry);

}  // namespace flowpipe
