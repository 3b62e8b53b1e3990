#include "flowpipe/executor.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <future>
#include <map>
#include <mutex>
#include <thread>

#include "flowpipe/error.hpp"
#include "flowpipe/log.hpp"
#include "flowpipe/remote.hpp"

namespace flowpipe {

int ExecutorConfig::total_lanes() const {
  int n = lanes_inproc + lanes_outproc;
  for (const auto& r : remote) n += r.slots;
  return n;
}

std::string_view to_string(Outcome outcome) noexcept {
  switch (outcome) {
    case Outcome::Ok: return "ok";
    case Outcome::Fault: return "fault";
    case Outcome::Timeout: return "timeout";
  }
  return "ok";
}

VectorSource::VectorSource(std::vector<Value> items) : items_(std::move(items)) {}

TaskSource::Status VectorSource::try_pull(WorkUnit& out) {
  if (next_ >= items_.size()) return Status::End;
  const ItemKey key{next_, std::nullopt};
  out.key = key;
  out.inbox.clear();
  out.inbox.push_back(Envelope::payload(key, items_[static_cast<std::size_t>(next_)]));
  ++next_;
  return Status::Item;
}

ChannelSource::ChannelSource(std::shared_ptr<Channel> channel, std::size_t reader)
    : channel_(std::move(channel)), reader_(reader) {
  channel_->on_push([this] { notify_ready(); });
}

TaskSource::Status ChannelSource::try_pull(WorkUnit& out) {
  Envelope env;
  switch (channel_->try_pop(reader_, env)) {
    case Channel::Poll::Item:
      out.key = env.key();
      out.inbox.clear();
      out.inbox.push_back(std::move(env));
      return Status::Item;
    case Channel::Poll::Empty:
      return Status::Empty;
    case Channel::Poll::End:
    case Channel::Poll::Stopped:
      return Status::End;
  }
  return Status::End;
}

std::optional<Envelope> TaskHandle::next_result(std::size_t reader) {
  Envelope env;
  switch (channel_->pop(reader, env)) {
    case Channel::Poll::Item:
      return env;
    case Channel::Poll::Stopped:
      throw Error(ErrorCode::ExecutorStopped, "task " + name_);
    default:
      return std::nullopt;
  }
}

namespace {

constexpr const char* kLogSource = "executor";

struct Job {
  std::uint64_t dispatch_seq = 0;
  std::shared_ptr<const WorkerChain> chain;
  std::string piper;
  std::vector<Envelope> inbox;
};

struct Event {
  enum class Kind { Completion, Consumed, SourceReady, Control };
  Kind kind = Kind::Completion;
  int task = -1;
  std::uint64_t dispatch_seq = 0;
  std::uint64_t consumed = 0;
  Envelope result;
  SteadyClock::time_point at;
  TraceEvent::Kind control = TraceEvent::Kind::Start;
  std::shared_ptr<std::promise<void>> done;
};

class EventQueue {
 public:
  void post(Event ev) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(ev));
    }
    cv_.notify_one();
  }

  /// false when `deadline` passed with nothing queued.
  bool pop(Event& out, std::optional<SteadyClock::time_point> deadline) {
    std::unique_lock lock(mu_);
    if (deadline) {
      if (!cv_.wait_until(lock, *deadline, [&] { return !q_.empty(); })) return false;
    } else {
      cv_.wait(lock, [&] { return !q_.empty(); });
    }
    out = std::move(q_.front());
    q_.pop_front();
    return true;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> q_;
};

using Evaluate = std::function<Envelope(const Job&)>;

/// One lane: a thread evaluating one job at a time. Abandoning detaches the
/// thread; whatever it is running finishes in the background and its
/// completion is ignored by the scheduler.
class LaneWorker {
 public:
  LaneWorker(Evaluate eval, std::shared_ptr<EventQueue> queue)
      : shared_(std::make_shared<Shared>()) {
    thread_ = std::thread([s = shared_, eval = std::move(eval), queue = std::move(queue)] {
      for (;;) {
        Job job;
        {
          std::unique_lock lock(s->mu);
          s->cv.wait(lock, [&] { return s->job.has_value() || s->quit; });
          if (!s->job) return;
          job = std::move(*s->job);
          s->job.reset();
        }
        Event ev;
        ev.kind = Event::Kind::Completion;
        ev.dispatch_seq = job.dispatch_seq;
        ev.result = eval(job);
        ev.at = SteadyClock::now();
        queue->post(std::move(ev));
        std::lock_guard lock(s->mu);
        if (s->quit) return;
      }
    });
  }

  virtual ~LaneWorker() { shutdown(); }

  void submit(Job job) {
    {
      std::lock_guard lock(shared_->mu);
      shared_->job = std::move(job);
    }
    shared_->cv.notify_one();
  }

  virtual void abandon() {
    {
      std::lock_guard lock(shared_->mu);
      shared_->quit = true;
    }
    shared_->cv.notify_one();
    if (thread_.joinable()) thread_.detach();
  }

  virtual void shutdown() {
    {
      std::lock_guard lock(shared_->mu);
      shared_->quit = true;
    }
    shared_->cv.notify_one();
    if (thread_.joinable()) thread_.join();
  }

 private:
  struct Shared {
    std::mutex mu;
    std::condition_variable cv;
    std::optional<Job> job;
    bool quit = false;
  };
  std::shared_ptr<Shared> shared_;
  std::thread thread_;
};

/// Forked child serving the framed protocol over a socketpair.
class OutprocWorker : public LaneWorker {
 public:
  OutprocWorker(pid_t pid, std::shared_ptr<remote::RemoteSlotPool> pool,
                std::shared_ptr<EventQueue> queue)
      : LaneWorker(
            [pool](const Job& job) {
              return pool->call(WorkerChain{job.chain->stages, job.chain->handles_faults},
                                job.piper, job.inbox);
            },
            std::move(queue)),
        pid_(pid),
        pool_(std::move(pool)) {}

  ~OutprocWorker() override { shutdown(); }

  void abandon() override {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
    LaneWorker::abandon();
  }

  void shutdown() override {
    LaneWorker::shutdown();
    if (pid_ > 0) {
      pool_->send_shutdown();
      pool_->close();
      bool exited = false;
      for (int i = 0; i < 200 && !exited; ++i) {
        exited = ::waitpid(pid_, nullptr, WNOHANG) == pid_;
        if (!exited) std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      if (!exited) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
      }
      pid_ = -1;
    }
  }

 private:
  pid_t pid_;
  std::shared_ptr<remote::RemoteSlotPool> pool_;
};

std::unique_ptr<LaneWorker> spawn_outproc(const std::shared_ptr<WorkerRegistry>& registry,
                                          const std::shared_ptr<EventQueue>& queue,
                                          const std::string& label) {
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
    throw Error(ErrorCode::TransportError, std::string("socketpair: ") + std::strerror(errno));
  }
  const int log_fd = log::sink_fd();
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(sv[0]);
    ::close(sv[1]);
    throw Error(ErrorCode::TransportError, std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::prctl(PR_SET_PDEATHSIG, SIGKILL);
    // Drop inherited descriptors (listeners, other lanes' sockets).
    const int max_fd = static_cast<int>(::sysconf(_SC_OPEN_MAX));
    for (int fd = 3; fd < std::min(max_fd, 4096); ++fd) {
      if (fd != sv[1] && fd != log_fd) ::close(fd);
    }
    try {
      remote::serve_connection(registry, net::Fd(sv[1]), 1);
    } catch (...) {
    }
    ::_exit(0);
  }
  ::close(sv[1]);
  auto pool = remote::RemoteSlotPool::adopt(net::Fd(sv[0]), label);
  return std::make_unique<OutprocWorker>(pid, std::move(pool), queue);
}

std::size_t inband_size(const std::vector<Envelope>& inbox) {
  std::size_t n = 0;
  for (const auto& e : inbox) n += encode(to_value(e), CodecId::Text).size();
  return n;
}

}  // namespace

struct Executor::Impl : std::enable_shared_from_this<Executor::Impl> {
  struct Lane {
    std::string kind;
    std::function<std::unique_ptr<LaneWorker>()> factory;
    std::unique_ptr<LaneWorker> worker;
    bool busy = false;
    bool dead = false;
  };

  struct Task {
    int seq = 0;
    TaskSpec spec;
    std::shared_ptr<const WorkerChain> chain;
    std::shared_ptr<TaskHandle> handle;
    bool source_done = false;
    bool finished = false;
    std::uint64_t pulled = 0;
    std::uint64_t consumed_view = 0;
    std::uint64_t next_release = 0;
    std::map<std::uint64_t, Envelope> reorder;
    std::size_t inflight = 0;

    Channel* channel() const { return handle->channel().get(); }
  };

  struct InFlight {
    int task = 0;
    std::uint64_t pull_seq = 0;
    ItemKey key;
    int lane = 0;
    std::optional<SteadyClock::time_point> deadline;
    SteadyClock::time_point t_dispatch;
    std::size_t log_index = 0;
  };

  ExecutorConfig config;
  std::shared_ptr<WorkerRegistry> registry;
  std::shared_ptr<EventQueue> queue = std::make_shared<EventQueue>();

  mutable std::mutex mu;
  std::condition_variable idle_cv;
  std::vector<Lane> lanes;
  std::vector<std::unique_ptr<Task>> tasks;
  std::map<std::uint64_t, InFlight> inflight;
  std::vector<DispatchRecord> log;
  std::vector<TraceEvent> trace;
  bool started = false;
  bool running = false;
  bool paused = false;
  bool stopping = false;
  bool stopped = false;
  std::uint64_t next_dispatch_seq = 0;
  std::size_t cursor = 0;
  int turn_count = 0;
  std::thread scheduler;
  std::thread::id scheduler_id;
  std::mutex stop_mu;

  bool on_scheduler() const { return std::this_thread::get_id() == scheduler_id; }

  void provision() {
    for (int i = 0; i < config.lanes_inproc; ++i) {
      Lane lane;
      lane.kind = "inproc";
      lane.factory = [reg = registry, q = queue] {
        return std::make_unique<LaneWorker>(
            [reg](const Job& job) { return apply_chain(*reg, *job.chain, job.piper, job.inbox); },
            q);
      };
      lanes.push_back(std::move(lane));
    }
    for (int i = 0; i < config.lanes_outproc; ++i) {
      Lane lane;
      lane.kind = "outproc";
      lane.factory = [reg = registry, q = queue, label = config.name + "/outproc" +
                                                       std::to_string(i)] {
        return spawn_outproc(reg, q, label);
      };
      lanes.push_back(std::move(lane));
    }
    for (const auto& ep : config.remote) {
      std::shared_ptr<remote::RemoteSlotPool> pool;
      try {
        pool = remote::RemoteSlotPool::connect(ep.host, ep.port);
      } catch (const Error& e) {
        throw Error(ErrorCode::RemoteUnreachable,
                    ep.host + ":" + std::to_string(ep.port) + " (" + e.what() + ")");
      }
      for (int s = 0; s < ep.slots; ++s) {
        Lane lane;
        lane.kind = "remote:" + ep.host + ":" + std::to_string(ep.port);
        lane.factory = [pool, q = queue] {
          return std::make_unique<LaneWorker>(
              [pool](const Job& job) { return pool->call(*job.chain, job.piper, job.inbox); }, q);
        };
        lanes.push_back(std::move(lane));
      }
    }
    for (auto& lane : lanes) lane.worker = lane.factory();
  }

  int total_lanes() const { return static_cast<int>(lanes.size()); }

  void record(TraceEvent ev) { trace.push_back(ev); }

  // --- scheduler-side helpers (mu held) -----------------------------------

  void deliver(Task& t, std::uint64_t pull_seq, Envelope env) {
    if (!t.spec.ordered) {
      t.channel()->push(std::move(env));
      return;
    }
    t.reorder.emplace(pull_seq, std::move(env));
    for (auto it = t.reorder.find(t.next_release); it != t.reorder.end();
         it = t.reorder.find(t.next_release)) {
      Envelope out = std::move(it->second);
      t.reorder.erase(it);
      ++t.next_release;
      t.channel()->push(std::move(out));
    }
  }

  void complete(std::uint64_t dispatch_seq, Envelope result, SteadyClock::time_point at,
                Outcome outcome) {
    auto it = inflight.find(dispatch_seq);
    InFlight f = it->second;
    inflight.erase(it);
    Task& t = *tasks[static_cast<std::size_t>(f.task)];
    --t.inflight;
    lanes[static_cast<std::size_t>(f.lane)].busy = false;

    if (outcome != Outcome::Timeout) outcome = result.is_fault() ? Outcome::Fault : Outcome::Ok;
    if (t.spec.finish) result = t.spec.finish(std::move(result));
    if (outcome == Outcome::Ok && result.is_fault()) outcome = Outcome::Fault;

    DispatchRecord& rec = log[f.log_index];
    rec.t_complete = at;
    rec.outcome = outcome;
    if (config.measure_inband) rec.out_bytes = encode(to_value(result), CodecId::Text).size();
    if (t.spec.on_result) t.spec.on_result(result, at - f.t_dispatch, outcome);
    deliver(t, f.pull_seq, std::move(result));
  }

  void handle_timeout(std::uint64_t dispatch_seq) {
    const InFlight& f = inflight.at(dispatch_seq);
    Task& t = *tasks[static_cast<std::size_t>(f.task)];
    Lane& lane = lanes[static_cast<std::size_t>(f.lane)];
    log::info(kLogSource, config.name + ": lane " + std::to_string(f.lane) +
                              " abandoned after timeout of " + t.spec.name + " item " +
                              to_string(f.key));
    lane.worker->abandon();
    try {
      lane.worker = lane.factory();
    } catch (const std::exception& e) {
      lane.dead = true;
      log::error(kLogSource, config.name + ": cannot respawn lane " + std::to_string(f.lane) +
                                 ": " + e.what());
    }
    Envelope fault = make_fault(f.key, t.spec.name, -1, error_class::kTimeout,
                                "no result within " + std::to_string(*t.spec.timeout_ms) + " ms");
    complete(dispatch_seq, std::move(fault), SteadyClock::now(), Outcome::Timeout);
  }

  void dispatch(Task& t, WorkUnit unit, int lane_id) {
    const std::uint64_t seq = next_dispatch_seq++;
    const auto now = SteadyClock::now();
    InFlight f;
    f.task = t.seq;
    f.pull_seq = t.pulled++;
    f.key = unit.key;
    f.lane = lane_id;
    f.t_dispatch = now;
    if (t.spec.timeout_ms) f.deadline = now + std::chrono::milliseconds(*t.spec.timeout_ms);
    f.log_index = log.size();

    DispatchRecord rec;
    rec.task_seq = t.seq;
    rec.key = unit.key;
    rec.lane_id = lane_id;
    rec.t_dispatch = now;
    rec.dispatch_seq = seq;
    rec.pull_seq = f.pull_seq;
    rec.outstanding = t.pulled - t.consumed_view;
    if (config.measure_inband) rec.in_bytes = inband_size(unit.inbox);
    log.push_back(rec);

    inflight.emplace(seq, f);
    ++t.inflight;
    Lane& lane = lanes[static_cast<std::size_t>(lane_id)];
    lane.busy = true;
    lane.worker->submit(Job{seq, t.chain, t.spec.name, std::move(unit.inbox)});
  }

  int free_lane() const {
    for (std::size_t i = 0; i < lanes.size(); ++i) {
      if (!lanes[i].busy && !lanes[i].dead) return static_cast<int>(i);
    }
    return -1;
  }

  /// The stride rotation. Runs until no lane is free or every task in turn
  /// has yielded without dispatching.
  void dispatch_round() {
    if (!started || paused || stopping || tasks.empty()) return;
    const std::size_t n = tasks.size();
    const std::uint64_t bound = static_cast<std::uint64_t>(config.stride + total_lanes());
    std::size_t idle_turns = 0;
    for (;;) {
      const int lane = free_lane();
      if (lane < 0) return;
      Task& t = *tasks[cursor];
      if (turn_count < config.stride && !t.source_done && t.pulled - t.consumed_view < bound) {
        WorkUnit unit;
        const auto status = t.spec.source->try_pull(unit);
        if (status == TaskSource::Status::Item) {
          dispatch(t, std::move(unit), lane);
          ++turn_count;
          continue;
        }
        if (status == TaskSource::Status::End) t.source_done = true;
      }
      idle_turns = turn_count == 0 ? idle_turns + 1 : 0;
      cursor = (cursor + 1) % n;
      turn_count = 0;
      if (idle_turns >= n) return;
    }
  }

  /// True when some task closed its channel; a downstream task on this
  /// executor can only observe that in a later round.
  bool finalize_tasks() {
    bool closed = false;
    for (auto& tp : tasks) {
      Task& t = *tp;
      if (!t.finished && t.source_done && t.inflight == 0 && t.reorder.empty()) {
        t.finished = true;
        t.channel()->close();
        closed = true;
      }
    }
    return closed;
  }

  void handle(Event& ev) {
    switch (ev.kind) {
      case Event::Kind::Completion: {
        const bool stale = inflight.count(ev.dispatch_seq) == 0;
        record(TraceEvent{TraceEvent::Kind::Completion, -1, ev.dispatch_seq, 0, stale});
        if (!stale) complete(ev.dispatch_seq, std::move(ev.result), ev.at, Outcome::Ok);
        break;
      }
      case Event::Kind::Consumed: {
        record(TraceEvent{TraceEvent::Kind::Consumed, ev.task, 0, ev.consumed, false});
        Task& t = *tasks[static_cast<std::size_t>(ev.task)];
        t.consumed_view = std::max(t.consumed_view, ev.consumed);
        break;
      }
      case Event::Kind::SourceReady:
        record(TraceEvent{TraceEvent::Kind::SourceReady, ev.task, 0, 0, false});
        break;
      case Event::Kind::Control:
        record(TraceEvent{ev.control, -1, 0, 0, false});
        if (ev.control == TraceEvent::Kind::Pause) paused = true;
        if (ev.control == TraceEvent::Kind::Resume) paused = false;
        if (ev.control == TraceEvent::Kind::Stop) stopping = true;
        break;
    }
    if (ev.done && ev.control != TraceEvent::Kind::Stop) ev.done->set_value();
  }

  void run() {
    std::vector<std::shared_ptr<std::promise<void>>> stop_waiters;
    for (;;) {
      std::optional<SteadyClock::time_point> deadline;
      {
        std::lock_guard lock(mu);
        for (const auto& [seq, f] : inflight) {
          if (f.deadline && (!deadline || *f.deadline < *deadline)) deadline = f.deadline;
        }
      }
      Event ev;
      const bool got = queue->pop(ev, deadline);
      std::unique_lock lock(mu);
      if (got) {
        if (ev.kind == Event::Kind::Control && ev.control == TraceEvent::Kind::Stop && ev.done) {
          stop_waiters.push_back(ev.done);
        }
        handle(ev);
      } else {
        const auto now = SteadyClock::now();
        std::optional<std::uint64_t> expired;
        SteadyClock::time_point earliest{};
        for (const auto& [seq, f] : inflight) {
          if (f.deadline && *f.deadline <= now && (!expired || *f.deadline < earliest)) {
            expired = seq;
            earliest = *f.deadline;
          }
        }
        if (!expired) continue;
        record(TraceEvent{TraceEvent::Kind::Timeout, -1, *expired, 0, false});
        handle_timeout(*expired);
      }
      finalize_tasks();
      do {
        dispatch_round();
      } while (finalize_tasks());
      idle_cv.notify_all();
      if (stopping && inflight.empty()) {
        for (auto& tp : tasks) {
          if (!tp->finished) tp->channel()->stop();
        }
        running = false;
        idle_cv.notify_all();
        lock.unlock();
        for (auto& w : stop_waiters) w->set_value();
        return;
      }
    }
  }

  void post_control(TraceEvent::Kind kind) {
    auto done = std::make_shared<std::promise<void>>();
    auto fut = done->get_future();
    Event ev;
    ev.kind = Event::Kind::Control;
    ev.control = kind;
    ev.done = done;
    queue->post(std::move(ev));
    fut.wait();
  }

  void on_consumed(int task, std::uint64_t low) {
    if (on_scheduler()) {
      Task& t = *tasks[static_cast<std::size_t>(task)];
      t.consumed_view = std::max(t.consumed_view, low);
      return;
    }
    Event ev;
    ev.kind = Event::Kind::Consumed;
    ev.task = task;
    ev.consumed = low;
    queue->post(std::move(ev));
  }

  void on_source_ready(int task) {
    if (on_scheduler()) return;
    Event ev;
    ev.kind = Event::Kind::SourceReady;
    ev.task = task;
    queue->post(std::move(ev));
  }

  void shutdown_lanes() {
    for (auto& lane : lanes) {
      if (lane.worker) lane.worker->shutdown();
      lane.worker.reset();
    }
  }
};

Executor::Executor(ExecutorConfig config, std::shared_ptr<WorkerRegistry> registry)
    : impl_(std::make_shared<Impl>()) {
  if (config.lanes_inproc < 0 || config.lanes_outproc < 0) {
    throw Error(ErrorCode::InvalidConfig, "lane counts must be non-negative");
  }
  for (const auto& r : config.remote) {
    if (r.slots < 1) {
      throw Error(ErrorCode::InvalidConfig,
                  r.host + ":" + std::to_string(r.port) + " needs at least one slot");
    }
  }
  if (config.total_lanes() < 1) throw Error(ErrorCode::ZeroLanes, "executor " + config.name);
  if (config.stride < 1) {
    throw Error(ErrorCode::InvalidConfig, "stride must be >= 1, got " + std::to_string(config.stride));
  }
  if (!registry) registry = WorkerRegistry::with_builtins();
  registry->freeze();
  impl_->config = std::move(config);
  impl_->registry = std::move(registry);
  impl_->provision();
  log::debug(kLogSource, impl_->config.name + ": " + std::to_string(impl_->total_lanes()) +
                             " lane(s), stride " + std::to_string(impl_->config.stride));
}

Executor::~Executor() {
  try {
    stop();
  } catch (...) {
  }
}

const ExecutorConfig& Executor::config() const { return impl_->config; }
int Executor::total_lanes() const { return impl_->total_lanes(); }

std::vector<std::string> Executor::lane_kinds() const {
  std::lock_guard lock(impl_->mu);
  std::vector<std::string> out;
  for (const auto& l : impl_->lanes) out.push_back(l.kind);
  return out;
}

std::shared_ptr<TaskHandle> Executor::attach_task(TaskSpec spec) {
  std::lock_guard lock(impl_->mu);
  if (impl_->started || impl_->stopped) {
    throw Error(ErrorCode::AlreadyStarted, "executor " + impl_->config.name);
  }
  if (!spec.source) throw Error(ErrorCode::InvalidConfig, "task " + spec.name + " has no source");
  auto task = std::make_unique<Impl::Task>();
  task->seq = static_cast<int>(impl_->tasks.size());
  task->chain = std::make_shared<const WorkerChain>(spec.chain);
  auto handle = std::shared_ptr<TaskHandle>(new TaskHandle());
  handle->task_seq_ = task->seq;
  handle->name_ = spec.name;
  handle->channel_ = std::make_shared<Channel>(spec.readers);
  task->handle = handle;

  std::weak_ptr<Impl> weak = impl_;
  const int seq = task->seq;
  handle->channel_->on_pop([weak, seq](std::uint64_t low) {
    if (auto impl = weak.lock()) impl->on_consumed(seq, low);
  });
  spec.source->set_ready_callback([weak, seq] {
    if (auto impl = weak.lock()) impl->on_source_ready(seq);
  });
  task->spec = std::move(spec);
  impl_->tasks.push_back(std::move(task));
  return handle;
}

void Executor::start() {
  std::lock_guard stop_lock(impl_->stop_mu);
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->started || impl_->stopped) return;
    if (impl_->tasks.empty()) throw Error(ErrorCode::NoTasks, "executor " + impl_->config.name);
    impl_->started = true;
    impl_->running = true;
  }
  std::promise<void> ready;
  auto ready_f = ready.get_future();
  impl_->scheduler = std::thread([impl = impl_, &ready] {
    impl->scheduler_id = std::this_thread::get_id();
    ready.set_value();
    impl->run();
  });
  ready_f.wait();
  impl_->post_control(TraceEvent::Kind::Start);
}

void Executor::stop() {
  std::lock_guard stop_lock(impl_->stop_mu);
  bool was_running = false;
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->stopped) return;
    was_running = impl_->running;
  }
  if (was_running) {
    impl_->post_control(TraceEvent::Kind::Stop);
  } else {
    std::lock_guard lock(impl_->mu);
    for (auto& tp : impl_->tasks) tp->handle->channel()->stop();
  }
  if (impl_->scheduler.joinable()) impl_->scheduler.join();
  impl_->shutdown_lanes();
  std::lock_guard lock(impl_->mu);
  impl_->stopped = true;
}

void Executor::pause() {
  std::lock_guard stop_lock(impl_->stop_mu);
  bool running;
  {
    std::lock_guard lock(impl_->mu);
    running = impl_->running;
    if (!running) {
      impl_->paused = true;
      return;
    }
  }
  impl_->post_control(TraceEvent::Kind::Pause);
}

void Executor::resume() {
  std::lock_guard stop_lock(impl_->stop_mu);
  bool running;
  {
    std::lock_guard lock(impl_->mu);
    running = impl_->running;
    if (!running) {
      impl_->paused = false;
      return;
    }
  }
  impl_->post_control(TraceEvent::Kind::Resume);
}

void Executor::wait_idle() {
  std::unique_lock lock(impl_->mu);
  impl_->idle_cv.wait(lock, [&] { return impl_->inflight.empty() || !impl_->running; });
}

bool Executor::started() const {
  std::lock_guard lock(impl_->mu);
  return impl_->started;
}

bool Executor::stopped() const {
  std::lock_guard lock(impl_->mu);
  return impl_->stopped;
}

std::size_t Executor::in_flight() const {
  std::lock_guard lock(impl_->mu);
  return impl_->inflight.size();
}

std::vector<ItemKey> Executor::held_keys(int task_seq) const {
  std::lock_guard lock(impl_->mu);
  std::vector<ItemKey> out;
  for (const auto& [seq, f] : impl_->inflight) {
    if (f.task == task_seq) out.push_back(f.key);
  }
  const auto& t = *impl_->tasks.at(static_cast<std::size_t>(task_seq));
  for (const auto& [pull, env] : t.reorder) out.push_back(env.key());
  return out;
}

std::vector<DispatchRecord> Executor::dispatch_log() const {
  std::lock_guard lock(impl_->mu);
  return impl_->log;
}

std::vector<TraceEvent> Executor::scheduler_trace() const {
  std::lock_guard lock(impl_->mu);
  return impl_->trace;
}

std::shared_ptr<Executor> create_executor(ExecutorConfig config,
                                          std::shared_ptr<WorkerRegistry> registry) {
  return std::make_shared<Executor>(std::move(config), std::move(registry));
}

}  // namespace flowpipe
