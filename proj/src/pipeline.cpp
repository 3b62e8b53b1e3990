#include "flowpipe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "flowpipe/error.hpp"
#include "flowpipe/log.hpp"
#include "flowpipe/remote.hpp"

namespace flowpipe {

namespace {

constexpr std::uint64_t kSerialBacklog = 64;
constexpr int kSerialBurst = 64;

std::string iso_time(std::chrono::system_clock::time_point tp) {
  const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(tp);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp - secs).count();
  const std::time_t t = std::chrono::system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof(out), "%s.%03ldZ", buf, static_cast<long>(ms));
  return out;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  // nearest rank
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

/// Input collection of a root piper, keyed 0..n-1.
class RootSource : public TaskSource {
 public:
  explicit RootSource(std::vector<Value> items) : items_(std::move(items)) {}

  Status try_pull(WorkUnit& out) override {
    const std::uint64_t i = next_.load();
    if (i >= items_.size()) return Status::End;
    out.key = ItemKey{i, std::nullopt};
    out.inbox = {Envelope::payload(out.key, items_[i])};
    next_.store(i + 1);
    return Status::Item;
  }

  std::uint64_t pulled() const noexcept { return next_.load(); }
  std::uint64_t size() const noexcept { return items_.size(); }

 private:
  std::vector<Value> items_;
  std::atomic<std::uint64_t> next_{0};
};

struct Port {
  std::shared_ptr<Channel> channel;
  std::size_t reader = 0;
  std::size_t slot = 0;
  std::optional<std::uint32_t> extract;  // scatter: element j of a produced list
  std::optional<std::uint32_t> sub;      // gather: position in the group
};

/// Zips the incoming pipes of one node by item key into work units.
class InboxAssembler : public TaskSource {
 public:
  InboxAssembler(std::string piper, std::vector<Port> ports, std::vector<std::uint32_t> group_sizes,
                 bool handles_faults)
      : piper_(std::move(piper)),
        ports_(std::move(ports)),
        groups_(std::move(group_sizes)),
        handles_faults_(handles_faults),
        buffered_(ports_.size()),
        ended_(ports_.size(), false) {
    for (auto& p : ports_) p.channel->on_push([this] { notify_ready(); });
  }

  Status try_pull(WorkUnit& out) override {
    std::lock_guard lock(mu_);
    for (;;) {
      if (auto key = smallest_complete()) {
        build(*key, out);
        return Status::Item;
      }
      bool popped = false;
      bool all_closed = true;
      bool any_stopped = false;
      for (std::size_t p = 0; p < ports_.size(); ++p) {
        if (ended_[p]) {
          if (ports_[p].channel->state() == Channel::State::Stopped) any_stopped = true;
          continue;
        }
        Envelope env;
        switch (ports_[p].channel->try_pop(ports_[p].reader, env)) {
          case Channel::Poll::Item:
            accept(p, std::move(env));
            popped = true;
            all_closed = false;
            break;
          case Channel::Poll::Empty:
            all_closed = false;
            break;
          case Channel::Poll::End:
            ended_[p] = true;
            break;
          case Channel::Poll::Stopped:
            ended_[p] = true;
            any_stopped = true;
            break;
        }
      }
      if (popped) continue;
      if (!all_closed) return Status::Empty;
      if (any_stopped) return Status::End;
      // Every port is closed: leftover partial keys can never complete.
      std::optional<ItemKey> left;
      for (const auto& b : buffered_) {
        if (!b.empty() && (!left || b.begin()->first < *left)) left = b.begin()->first;
      }
      if (!left) return Status::End;
      incomplete(*left, out);
      return Status::Item;
    }
  }

  /// Keys buffered here or waiting in the incoming channels for this node.
  std::vector<ItemKey> held() const {
    std::lock_guard lock(mu_);
    std::vector<ItemKey> out;
    for (const auto& b : buffered_) {
      for (const auto& [k, e] : b) out.push_back(k);
    }
    for (const auto& p : ports_) {
      for (const auto& e : p.channel->pending(p.reader)) out.push_back(e.key());
    }
    return out;
  }

 private:
  void accept(std::size_t p, Envelope env) {
    const Port& port = ports_[p];
    ItemKey key = env.key();
    if (port.sub) key.sub.reset();
    if (port.extract) {
      const std::uint32_t j = *port.extract;
      key = ItemKey{env.key().index, j};
      if (env.is_fault()) {
        env.set_key(key);
      } else if (env.value().is_array() && env.value().size() > j) {
        env = Envelope::payload(key, env.value()[j]);
      } else {
        env = make_fault(key, piper_, -1, error_class::kUser,
                         "upstream did not produce sub-item " + std::to_string(j));
      }
    }
    buffered_[p].emplace(key, std::move(env));
  }

  std::optional<ItemKey> smallest_complete() const {
    if (buffered_.empty()) return std::nullopt;
    for (const auto& [k, e] : buffered_[0]) {
      bool all = true;
      for (std::size_t p = 1; p < buffered_.size() && all; ++p) all = buffered_[p].count(k) > 0;
      if (all) return k;
    }
    return std::nullopt;
  }

  void build(const ItemKey& key, WorkUnit& out) {
    out.key = key;
    out.inbox.assign(groups_.size(), Envelope());
    std::vector<std::vector<std::pair<std::uint32_t, Envelope>>> members(groups_.size());
    for (std::size_t p = 0; p < ports_.size(); ++p) {
      auto node = buffered_[p].extract(key);
      const Port& port = ports_[p];
      if (port.sub) {
        members[port.slot].emplace_back(*port.sub, std::move(node.mapped()));
      } else {
        out.inbox[port.slot] = std::move(node.mapped());
      }
    }
    for (std::size_t s = 0; s < groups_.size(); ++s) {
      if (groups_[s] == 0) continue;
      auto& m = members[s];
      std::sort(m.begin(), m.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      out.inbox[s] = gather(key, m);
    }
  }

  Envelope gather(const ItemKey& key, std::vector<std::pair<std::uint32_t, Envelope>>& subs) const {
    std::vector<std::pair<std::uint32_t, const FaultInfo*>> faulted;
    for (const auto& [j, e] : subs) {
      if (e.is_fault()) faulted.emplace_back(j, &e.fault());
    }
    if (!faulted.empty() && !handles_faults_) {
      const FaultInfo& first = *faulted.front().second;
      FaultInfo info;
      info.origin_piper = first.origin_piper;
      info.stage_index = first.stage_index;
      info.error_class = first.error_class;
      info.hops = first.hops;
      std::string ids;
      for (const auto& [j, f] : faulted) {
        if (!ids.empty()) ids += ", ";
        ids += std::to_string(j);
        info.sub_faults.push_back(SubFault{j, f->origin_piper, f->stage_index, f->error_class});
      }
      info.message = "sub-item " + ids + " faulted: " + first.message;
      return Envelope::fault(key, std::move(info));
    }
    Value list = Value::array();
    for (const auto& [j, e] : subs) list.push_back(e.is_fault() ? fault_marker(e.fault()) : e.value());
    return Envelope::payload(key, std::move(list));
  }

  void incomplete(const ItemKey& key, WorkUnit& out) {
    std::string missing;
    std::set<std::size_t> present;
    for (std::size_t p = 0; p < ports_.size(); ++p) {
      if (buffered_[p].erase(key)) present.insert(ports_[p].slot);
    }
    for (std::size_t s = 0; s < groups_.size(); ++s) {
      if (present.count(s) && groups_[s] == 0) continue;
      if (!missing.empty()) missing += ", ";
      missing += std::to_string(s);
    }
    out.key = key;
    out.inbox = {make_fault(key, piper_, -1, error_class::kUser,
                            "no input on slot " + missing + " for this item")};
  }

  std::string piper_;
  std::vector<Port> ports_;
  std::vector<std::uint32_t> groups_;  // per slot: gather width, 0 for a plain slot
  bool handles_faults_;
  mutable std::mutex mu_;
  std::vector<std::map<ItemKey, Envelope>> buffered_;
  std::vector<bool> ended_;
};

struct PiperCounters {
  std::uint64_t items_in = 0;
  std::uint64_t items_out = 0;
  std::uint64_t faults_out = 0;
  std::uint64_t timeouts = 0;
  double wall_ms = 0;
  std::vector<double> latencies;
};

}  // namespace

std::string_view to_string(RunState state) noexcept {
  switch (state) {
    case RunState::Created: return "Created";
    case RunState::Validated: return "Validated";
    case RunState::Running: return "Running";
    case RunState::Paused: return "Paused";
    case RunState::Finished: return "Finished";
    case RunState::Stopped: return "Stopped";
  }
  return "?";
}

std::string ValidationReport::to_string() const {
  if (violations.empty()) return "valid\n";
  std::string out = "invalid: " + std::to_string(violations.size()) + " violation(s)\n";
  for (const auto& v : violations) out += "  - " + v + "\n";
  return out;
}

Value RunStats::to_value() const {
  Value out = Value::object();
  out["started"] = started ? Value(iso_time(*started)) : Value();
  out["finished"] = finished ? Value(iso_time(*finished)) : Value();
  if (started && finished) {
    out["wall_ms"] =
        std::chrono::duration<double, std::milli>(*finished - *started).count();
  }
  Value ps = Value::object();
  for (const auto& [name, s] : pipers) {
    ps[name] = {{"items_in", s.items_in},     {"items_out", s.items_out},
                {"faults_out", s.faults_out}, {"timeouts", s.timeouts},
                {"wall_ms_total", s.wall_ms_total},
                {"latency_p50_ms", s.latency_p50_ms},
                {"latency_p95_ms", s.latency_p95_ms}};
  }
  out["pipers"] = std::move(ps);
  return out;
}

struct Pipeline::Runtime {
  struct Instance {
    std::string name;  // runtime node name: the piper, or piper#j when spawned
    const PiperSpec* spec = nullptr;
    std::size_t readers = 0;
    std::vector<Port> plan;  // ports, channel unset until creation
    std::vector<std::pair<std::size_t, std::size_t>> plan_src;  // (instance, reader) per port
    std::vector<std::uint32_t> groups;
    std::shared_ptr<RootSource> root;
    std::shared_ptr<InboxAssembler> assembler;
    std::shared_ptr<TaskSource> source;
    std::shared_ptr<Channel> channel;
    std::shared_ptr<Executor> executor;
    int task_seq = -1;
    std::optional<std::size_t> drain_reader;
    std::function<Envelope(Envelope)> finish;
    bool serial_done = false;
    bool leaf_done = false;
  };

  std::shared_ptr<WorkerRegistry> registry;
  std::vector<Instance> nodes;  // topo order
  std::map<std::string, std::shared_ptr<Executor>> executors;
  std::map<std::string, std::vector<std::string>> task_names;
  std::map<std::string, std::shared_ptr<RootSource>> roots;  // by piper

  mutable std::mutex stats_mu;
  std::map<std::string, PiperCounters> counters;
  std::optional<std::chrono::system_clock::time_point> started, finished;

  mutable std::mutex results_mu;
  std::map<std::string, std::vector<Envelope>> results;

  std::mutex pump_mu;
  std::condition_variable pump_cv;
  std::condition_variable ctl_cv;
  std::uint64_t signals = 0;
  bool quit = false;
  bool pause_req = false;
  std::uint64_t pause_gen = 0;
  std::uint64_t pause_ack = 0;
  bool all_done = false;
  std::thread pump;

  void signal() {
    {
      std::lock_guard lock(pump_mu);
      ++signals;
    }
    pump_cv.notify_all();
  }

  void count_in(const std::string& piper) {
    std::lock_guard lock(stats_mu);
    ++counters[piper].items_in;
  }

  void count_out(const std::string& piper, const Envelope& env, SteadyClock::duration d,
                 Outcome outcome) {
    const double ms = std::chrono::duration<double, std::milli>(d).count();
    std::lock_guard lock(stats_mu);
    auto& c = counters[piper];
    ++c.items_out;
    if (env.is_fault()) ++c.faults_out;
    if (outcome == Outcome::Timeout) ++c.timeouts;
    c.wall_ms += ms;
    c.latencies.push_back(ms);
  }

  bool step_serial() {
    bool progressed = false;
    for (auto& n : nodes) {
      if (n.executor || n.serial_done) continue;
      for (int burst = 0; burst < kSerialBurst; ++burst) {
        if (n.channel->pushed() - n.channel->min_consumed() >= kSerialBacklog) break;
        WorkUnit unit;
        const auto st = n.source->try_pull(unit);
        if (st == TaskSource::Status::Empty) break;
        progressed = true;
        if (st == TaskSource::Status::End) {
          n.serial_done = true;
          n.channel->close();
          break;
        }
        count_in(n.spec->name);
        const auto t0 = SteadyClock::now();
        Envelope env = apply_chain(*registry, n.spec->chain, n.spec->name, unit.inbox);
        if (n.finish) env = n.finish(std::move(env));
        count_out(n.spec->name, env, SteadyClock::now() - t0,
                  env.is_fault() ? Outcome::Fault : Outcome::Ok);
        n.channel->push(std::move(env));
      }
    }
    return progressed;
  }

  bool drain_leaves() {
    bool progressed = false;
    for (auto& n : nodes) {
      if (!n.drain_reader || n.leaf_done) continue;
      std::lock_guard lock(results_mu);
      for (;;) {
        Envelope env;
        const auto p = n.channel->try_pop(*n.drain_reader, env);
        if (p == Channel::Poll::Empty) break;
        progressed = true;
        if (p == Channel::Poll::Item) {
          results[n.spec->name].push_back(std::move(env));
          continue;
        }
        n.leaf_done = true;
        break;
      }
    }
    return progressed;
  }

  bool leaves_done() const {
    return std::all_of(nodes.begin(), nodes.end(),
                       [](const Instance& n) { return !n.drain_reader || n.leaf_done; });
  }

  void pump_loop() {
    for (;;) {
      bool paused;
      std::uint64_t seen;
      {
        std::lock_guard lock(pump_mu);
        if (quit) break;
        paused = pause_req;
        if (paused && pause_ack != pause_gen) {
          pause_ack = pause_gen;
          ctl_cv.notify_all();
        }
        seen = signals;
      }
      bool progressed = false;
      if (!paused) progressed |= step_serial();
      progressed |= drain_leaves();
      std::unique_lock lock(pump_mu);
      if (!all_done && leaves_done()) {
        all_done = true;
        ctl_cv.notify_all();
      }
      if (!progressed) {
        pump_cv.wait_for(lock, std::chrono::milliseconds(50), [&] {
          return quit || signals != seen || pause_req != paused;
        });
      }
    }
  }

  void pause_pump() {
    std::unique_lock lock(pump_mu);
    pause_req = true;
    const std::uint64_t gen = ++pause_gen;
    pump_cv.notify_all();
    ctl_cv.wait(lock, [&] { return pause_ack >= gen || quit || !pump.joinable(); });
  }

  void resume_pump() {
    {
      std::lock_guard lock(pump_mu);
      pause_req = false;
    }
    pump_cv.notify_all();
  }

  void quit_pump() {
    {
      std::lock_guard lock(pump_mu);
      quit = true;
    }
    pump_cv.notify_all();
    ctl_cv.notify_all();
    if (pump.joinable()) pump.join();
  }

  void shutdown() {
    for (auto& [name, ex] : executors) ex->stop();
    quit_pump();
  }

  ~Runtime() { shutdown(); }
};

Pipeline::Pipeline(std::shared_ptr<WorkerRegistry> registry) : registry_(std::move(registry)) {}

Pipeline::~Pipeline() { teardown(); }

void Pipeline::teardown() {
  if (rt_) rt_->shutdown();
}

RunState Pipeline::state() const { return state_; }
bool Pipeline::inputs_bound() const { return rt_ != nullptr; }

void Pipeline::require_editable() {
  if (state_ == RunState::Created) return;
  if (state_ == RunState::Validated && !rt_) {
    state_ = RunState::Created;
    return;
  }
  throw Error(ErrorCode::IllegalState,
              std::string("topology edits are not allowed in state ") +
                  std::string(to_string(state_)));
}

void Pipeline::add_executor(ExecutorConfig config) {
  require_editable();
  if (executors_.count(config.name)) {
    throw Error(ErrorCode::DuplicateName, "executor '" + config.name + "' already exists");
  }
  std::string name = config.name;
  executors_.emplace(std::move(name), std::move(config));
}

void Pipeline::add_piper(PiperSpec spec) {
  require_editable();
  if (pipers_.count(spec.name)) {
    throw Error(ErrorCode::DuplicateName, "piper '" + spec.name + "' already exists");
  }
  dag_.add_node(spec.name);
  std::string name = spec.name;
  pipers_.emplace(std::move(name), std::move(spec));
}

void Pipeline::del_piper(std::string_view name) {
  require_editable();
  auto it = pipers_.find(std::string(name));
  if (it == pipers_.end()) {
    throw Error(ErrorCode::UnknownPiper, "no piper named '" + std::string(name) + "'");
  }
  dag_.remove_node(name);
  pipers_.erase(it);
}

void Pipeline::add_pipe(std::string_view from, std::string_view to) {
  require_editable();
  for (auto n : {from, to}) {
    if (!pipers_.count(std::string(n))) {
      throw Error(ErrorCode::UnknownPiper, "no piper named '" + std::string(n) + "'");
    }
  }
  dag_.add_edge(from, to);
}

void Pipeline::update_piper(PiperSpec spec) {
  require_editable();
  auto it = pipers_.find(spec.name);
  if (it == pipers_.end()) throw Error(ErrorCode::UnknownPiper, "no piper named '" + spec.name + "'");
  it->second = std::move(spec);
}

void Pipeline::update_executor(ExecutorConfig config) {
  require_editable();
  auto it = executors_.find(config.name);
  if (it == executors_.end()) {
    throw Error(ErrorCode::UnknownExecutor, "no executor named '" + config.name + "'");
  }
  it->second = std::move(config);
}

ValidationReport Pipeline::validate() {
  if (state_ != RunState::Created) {
    throw Error(ErrorCode::IllegalState,
                std::string("validate requires Created, state is ") +
                    std::string(to_string(state_)));
  }
  ValidationReport report;
  auto& v = report.violations;
  if (dag_.empty()) v.push_back("pipeline has no pipers");

  // executors
  std::set<std::string> used;
  for (const auto& [name, spec] : pipers_) {
    if (spec.executor) used.insert(*spec.executor);
  }
  std::map<std::string, std::vector<std::pair<std::string, std::set<std::string>>>> remote_names;
  for (const auto& [name, cfg] : executors_) {
    if (cfg.lanes_inproc < 0 || cfg.lanes_outproc < 0) {
      v.push_back("executor " + name + ": negative lane count");
    }
    if (cfg.total_lanes() <= 0) v.push_back("executor " + name + ": has no lanes");
    if (cfg.stride < 1) v.push_back("executor " + name + ": stride must be >= 1");
    for (const auto& ep : cfg.remote) {
      const std::string label = ep.host + ":" + std::to_string(ep.port);
      if (ep.slots < 1) v.push_back("executor " + name + ": remote " + label + " has no slots");
      if (!used.count(name)) continue;
      try {
        auto pool = remote::RemoteSlotPool::connect(ep.host, ep.port);
        const auto& names = pool->worker_names();
        remote_names[name].emplace_back(label, std::set<std::string>(names.begin(), names.end()));
        pool->close();
      } catch (const Error& e) {
        v.push_back("executor " + name + ": remote " + label + " unreachable (" + e.what() + ")");
      }
    }
  }

  for (const auto& node : dag_.nodes()) {
    const PiperSpec& spec = pipers_.at(node.name);
    const std::string& p = spec.name;
    if (spec.chain.stages.empty()) v.push_back("piper " + p + ": empty chain");
    for (const auto& st : spec.chain.stages) {
      if (!registry_->contains(st.name)) {
        v.push_back("piper " + p + ": unknown worker '" + st.name + "'");
      }
    }
    if (spec.executor) {
      if (!executors_.count(*spec.executor)) {
        v.push_back("piper " + p + ": unknown executor '" + *spec.executor + "'");
      } else {
        for (const auto& [label, names] : remote_names[*spec.executor]) {
          for (const auto& st : spec.chain.stages) {
            if (!names.count(st.name)) {
              v.push_back("piper " + p + ": worker '" + st.name + "' not available on remote " +
                          label);
            }
          }
        }
      }
    }
    if (spec.timeout_ms && *spec.timeout_ms <= 0) {
      v.push_back("piper " + p + ": timeout_ms must be positive");
    }
  }

  // scatter/gather regions
  auto describe = [](const PiperSpec& s) -> std::string {
    if (s.produce) return "produces " + std::to_string(*s.produce);
    if (s.spawn) return "is spawned " + std::to_string(*s.spawn) + " times";
    return "is neither a produce nor a spawned piper";
  };
  for (const auto& node : dag_.nodes()) {
    const PiperSpec& s = pipers_.at(node.name);
    const std::string& p = s.name;
    for (auto [flag, label] : {std::pair{s.produce, "produce"}, std::pair{s.spawn, "spawn"},
                               std::pair{s.consume, "consume"}}) {
      if (flag && *flag < 2) v.push_back("piper " + p + ": " + label + " count must be >= 2");
    }
    if (s.produce && s.consume) v.push_back("piper " + p + ": sets both produce and consume");
    if (s.spawn && (s.produce || s.consume)) {
      v.push_back("piper " + p + ": spawn cannot be combined with produce or consume "
                  "(nested regions are not supported)");
    }
    const auto preds = dag_.predecessors(p);
    const auto succs = dag_.successors(p);
    if (s.spawn) {
      if (preds.empty()) v.push_back("piper " + p + ": spawned but has no produce upstream");
      for (const auto& u : preds) {
        const PiperSpec& us = pipers_.at(u.name);
        const std::optional<int> n = us.produce ? us.produce : us.spawn;
        if (!n) {
          v.push_back("piper " + p + ": spawned but upstream " + u.name + " " + describe(us));
        } else if (*n != *s.spawn) {
          v.push_back("piper " + p + ": spawned " + std::to_string(*s.spawn) +
                      " times but upstream " + u.name + " " + describe(us));
        }
      }
      if (succs.empty()) v.push_back("piper " + p + ": a spawned piper cannot be an output");
      for (const auto& w : succs) {
        const PiperSpec& ws = pipers_.at(w.name);
        if (!ws.spawn && !ws.consume) {
          v.push_back("piper " + p + ": spawned output flows into " + w.name +
                      ", which neither spawns nor consumes");
        }
      }
    }
    if (s.consume) {
      for (const auto& u : preds) {
        const PiperSpec& us = pipers_.at(u.name);
        const std::optional<int> n = us.produce ? us.produce : us.spawn;
        if (!n) {
          v.push_back("piper " + p + ": consumes but upstream " + u.name + " " + describe(us));
        } else if (*n != *s.consume) {
          std::string msg = "piper " + p + ": consumes " + std::to_string(*s.consume) +
                            " but upstream " + u.name + " " + describe(us);
          if (us.spawn) {
            for (const auto& pp : dag_.predecessors(u.name)) {
              const PiperSpec& pps = pipers_.at(pp.name);
              if (pps.produce) msg += " (produced by " + pp.name + " " + describe(pps) + ")";
            }
          }
          v.push_back(std::move(msg));
        }
      }
    }
    if (s.produce) {
      if (succs.empty()) v.push_back("piper " + p + ": produces sub-items but has no consumer");
      for (const auto& w : succs) {
        const PiperSpec& ws = pipers_.at(w.name);
        if (!ws.spawn && !ws.consume) {
          v.push_back("piper " + p + ": produces " + std::to_string(*s.produce) +
                      " but downstream " + w.name + " neither spawns nor consumes");
        }
      }
    }
    if (!s.spawn && !s.consume) {
      for (const auto& u : preds) {
        const PiperSpec& us = pipers_.at(u.name);
        if (us.spawn) {
          v.push_back("piper " + p + ": reads spawned piper " + u.name +
                      " without spawn or consume");
        }
      }
    }
  }

  // every root reaches an output
  const auto leaves = dag_.leaves();
  for (const auto& r : dag_.roots()) {
    bool reaches = false;
    for (const auto& l : leaves) {
      if (l.name == r.name || dag_.find_path(r.name, l.name)) {
        reaches = true;
        break;
      }
    }
    if (!reaches) v.push_back("input piper " + r.name + " reaches no output");
  }

  if (report.ok()) state_ = RunState::Validated;
  return report;
}

void Pipeline::start(std::vector<std::vector<Value>> inputs) {
  if (state_ != RunState::Validated || rt_) {
    throw Error(ErrorCode::IllegalState, std::string("start requires Validated, state is ") +
                                             std::string(to_string(state_)) +
                                             (rt_ ? " (inputs already bound)" : ""));
  }
  const auto roots = dag_.roots();
  if (inputs.size() != roots.size()) {
    throw Error(ErrorCode::InputArityMismatch,
                std::to_string(roots.size()) + " input piper(s) but " +
                    std::to_string(inputs.size()) + " input collection(s)");
  }

  auto rt = std::make_unique<Runtime>();
  rt->registry = registry_;
  using Instance = Runtime::Instance;

  // Plan instances and their ports; reader slots are numbered per upstream instance.
  std::map<std::string, std::vector<std::size_t>> inst_of;
  for (const auto& node : dag_.topo_sort()) {
    const PiperSpec& spec = pipers_.at(node.name);
    const int m = spec.spawn.value_or(1);
    for (int j = 0; j < m; ++j) {
      Instance inst;
      inst.spec = &spec;
      inst.name = spec.spawn ? spec.name + "#" + std::to_string(j) : spec.name;
      const auto preds = dag_.predecessors(spec.name);
      for (std::size_t s = 0; s < preds.size(); ++s) {
        const PiperSpec& us = pipers_.at(preds[s].name);
        const auto& ups = inst_of.at(us.name);
        auto take = [&](std::size_t ui, std::optional<std::uint32_t> extract,
                        std::optional<std::uint32_t> sub) {
          Port port;
          port.slot = s;
          port.extract = extract;
          port.sub = sub;
          inst.plan.push_back(port);
          inst.plan_src.emplace_back(ui, rt->nodes[ui].readers++);
        };
        if (spec.spawn) {
          if (us.produce) {
            take(ups.at(0), static_cast<std::uint32_t>(j), std::nullopt);
          } else {
            take(ups.at(static_cast<std::size_t>(j)), std::nullopt, std::nullopt);
          }
          inst.groups.push_back(0);
        } else if (spec.consume && us.spawn) {
          for (std::size_t k = 0; k < ups.size(); ++k) {
            take(ups[k], std::nullopt, static_cast<std::uint32_t>(k));
          }
          inst.groups.push_back(static_cast<std::uint32_t>(ups.size()));
        } else {
          take(ups.at(0), std::nullopt, std::nullopt);
          inst.groups.push_back(0);
        }
      }
      inst_of[spec.name].push_back(rt->nodes.size());
      rt->nodes.push_back(std::move(inst));
    }
  }
  for (auto& n : rt->nodes) {
    if (dag_.successors(n.spec->name).empty()) n.drain_reader = n.readers++;
  }

  // Create sources, channels and tasks in topo order.
  std::map<std::string, std::size_t> root_index;
  for (std::size_t i = 0; i < roots.size(); ++i) root_index[roots[i].name] = i;
  Runtime* raw = rt.get();
  for (auto& n : rt->nodes) {
    const PiperSpec& spec = *n.spec;
    if (n.plan.empty()) {
      n.root = std::make_shared<RootSource>(std::move(inputs.at(root_index.at(spec.name))));
      rt->roots[spec.name] = n.root;
      n.source = n.root;
    } else {
      for (std::size_t k = 0; k < n.plan.size(); ++k) {
        const auto [ui, reader] = n.plan_src[k];
        n.plan[k].channel = rt->nodes[ui].channel;
        n.plan[k].reader = reader;
      }
      n.assembler = std::make_shared<InboxAssembler>(spec.name, n.plan, n.groups,
                                                     spec.chain.handles_faults);
      n.source = n.assembler;
    }
    if (spec.produce) {
      const int want = *spec.produce;
      const int last = static_cast<int>(spec.chain.stages.size()) - 1;
      const std::string pname = spec.name;
      n.finish = [want, last, pname](Envelope env) {
        if (env.is_fault()) return env;
        const Value& v = env.value();
        if (v.is_array() && v.size() == static_cast<std::size_t>(want)) return env;
        const std::string got =
            v.is_array() ? std::to_string(v.size()) + " items" : "a non-list value";
        return make_fault(env.key(), pname, last, error_class::kUser,
                          "produced " + got + ", expected " + std::to_string(want));
      };
    }
    // count pulls for stats
    const std::string pname = spec.name;
    struct Counting : TaskSource {
      std::shared_ptr<TaskSource> inner;
      Runtime* rt;
      std::string piper;
      Status try_pull(WorkUnit& out) override {
        const Status s = inner->try_pull(out);
        if (s == Status::Item && rt) rt->count_in(piper);
        return s;
      }
      void forward() const { notify_ready(); }
    };
    if (spec.executor) {
      auto& ex = rt->executors[*spec.executor];
      if (!ex) {
        ExecutorConfig cfg = executors_.at(*spec.executor);
        cfg.measure_inband = measure_inband_;
        ex = create_executor(std::move(cfg), registry_);
      }
      auto counting = std::make_shared<Counting>();
      counting->inner = n.source;
      counting->rt = raw;
      counting->piper = pname;
      std::weak_ptr<Counting> weak = counting;
      n.source->set_ready_callback([weak] {
        if (auto c = weak.lock()) c->forward();
      });
      TaskSpec ts;
      ts.name = spec.name;
      ts.chain = spec.chain;
      ts.ordered = spec.ordered;
      ts.timeout_ms = spec.timeout_ms;
      ts.source = counting;
      ts.readers = n.readers;
      ts.finish = n.finish;
      ts.on_result = [raw, pname](const Envelope& env, SteadyClock::duration d, Outcome o) {
        raw->count_out(pname, env, d, o);
      };
      auto handle = ex->attach_task(std::move(ts));
      n.executor = ex;
      n.task_seq = handle->task_seq();
      n.channel = handle->channel();
      rt->task_names[*spec.executor].push_back(n.name);
    } else {
      n.channel = std::make_shared<Channel>(n.readers);
      n.source->set_ready_callback([raw] { raw->signal(); });
    }
    n.channel->on_push([raw] { raw->signal(); });
    n.channel->on_pop([raw](std::uint64_t) { raw->signal(); });
  }
  for (const auto& [name, spec] : pipers_) rt->counters[name];
  rt_ = std::move(rt);
}

void Pipeline::run() {
  if (state_ == RunState::Validated && rt_) {
    rt_->started = std::chrono::system_clock::now();
    for (auto& [name, ex] : rt_->executors) ex->start();
    Runtime* raw = rt_.get();
    rt_->pump = std::thread([raw] { raw->pump_loop(); });
    state_ = RunState::Running;
    return;
  }
  if (state_ == RunState::Paused) {
    for (auto& [name, ex] : rt_->executors) ex->resume();
    rt_->resume_pump();
    state_ = RunState::Running;
    return;
  }
  throw Error(ErrorCode::IllegalState,
              std::string("run requires bound inputs or Paused, state is ") +
                  std::string(to_string(state_)));
}

void Pipeline::wait() {
  if (state_ != RunState::Running) {
    throw Error(ErrorCode::IllegalState,
                std::string("wait requires Running, state is ") + std::string(to_string(state_)));
  }
  {
    std::unique_lock lock(rt_->pump_mu);
    rt_->ctl_cv.wait(lock, [&] { return rt_->all_done; });
  }
  rt_->shutdown();
  rt_->finished = std::chrono::system_clock::now();
  state_ = RunState::Finished;
}

void Pipeline::pause() {
  if (state_ != RunState::Running) {
    throw Error(ErrorCode::IllegalState,
                std::string("pause requires Running, state is ") + std::string(to_string(state_)));
  }
  rt_->pause_pump();
  for (auto& [name, ex] : rt_->executors) ex->pause();
  for (auto& [name, ex] : rt_->executors) ex->wait_idle();
  state_ = RunState::Paused;
}

void Pipeline::stop() {
  if (state_ != RunState::Paused) {
    throw Error(ErrorCode::IllegalState,
                std::string("stop requires Paused, state is ") + std::string(to_string(state_)));
  }
  rt_->shutdown();
  rt_->drain_leaves();
  rt_->finished = std::chrono::system_clock::now();
  state_ = RunState::Stopped;
}

RunStats Pipeline::stats() const {
  RunStats out;
  for (const auto& [name, spec] : pipers_) out.pipers[name];
  if (!rt_) return out;
  std::lock_guard lock(rt_->stats_mu);
  for (const auto& [name, c] : rt_->counters) {
    PiperStats s;
    s.items_in = c.items_in;
    s.items_out = c.items_out;
    s.faults_out = c.faults_out;
    s.timeouts = c.timeouts;
    s.wall_ms_total = c.wall_ms;
    s.latency_p50_ms = quantile(c.latencies, 0.50);
    s.latency_p95_ms = quantile(c.latencies, 0.95);
    out.pipers[name] = s;
  }
  out.started = rt_->started;
  out.finished = rt_->finished;
  return out;
}

std::map<std::string, std::vector<Envelope>> Pipeline::results() const {
  if (!rt_) return {};
  std::lock_guard lock(rt_->results_mu);
  return rt_->results;
}

Accounting Pipeline::accounting() const {
  Accounting acc;
  if (!rt_) return acc;
  std::lock_guard lock(rt_->results_mu);

  std::map<std::string, std::set<std::uint64_t>> held;  // by piper
  for (const auto& n : rt_->nodes) {
    auto& h = held[n.spec->name];
    if (n.assembler) {
      for (const auto& k : n.assembler->held()) h.insert(k.index);
    }
    if (n.executor) {
      for (const auto& k : n.executor->held_keys(n.task_seq)) h.insert(k.index);
    }
    if (n.drain_reader) {
      for (const auto& e : n.channel->pending(*n.drain_reader)) h.insert(e.key().index);
    }
  }

  for (const auto& leaf : dag_.leaves()) {
    std::vector<std::string> anc;
    std::vector<std::shared_ptr<RootSource>> leaf_roots;
    for (const auto& node : dag_.nodes()) {
      if (node.name == leaf.name || dag_.find_path(node.name, leaf.name)) {
        anc.push_back(node.name);
        if (auto it = rt_->roots.find(node.name); it != rt_->roots.end()) {
          leaf_roots.push_back(it->second);
        }
      }
    }
    std::uint64_t expected = 0;
    for (const auto& r : leaf_roots) expected = std::max(expected, r->size());
    acc.expected += expected;

    std::set<std::uint64_t> got;
    if (auto it = rt_->results.find(leaf.name); it != rt_->results.end()) {
      acc.delivered += it->second.size();
      for (const auto& e : it->second) got.insert(e.key().index);
    }
    for (std::uint64_t i = 0; i < expected; ++i) {
      if (got.count(i)) continue;
      bool parked = false;
      for (const auto& a : anc) {
        if (held[a].count(i)) {
          parked = true;
          break;
        }
      }
      if (parked) {
        ++acc.parked;
        continue;
      }
      bool unread = false;
      for (const auto& r : leaf_roots) {
        if (i < r->size() && i >= r->pulled()) unread = true;
      }
      if (unread) {
        ++acc.unread;
      } else {
        ++acc.lost;
      }
    }
  }
  return acc;
}

std::map<std::string, std::shared_ptr<Executor>> Pipeline::live_executors() const {
  if (!rt_) return {};
  return rt_->executors;
}

std::vector<std::string> Pipeline::task_names(const std::string& executor) const {
  if (!rt_) return {};
  auto it = rt_->task_names.find(executor);
  return it == rt_->task_names.end() ? std::vector<std::string>{} : it->second;
}

}  // namespace flowpipe
