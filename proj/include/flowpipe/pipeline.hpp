#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flowpipe/dag.hpp"
#include "flowpipe/executor.hpp"
#include "flowpipe/worker.hpp"

namespace flowpipe {

/// A pipeline node: a worker chain plus execution flags.
struct PiperSpec {
  std::string name;
  WorkerChain chain;
  std::optional<std::string> executor;  // none: serial, evaluated by the manager
  bool ordered = true;
  std::optional<int> produce;
  std::optional<int> spawn;
  std::optional<int> consume;
  std::optional<int> timeout_ms;

  friend bool operator==(const PiperSpec&, const PiperSpec&) = default;
};

enum class RunState { Created, Validated, Running, Paused, Finished, Stopped };
std::string_view to_string(RunState state) noexcept;

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
  std::string to_string() const;
};

struct PiperStats {
  std::uint64_t items_in = 0;
  std::uint64_t items_out = 0;
  std::uint64_t faults_out = 0;
  std::uint64_t timeouts = 0;
  double wall_ms_total = 0;
  double latency_p50_ms = 0;
  double latency_p95_ms = 0;
};

struct RunStats {
  std::map<std::string, PiperStats> pipers;
  std::optional<std::chrono::system_clock::time_point> started;
  std::optional<std::chrono::system_clock::time_point> finished;

  Value to_value() const;
};

/// Where every expected (leaf, input index) result is at a given moment.
struct Accounting {
  std::uint64_t expected = 0;
  std::uint64_t delivered = 0;
  std::uint64_t parked = 0;
  std::uint64_t unread = 0;
  std::uint64_t lost = 0;

  bool conserved() const noexcept {
    return lost == 0 && delivered + parked + unread == expected;
  }
};

/// Topology, specs and executors plus the run lifecycle:
/// Created -> Validated -> (start binds inputs) -> Running <-> Paused,
/// Running -> Finished (wait), Paused -> Stopped (stop).
class Pipeline {
 public:
  explicit Pipeline(std::shared_ptr<WorkerRegistry> registry = WorkerRegistry::with_builtins());
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Topology edits: allowed in Created and in Validated before inputs are
  /// bound (which returns the pipeline to Created). Otherwise IllegalState.
  void add_executor(ExecutorConfig config);
  void add_piper(PiperSpec spec);
  void del_piper(std::string_view name);
  void add_pipe(std::string_view from, std::string_view to);
  /// Replace an existing spec or executor config in place, keeping pipes.
  void update_piper(PiperSpec spec);
  void update_executor(ExecutorConfig config);

  /// Only from Created; on success the state becomes Validated.
  ValidationReport validate();
  /// Binds one input collection per root (roots in insertion order) and
  /// provisions executors. Throws Error(InputArityMismatch) or IllegalState.
  void start(std::vector<std::vector<Value>> inputs);
  void run();
  void wait();
  void pause();
  void stop();

  RunState state() const;
  bool inputs_bound() const;

  const Dag& dag() const noexcept { return dag_; }
  const std::map<std::string, PiperSpec>& pipers() const noexcept { return pipers_; }
  const std::map<std::string, ExecutorConfig>& executors() const noexcept { return executors_; }
  const std::shared_ptr<WorkerRegistry>& registry() const noexcept { return registry_; }

  /// Record in-band message sizes in the executors' dispatch logs.
  void set_measure_inband(bool on) { measure_inband_ = on; }

  RunStats stats() const;
  /// Leaf piper name -> envelopes in delivery order.
  std::map<std::string, std::vector<Envelope>> results() const;
  Accounting accounting() const;
  /// Live executors after start(), by name.
  std::map<std::string, std::shared_ptr<Executor>> live_executors() const;
  /// Runtime node names attached to an executor, in task_seq order.
  std::vector<std::string> task_names(const std::string& executor) const;

 private:
  struct Runtime;

  void require_editable();
  void teardown();

  std::shared_ptr<WorkerRegistry> registry_;
  Dag dag_;
  std::map<std::string, PiperSpec> pipers_;
  std::map<std::string, ExecutorConfig> executors_;
  RunState state_ = RunState::Created;
  bool measure_inband_ = false;
  std::unique_ptr<Runtime> rt_;
};

}  // namespace flowpipe
