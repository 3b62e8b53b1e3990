#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flowpipe/envelope.hpp"

namespace flowpipe {

/// A user function: receives the inbox payloads (one per incoming pipe for
/// the first stage, a single element for later stages) plus its kwargs.
/// Errors are reported by throwing; they never escape apply_chain().
using WorkerFn = std::function<Value(std::span<const Value> inbox, const Value& kwargs)>;

struct FunctionRef {
  std::string name;
  Value kwargs = Value::object();

  friend bool operator==(const FunctionRef&, const FunctionRef&) = default;
};

struct WorkerChain {
  std::vector<FunctionRef> stages;
  bool handles_faults = false;

  friend bool operator==(const WorkerChain&, const WorkerChain&) = default;
};

/// Name -> function table. Frozen before any pipeline or server uses it;
/// lookups after freezing are lock-free.
class WorkerRegistry {
 public:
  struct Entry {
    WorkerFn fn;
    std::optional<std::size_t> arity;  // expected inbox length, if fixed
  };

  /// Registry preloaded with the built-in workers.
  static std::shared_ptr<WorkerRegistry> with_builtins();
  static std::shared_ptr<WorkerRegistry> bare();

  void register_function(std::string name, WorkerFn fn,
                         std::optional<std::size_t> arity = std::nullopt);

  const Entry* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }
  std::vector<std::string> names() const;

  void freeze() noexcept { frozen_ = true; }
  bool frozen() const noexcept { return frozen_; }

 private:
  WorkerRegistry() = default;

  std::map<std::string, Entry, std::less<>> entries_;
  std::atomic<bool> frozen_{false};
};

void register_builtins(WorkerRegistry& registry);

/// Validates the stage names against the registry.
WorkerChain compose_chain(const WorkerRegistry& registry, std::vector<FunctionRef> stages,
                          bool handles_faults = false);

/// Guarded evaluation of one chain on one inbox. Never throws: user errors
/// become Fault envelopes tagged with `piper` and the failing stage; a Fault
/// in the inbox is forwarded with one more hop unless the chain handles
/// faults. Every Fault created here is logged once at ERROR.
Envelope apply_chain(const WorkerRegistry& registry, const WorkerChain& chain,
                     std::string_view piper, std::span<const Envelope> inbox);

/// Builds (and logs at ERROR) a freshly created Fault.
Envelope make_fault(ItemKey key, std::string piper, int stage, std::string error_class,
                    std::string message);

}  // namespace flowpipe
