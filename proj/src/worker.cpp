#include "flowpipe/worker.hpp"

#include "flowpipe/error.hpp"
#include "flowpipe/log.hpp"

namespace flowpipe {

std::shared_ptr<WorkerRegistry> WorkerRegistry::bare() {
  return std::shared_ptr<WorkerRegistry>(new WorkerRegistry());
}

std::shared_ptr<WorkerRegistry> WorkerRegistry::with_builtins() {
  auto registry = bare();
  register_builtins(*registry);
  return registry;
}

void WorkerRegistry::register_function(std::string name, WorkerFn fn,
                                       std::optional<std::size_t> arity) {
  if (frozen_) throw Error(ErrorCode::RegistryFrozen, name);
  if (name.empty()) throw Error(ErrorCode::DuplicateName, "function name must be non-empty");
  if (entries_.count(name)) throw Error(ErrorCode::DuplicateName, name);
  entries_.emplace(std::move(name), Entry{std::move(fn), arity});
}

const WorkerRegistry::Entry* WorkerRegistry::find(std::string_view name) const {
  auto it = entries_.find(name);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> WorkerRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

WorkerChain compose_chain(const WorkerRegistry& registry, std::vector<FunctionRef> stages,
                          bool handles_faults) {
  if (stages.empty()) throw Error(ErrorCode::EmptyChain, "a chain needs at least one stage");
  for (const auto& s : stages) {
    if (!registry.contains(s.name)) throw Error(ErrorCode::UnknownFunction, s.name);
  }
  return WorkerChain{std::move(stages), handles_faults};
}

Envelope make_fault(ItemKey key, std::string piper, int stage, std::string error_class,
                    std::string message) {
  log::error(piper, "item " + to_string(key) + " stage " + std::to_string(stage) + " " +
                        error_class + ": " + message);
  return Envelope::fault(key, FaultInfo{std::move(piper), stage, std::move(error_class),
                                        std::move(message), 0, {}});
}

Envelope apply_chain(const WorkerRegistry& registry, const WorkerChain& chain,
                     std::string_view piper, std::span<const Envelope> inbox) {
  if (inbox.empty()) {
    return make_fault(ItemKey{}, std::string(piper), 0, error_class::kUser, "empty inbox");
  }
  const ItemKey key = inbox.front().key();

  std::vector<Value> values;
  values.reserve(inbox.size());
  for (const auto& env : inbox) {
    if (env.is_fault()) {
      if (!chain.handles_faults) {
        Envelope forwarded = env;
        forwarded.set_key(key);
        forwarded.fault().hops += 1;
        log::debug(piper, "item " + to_string(key) + " forwarding fault from " +
                              env.fault().origin_piper);
        return forwarded;
      }
      values.push_back(fault_marker(env.fault()));
    } else {
      values.push_back(env.value());
    }
  }

  if (chain.stages.empty()) {
    return make_fault(key, std::string(piper), 0, error_class::kUser, "empty chain");
  }

  for (std::size_t k = 0; k < chain.stages.size(); ++k) {
    const FunctionRef& stage = chain.stages[k];
    const int stage_index = static_cast<int>(k);
    const WorkerRegistry::Entry* entry = registry.find(stage.name);
    if (!entry) {
      return make_fault(key, std::string(piper), stage_index, error_class::kUser,
                        "unknown function '" + stage.name + "'");
    }
    if (entry->arity && *entry->arity != values.size()) {
      return make_fault(key, std::string(piper), stage_index, error_class::kUser,
                        stage.name + " expects " + std::to_string(*entry->arity) +
                            " inbox slot(s), got " + std::to_string(values.size()));
    }
    Value result;
    try {
      result = entry->fn(std::span<const Value>(values), stage.kwargs);
    } catch (const std::exception& e) {
      return make_fault(key, std::string(piper), stage_index, error_class::kUser,
                        stage.name + ": " + e.what());
    } catch (...) {
      return make_fault(key, std::string(piper), stage_index, error_class::kUser,
                        stage.name + ": unknown exception");
    }
    values.clear();
    values.push_back(std::move(result));
  }
  return Envelope::payload(key, std::move(values.front()));
}

}  // namespace flowpipe
