#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flowpipe/codec.hpp"

namespace flowpipe {

/// Position of an item in its input stream; `sub` is set inside a
/// produce/spawn/consume region.
struct ItemKey {
  std::uint64_t index = 0;
  std::optional<std::uint32_t> sub;

  friend auto operator<=>(const ItemKey&, const ItemKey&) = default;
  friend bool operator==(const ItemKey&, const ItemKey&) = default;
};

std::string to_string(const ItemKey& key);

struct SubFault {
  std::uint32_t sub = 0;
  std::string origin_piper;
  int stage_index = 0;
  std::string error_class;

  friend bool operator==(const SubFault&, const SubFault&) = default;
};

struct FaultInfo {
  std::string origin_piper;
  int stage_index = 0;  // -1: raised outside a chain stage
  std::string error_class;
  std::string message;
  int hops = 0;
  std::vector<SubFault> sub_faults;

  friend bool operator==(const FaultInfo&, const FaultInfo&) = default;
};

namespace error_class {
inline constexpr const char* kUser = "user_error";
inline constexpr const char* kTimeout = "timeout";
inline constexpr const char* kIpc = "ipc_error";
inline constexpr const char* kRemote = "remote_error";
}  // namespace error_class

/// The unit carried by pipes: a payload or a Fault placeholder.
class Envelope {
 public:
  Envelope() = default;

  static Envelope payload(ItemKey key, Value value) {
    Envelope e;
    e.key_ = key;
    e.body_ = std::move(value);
    return e;
  }
  static Envelope fault(ItemKey key, FaultInfo info) {
    Envelope e;
    e.key_ = key;
    e.body_ = std::move(info);
    return e;
  }

  const ItemKey& key() const noexcept { return key_; }
  std::uint64_t item_index() const noexcept { return key_.index; }
  void set_key(ItemKey key) noexcept { key_ = key; }

  bool is_fault() const noexcept { return std::holds_alternative<FaultInfo>(body_); }
  const Value& value() const { return std::get<Value>(body_); }
  Value& value() { return std::get<Value>(body_); }
  const FaultInfo& fault() const { return std::get<FaultInfo>(body_); }
  FaultInfo& fault() { return std::get<FaultInfo>(body_); }

  friend bool operator==(const Envelope&, const Envelope&) = default;

 private:
  ItemKey key_;
  std::variant<Value, FaultInfo> body_{Value()};
};

/// Structured form used on the wire and in fault-aware inboxes.
Value to_value(const FaultInfo& fault);
FaultInfo fault_from_value(const Value& value);
Value to_value(const Envelope& envelope);
Envelope envelope_from_value(const Value& value);

/// A Fault as seen by a chain with handles_faults set: {"$fault": {...}}.
Value fault_marker(const FaultInfo& fault);
bool is_fault_marker(const Value& value);

}  // namespace flowpipe
