#include "flowpipe/envelope.hpp"

#include "flowpipe/error.hpp"

namespace flowpipe {

std::string to_string(const ItemKey& key) {
  std::string out = std::to_string(key.index);
  if (key.sub) out += "." + std::to_string(*key.sub);
  return out;
}

Value to_value(const FaultInfo& fault) {
  Value out{{"origin", fault.origin_piper},
            {"stage", fault.stage_index},
            {"class", fault.error_class},
            {"message", fault.message},
            {"hops", fault.hops}};
  if (!fault.sub_faults.empty()) {
    Value subs = Value::array();
    for (const auto& s : fault.sub_faults) {
      subs.push_back({{"sub", s.sub},
                      {"origin", s.origin_piper},
                      {"stage", s.stage_index},
                      {"class", s.error_class}});
    }
    out["subs"] = std::move(subs);
  }
  return out;
}

FaultInfo fault_from_value(const Value& value) {
  try {
    FaultInfo f;
    f.origin_piper = value.at("origin").get<std::string>();
    f.stage_index = value.at("stage").get<int>();
    f.error_class = value.at("class").get<std::string>();
    f.message = value.at("message").get<std::string>();
    f.hops = value.at("hops").get<int>();
    if (value.contains("subs")) {
      for (const auto& s : value.at("subs")) {
        f.sub_faults.push_back(SubFault{s.at("sub").get<std::uint32_t>(),
                                        s.at("origin").get<std::string>(),
                                        s.at("stage").get<int>(),
                                        s.at("class").get<std::string>()});
      }
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedBody, std::string("fault: ") + e.what());
  }
}

Value to_value(const Envelope& envelope) {
  Value out{{"item", envelope.key().index}};
  if (envelope.key().sub) out["sub"] = *envelope.key().sub;
  if (envelope.is_fault()) {
    out["fault"] = to_value(envelope.fault());
  } else {
    out["payload"] = envelope.value();
  }
  return out;
}

Envelope envelope_from_value(const Value& value) {
  if (!value.is_object()) throw Error(ErrorCode::MalformedBody, "envelope must be an object");
  try {
    ItemKey key{value.at("item").get<std::uint64_t>(), std::nullopt};
    if (value.contains("sub")) key.sub = value.at("sub").get<std::uint32_t>();
    if (value.contains("fault")) return Envelope::fault(key, fault_from_value(value.at("fault")));
    return Envelope::payload(key, value.at("payload"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedBody, std::string("envelope: ") + e.what());
  }
}

Value fault_marker(const FaultInfo& fault) { return Value{{"$fault", to_value(fault)}}; }

bool is_fault_marker(const Value& value) {
  return value.is_object() && value.size() == 1 && value.contains("$fault");
}

}  // namespace flowpipe
