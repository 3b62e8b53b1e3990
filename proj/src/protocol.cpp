#include "flowpipe/protocol.hpp"

#include "flowpipe/error.hpp"
#include "flowpipe/net.hpp"

namespace flowpipe::protocol {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Value chain_to_value(const std::vector<FunctionRef>& chain) {
  Value out = Value::array();
  for (const auto& f : chain) out.push_back({{"fn", f.name}, {"kwargs", f.kwargs}});
  return out;
}

std::vector<FunctionRef> chain_from_value(const Value& v) {
  std::vector<FunctionRef> out;
  for (const auto& f : v) {
    FunctionRef ref{f.at("fn").get<std::string>(), f.value("kwargs", Value::object())};
    out.push_back(std::move(ref));
  }
  return out;
}

Value to_value(const Message& message) {
  return std::visit(
      Overloaded{
          [](const Hello& m) {
            return Value{{"type", "HELLO"},
                         {"version", m.protocol_version},
                         {"client", m.client_name},
                         {"codec", m.codec}};
          },
          [](const HelloAck& m) {
            return Value{{"type", "HELLO_ACK"},
                         {"version", m.protocol_version},
                         {"workers", m.worker_names},
                         {"slots", m.slots},
                         {"codec", m.codec}};
          },
          [](const Call& m) {
            Value inbox = Value::array();
            for (const auto& e : m.inbox) inbox.push_back(flowpipe::to_value(e));
            return Value{{"type", "CALL"},
                         {"call_id", m.call_id},
                         {"piper", m.piper},
                         {"chain", chain_to_value(m.chain)},
                         {"handles_faults", m.handles_faults},
                         {"inbox", std::move(inbox)}};
          },
          [](const Result& m) {
            return Value{{"type", "RESULT"},
                         {"call_id", m.call_id},
                         {"envelope", flowpipe::to_value(m.envelope)}};
          },
          [](const Ping& m) { return Value{{"type", "PING"}, {"nonce", m.nonce}}; },
          [](const Pong& m) { return Value{{"type", "PONG"}, {"nonce", m.nonce}}; },
          [](const Shutdown&) { return Value{{"type", "SHUTDOWN"}}; },
      },
      message);
}

Message from_value(const Value& v) {
  if (!v.is_object()) throw Error(ErrorCode::MalformedBody, "message body must be an object");
  try {
    const std::string type = v.at("type").get<std::string>();
    if (type == "HELLO") {
      return Hello{v.at("version").get<int>(), v.at("client").get<std::string>(),
                   v.value("codec", std::string("text-v1"))};
    }
    if (type == "HELLO_ACK") {
      return HelloAck{v.at("version").get<int>(), v.at("workers").get<std::vector<std::string>>(),
                      v.at("slots").get<int>(), v.value("codec", std::string("text-v1"))};
    }
    if (type == "CALL") {
      Call c;
      c.call_id = v.at("call_id").get<std::uint64_t>();
      c.piper = v.at("piper").get<std::string>();
      c.chain = chain_from_value(v.at("chain"));
      c.handles_faults = v.value("handles_faults", false);
      for (const auto& e : v.at("inbox")) c.inbox.push_back(envelope_from_value(e));
      return c;
    }
    if (type == "RESULT") {
      return Result{v.at("call_id").get<std::uint64_t>(), envelope_from_value(v.at("envelope"))};
    }
    if (type == "PING") return Ping{v.at("nonce").get<std::uint64_t>()};
    if (type == "PONG") return Pong{v.at("nonce").get<std::uint64_t>()};
    if (type == "SHUTDOWN") return Shutdown{};
    throw Error(ErrorCode::MalformedBody, "unknown message type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedBody, e.what());
  }
}

void put_be32(std::string& out, std::uint32_t n) {
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
}

std::uint32_t get_be32(const char* p) {
  auto b = [p](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])); };
  return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

}  // namespace

std::string_view type_name(const Message& message) {
  static constexpr std::string_view names[] = {"HELLO", "HELLO_ACK", "CALL",    "RESULT",
                                                "PING",  "PONG",      "SHUTDOWN"};
  return names[message.index()];
}

std::string encode_body(const Message& message, CodecId codec) {
  return encode(to_value(message), codec);
}

Message decode_body(std::string_view body, CodecId codec) {
  Value v;
  try {
    v = decode(body, codec);
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedBody, e.what());
  }
  return from_value(v);
}

std::string encode_frame(const Message& message, CodecId codec) {
  std::string body = encode_body(message, codec);
  if (body.size() > kMaxFrameBody) {
    throw Error(ErrorCode::Oversize, std::to_string(body.size()) + " byte body");
  }
  std::string out;
  out.reserve(4 + body.size());
  put_be32(out, static_cast<std::uint32_t>(body.size()));
  out += body;
  return out;
}

Message decode_frame(std::string_view bytes, CodecId codec) {
  if (bytes.size() < 4) throw Error(ErrorCode::Truncated, "missing length header");
  const std::uint32_t length = get_be32(bytes.data());
  if (length > kMaxFrameBody) throw Error(ErrorCode::Oversize, std::to_string(length) + " byte body");
  if (bytes.size() - 4 < length) {
    throw Error(ErrorCode::Truncated, "have " + std::to_string(bytes.size() - 4) + " of " +
                                          std::to_string(length) + " body bytes");
  }
  if (bytes.size() - 4 > length) throw Error(ErrorCode::MalformedBody, "trailing bytes after frame");
  return decode_body(bytes.substr(4), codec);
}

void write_message(int fd, const Message& message, CodecId codec) {
  net::write_all(fd, encode_frame(message, codec));
}

std::optional<Message> read_message(int fd, CodecId codec, int timeout_ms) {
  char header[4];
  if (!net::read_exact(fd, header, 4, timeout_ms)) return std::nullopt;
  const std::uint32_t length = get_be32(header);
  if (length > kMaxFrameBody) throw Error(ErrorCode::Oversize, std::to_string(length) + " byte body");
  std::string body(length, '\0');
  if (length > 0 && !net::read_exact(fd, body.data(), length, timeout_ms)) {
    throw Error(ErrorCode::Truncated, "end of stream inside frame");
  }
  return decode_body(body, codec);
}

}  // namespace flowpipe::protocol
