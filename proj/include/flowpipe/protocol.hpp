#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "flowpipe/codec.hpp"
#include "flowpipe/envelope.hpp"
#include "flowpipe/worker.hpp"

namespace flowpipe::protocol {

inline constexpr std::uint32_t kMaxFrameBody = 64u * 1024u * 1024u;
inline constexpr int kVersion = 1;

struct Hello {
  int protocol_version = kVersion;
  std::string client_name;
  std::string codec = "text-v1";
  friend bool operator==(const Hello&, const Hello&) = default;
};

struct HelloAck {
  int protocol_version = kVersion;
  std::vector<std::string> worker_names;
  int slots = 1;
  std::string codec = "text-v1";
  friend bool operator==(const HelloAck&, const HelloAck&) = default;
};

struct Call {
  std::uint64_t call_id = 0;
  std::string piper;  // fault provenance on the remote side
  std::vector<FunctionRef> chain;
  bool handles_faults = false;
  std::vector<Envelope> inbox;
  friend bool operator==(const Call&, const Call&) = default;
};

struct Result {
  std::uint64_t call_id = 0;
  Envelope envelope;
  friend bool operator==(const Result&, const Result&) = default;
};

struct Ping {
  std::uint64_t nonce = 0;
  friend bool operator==(const Ping&, const Ping&) = default;
};

struct Pong {
  std::uint64_t nonce = 0;
  friend bool operator==(const Pong&, const Pong&) = default;
};

struct Shutdown {
  friend bool operator==(const Shutdown&, const Shutdown&) = default;
};

using Message = std::variant<Hello, HelloAck, Call, Result, Ping, Pong, Shutdown>;

/// "HELLO", "HELLO_ACK", "CALL", "RESULT", "PING", "PONG" or "SHUTDOWN".
std::string_view type_name(const Message& message);

/// Wire frame: 4-byte big-endian body length, then the codec-encoded body.
/// Throws Error(Oversize) when the body exceeds kMaxFrameBody.
std::string encode_frame(const Message& message, CodecId codec);
/// Decodes one complete frame. Throws Error(Truncated), Error(Oversize) or
/// Error(MalformedBody); never anything else.
Message decode_frame(std::string_view bytes, CodecId codec);

std::string encode_body(const Message& message, CodecId codec);
Message decode_body(std::string_view body, CodecId codec);

/// Stream helpers over a connected descriptor.
void write_message(int fd, const Message& message, CodecId codec);
/// nullopt on a clean end of stream before a frame starts.
std::optional<Message> read_message(int fd, CodecId codec, int timeout_ms = -1);

}  // namespace flowpipe::protocol
