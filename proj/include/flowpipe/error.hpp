#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flowpipe {

enum class ErrorCode {
  // dag
  DuplicateName,
  SelfLoop,
  UnknownNode,
  CycleRejected,
  UnknownEdge,
  DuplicateEdge,
  // registry / chains
  RegistryFrozen,
  UnknownFunction,
  EmptyChain,
  // executor
  ZeroLanes,
  InvalidConfig,
  RemoteUnreachable,
  AlreadyStarted,
  NoTasks,
  ExecutorStopped,
  // remote protocol
  Unreachable,
  VersionMismatch,
  PortInUse,
  Oversize,
  Truncated,
  MalformedBody,
  ProtocolError,
  // ipc
  UnsupportedMethod,
  StagingFailed,
  AlreadyRedeemed,
  Expired,
  TransportError,
  // pipeline
  UnknownPiper,
  IllegalState,
  InputArityMismatch,
  MalformedManifest,
  UnknownExecutor,
  // cli
  MalformedWorkersArg,
  // codec
  CodecError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace flowpipe
