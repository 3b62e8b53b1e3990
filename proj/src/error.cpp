#include "flowpipe/error.hpp"

namespace flowpipe {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::SelfLoop: return "SelfLoop";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::CycleRejected: return "CycleRejected";
    case ErrorCode::UnknownEdge: return "UnknownEdge";
    case ErrorCode::DuplicateEdge: return "DuplicateEdge";
    case ErrorCode::RegistryFrozen: return "RegistryFrozen";
    case ErrorCode::UnknownFunction: return "UnknownFunction";
    case ErrorCode::EmptyChain: return "EmptyChain";
    case ErrorCode::ZeroLanes: return "ZeroLanes";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::RemoteUnreachable: return "RemoteUnreachable";
    case ErrorCode::AlreadyStarted: return "AlreadyStarted";
    case ErrorCode::NoTasks: return "NoTasks";
    case ErrorCode::ExecutorStopped: return "ExecutorStopped";
    case ErrorCode::Unreachable: return "Unreachable";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::PortInUse: return "PortInUse";
    case ErrorCode::Oversize: return "Oversize";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::MalformedBody: return "MalformedBody";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::UnsupportedMethod: return "UnsupportedMethod";
    case ErrorCode::StagingFailed: return "StagingFailed";
    case ErrorCode::AlreadyRedeemed: return "AlreadyRedeemed";
    case ErrorCode::Expired: return "Expired";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::UnknownPiper: return "UnknownPiper";
    case ErrorCode::IllegalState: return "IllegalState";
    case ErrorCode::InputArityMismatch: return "InputArityMismatch";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::UnknownExecutor: return "UnknownExecutor";
    case ErrorCode::MalformedWorkersArg: return "MalformedWorkersArg";
    case ErrorCode::CodecError: return "CodecError";
  }
  return "Unknown";
}

}  // namespace flowpipe
