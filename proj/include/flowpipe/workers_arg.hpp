#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "flowpipe/executor.hpp"

namespace flowpipe {

/// Parses `host:port#slots[,host:port#slots...]`.
/// Throws Error(MalformedWorkersArg) naming the offset and offending fragment.
std::vector<RemoteEndpoint> parse_workers_arg(std::string_view text);
std::string format_workers_arg(const std::vector<RemoteEndpoint>& entries);
std::string format_endpoint(const RemoteEndpoint& entry);

}  // namespace flowpipe
