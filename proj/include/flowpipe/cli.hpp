#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowpipe/executor.hpp"
#include "flowpipe/log.hpp"
#include "flowpipe/pipeline.hpp"

namespace flowpipe::cli {

struct RunOptions {
  std::string manifest;
  std::optional<std::vector<RemoteEndpoint>> workers;
  bool use_tcp = false;
  std::string stats_out;
};

/// Exit codes: 0 clean run, 2 some leaf result is a Fault, 1 could not run.
int cmd_run(const RunOptions& options);
/// Prints the validation report; 0 iff valid.
int cmd_validate(const std::string& manifest);
/// Serves the built-in registry until SIGINT/SIGTERM. Prints the bound port
/// on stdout. 1 if the port is taken.
int cmd_serve(std::uint16_t port, int slots);

/// Appends the given remote lanes to every executor.
void apply_workers(Pipeline& pipeline, const std::vector<RemoteEndpoint>& workers);
/// Routes each one-to-one pipe between different execution contexts through
/// a socket-staged payload: the producer chain ends with io.dump_item and the
/// consumer chain starts with io.load_item. Returns the rewritten pipes.
std::vector<std::pair<std::string, std::string>> apply_use_tcp(Pipeline& pipeline);

/// Full command line entry point.
int main(int argc, char** argv);

}  // namespace flowpipe::cli
