#include "flowpipe/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "flowpipe/error.hpp"
#include "flowpipe/manifest.hpp"
#include "flowpipe/remote.hpp"
#include "flowpipe/workers_arg.hpp"

namespace flowpipe::cli {

namespace {

bool in_region(const PiperSpec& s) { return s.produce || s.spawn || s.consume; }

}  // namespace

void apply_workers(Pipeline& pipeline, const std::vector<RemoteEndpoint>& workers) {
  std::vector<ExecutorConfig> configs;
  for (const auto& [name, cfg] : pipeline.executors()) configs.push_back(cfg);
  for (auto& cfg : configs) {
    cfg.remote.insert(cfg.remote.end(), workers.begin(), workers.end());
    pipeline.update_executor(std::move(cfg));
  }
}

std::vector<std::pair<std::string, std::string>> apply_use_tcp(Pipeline& pipeline) {
  std::vector<std::pair<std::string, std::string>> rewritten;
  std::map<std::string, PiperSpec> specs = pipeline.pipers();
  const Dag& dag = pipeline.dag();
  for (const auto& [from, to] : dag.edges()) {
    PiperSpec& a = specs.at(from);
    PiperSpec& b = specs.at(to);
    if (a.executor == b.executor || in_region(a) || in_region(b)) continue;
    if (dag.successors(from).size() != 1 || dag.predecessors(to).size() != 1) continue;
    a.chain.stages.push_back(FunctionRef{"io.dump_item", Value{{"type", "socket"}}});
    b.chain.stages.insert(b.chain.stages.begin(), FunctionRef{"io.load_item", Value::object()});
    rewritten.emplace_back(from, to);
  }
  for (auto& [name, spec] : specs) pipeline.update_piper(std::move(spec));
  return rewritten;
}

int cmd_validate(const std::string& manifest) {
  try {
    auto loaded = load_manifest_file(manifest, WorkerRegistry::with_builtins());
    const auto report = loaded.pipeline->validate();
    std::cout << report.to_string() << std::flush;
    return report.ok() ? 0 : 1;
  } catch (const Error& e) {
    std::cout << "invalid: " << e.what() << '\n' << std::flush;
    log::error("validate", e.what());
    return 1;
  }
}

int cmd_run(const RunOptions& options) {
  LoadedManifest loaded;
  try {
    loaded = load_manifest_file(options.manifest, WorkerRegistry::with_builtins());
  } catch (const Error& e) {
    log::error("run", e.what());
    return 1;
  }
  Pipeline& p = *loaded.pipeline;
  if (!loaded.has_inputs) {
    log::error("run", "manifest declares no inputs");
    return 1;
  }
  try {
    if (options.workers) apply_workers(p, *options.workers);
    if (options.use_tcp) {
      for (const auto& [from, to] : apply_use_tcp(p)) {
        log::info("run", "pipe " + from + " -> " + to + " routed through a socket");
      }
      p.set_measure_inband(true);
    }
    const auto report = p.validate();
    if (!report.ok()) {
      for (const auto& v : report.violations) log::error("validate", v);
      return 1;
    }
    p.start(std::move(loaded.inputs));
    p.run();
    p.wait();
  } catch (const Error& e) {
    log::error("run", e.what());
    return 1;
  }

  std::uint64_t faults = 0, delivered = 0;
  for (const auto& [leaf, envs] : p.results()) {
    for (const auto& e : envs) {
      ++delivered;
      if (e.is_fault()) ++faults;
    }
  }
  if (options.use_tcp) {
    for (const auto& [name, ex] : p.live_executors()) {
      std::size_t peak = 0;
      for (const auto& r : ex->dispatch_log()) peak = std::max({peak, r.in_bytes, r.out_bytes});
      log::info("run", "executor " + name + ": largest in-band message " + std::to_string(peak) +
                           " bytes");
    }
  }
  Value stats = p.stats().to_value();
  stats["delivered"] = delivered;
  stats["leaf_faults"] = faults;
  std::cerr << stats.dump(2) << '\n' << std::flush;
  if (!options.stats_out.empty()) {
    std::ofstream out(options.stats_out);
    if (!out) {
      log::error("run", "cannot write stats to " + options.stats_out);
      return 1;
    }
    out << stats.dump(2) << '\n';
  }
  log::info("run", std::to_string(delivered) + " result(s), " + std::to_string(faults) +
                       " fault(s)");
  return faults ? 2 : 0;
}

int cmd_serve(std::uint16_t port, int slots) {
  if (slots < 1) {
    log::error("serve", "slots must be >= 1");
    return 1;
  }
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  std::unique_ptr<remote::WorkerServer> server;
  try {
    server = std::make_unique<remote::WorkerServer>(
        WorkerRegistry::with_builtins(), remote::ServerOptions{"0.0.0.0", port, slots});
  } catch (const Error& e) {
    log::error("serve", e.what());
    return 1;
  }
  std::cout << server->port() << '\n' << std::flush;
  log::info("serve", "listening on port " + std::to_string(server->port()) + " with " +
                         std::to_string(slots) + " slot(s)");

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server->shutdown();
  });
  server->run();
  // A SHUTDOWN message ends run() without a signal; wake the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  log::info("serve", "stopped");
  return 0;
}

int main(int argc, char** argv) {
  CLI::App app{"flowpipe: dataflow pipelines over shared executors"};
  app.require_subcommand(1);
  std::string level_text = "INFO";
  std::string log_file;
  auto add_logging = [&](CLI::App* sub) {
    sub->add_option("--log-level", level_text, "DEBUG, INFO or ERROR");
    sub->add_option("--log-file", log_file, "append log records to this file");
  };

  RunOptions run;
  std::string workers_text;
  auto* run_cmd = app.add_subcommand("run", "run a pipeline manifest to completion");
  run_cmd->add_option("manifest", run.manifest)->required();
  run_cmd->add_option("--workers", workers_text, "host:port#slots[,...] remote lanes");
  run_cmd->add_option("--use_tcp", run.use_tcp, "route cross-context pipes through sockets");
  run_cmd->add_option("--stats-out", run.stats_out, "write stats JSON here");
  add_logging(run_cmd);

  int port = 0;
  int slots = 1;
  auto* serve_cmd = app.add_subcommand("serve", "serve the built-in workers over TCP");
  serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--slots", slots)->check(CLI::PositiveNumber);
  add_logging(serve_cmd);

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "check a manifest");
  validate_cmd->add_option("manifest", validate_path)->required();
  add_logging(validate_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const auto level = log::parse_level(level_text);
  if (!level) {
    std::cerr << "unknown log level '" << level_text << "'\n";
    return 1;
  }
  log::setup(log_file, *level);

  if (*run_cmd) {
    if (!workers_text.empty()) {
      try {
        run.workers = parse_workers_arg(workers_text);
      } catch (const Error& e) {
        log::error("run", e.what());
        return 1;
      }
    }
    return cmd_run(run);
  }
  if (*serve_cmd) return cmd_serve(static_cast<std::uint16_t>(port), slots);
  return cmd_validate(validate_path);
}

}  // namespace flowpipe::cli
