#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "flowpipe/error.hpp"
#include "flowpipe/ipc.hpp"
#include "flowpipe/net.hpp"
#include "flowpipe/worker.hpp"

extern char** environ;

namespace flowpipe {

namespace {

std::mutex& stdout_mutex() {
  static std::mutex mu;
  return mu;
}

std::string payload_text(const Value& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos;
       pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

/// Single-quotes `s` for /bin/sh.
std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

struct ExecResult {
  int status = 0;
  std::string out;
};

ExecResult run_shell(const std::string& command, const std::string& input) {
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw std::runtime_error("pipe failed");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw std::runtime_error("pipe failed");
  }
  net::Fd child_in(in_pipe[0]), to_child(in_pipe[1]);
  net::Fd from_child(out_pipe[0]), child_out(out_pipe[1]);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, child_in.get(), STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, child_out.get(), STDOUT_FILENO);

  const char* argv[] = {"/bin/sh", "-c", command.c_str(), nullptr};
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr,
                               const_cast<char* const*>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw std::runtime_error(std::string("spawn failed: ") + std::strerror(rc));
  child_in.reset();
  child_out.reset();

  ExecResult result;
  std::size_t written = 0;
  if (input.empty()) to_child.reset();
  ::fcntl(to_child.get(), F_SETFL, O_NONBLOCK);
  char buf[65536];
  while (from_child) {
    pollfd fds[2] = {{from_child.get(), POLLIN, 0}, {to_child.get(), POLLOUT, 0}};
    const int n = ::poll(fds, to_child ? 2 : 1, -1);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (to_child && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      ssize_t w = ::write(to_child.get(), input.data() + written, input.size() - written);
      if (w > 0) written += static_cast<std::size_t>(w);
      if (w < 0 && errno != EAGAIN && errno != EINTR) to_child.reset();
      if (written == input.size()) to_child.reset();
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      ssize_t r = ::read(from_child.get(), buf, sizeof(buf));
      if (r > 0) {
        result.out.append(buf, static_cast<std::size_t>(r));
      } else if (r == 0 || (errno != EINTR && errno != EAGAIN)) {
        from_child.reset();
      }
    }
  }
  to_child.reset();
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  result.status = status;
  return result;
}

Value shell_exec(std::span<const Value> inbox, const Value& kwargs) {
  if (!kwargs.contains("cmd") || !kwargs["cmd"].is_string()) {
    throw std::invalid_argument("shell.exec needs a string 'cmd' kwarg");
  }
  std::string cmd = kwargs["cmd"].get<std::string>();
  const std::string text = inbox.empty() ? std::string() : payload_text(inbox[0]);
  std::string input;
  if (cmd.find("{}") != std::string::npos) {
    cmd = replace_all(cmd, "{}", shell_quote(text));
  } else {
    input = text;
  }
  ExecResult r = run_shell(cmd, input);
  if (!WIFEXITED(r.status) || WEXITSTATUS(r.status) != 0) {
    const int code = WIFEXITED(r.status) ? WEXITSTATUS(r.status) : 128 + WTERMSIG(r.status);
    throw std::runtime_error("command exited with status " + std::to_string(code));
  }
  while (!r.out.empty() && (r.out.back() == '\n' || r.out.back() == '\r')) r.out.pop_back();
  return r.out;
}

Value print_item(std::span<const Value> inbox, const Value&) {
  std::lock_guard lock(stdout_mutex());
  std::cout << payload_text(inbox[0]) << '\n' << std::flush;
  return inbox[0];
}

Value dump_item(std::span<const Value> inbox, const Value& kwargs) {
  const std::string type = kwargs.value("type", std::string("file"));
  const std::string codec = kwargs.value("codec", std::string("bin-v1"));
  ipc::Locator loc =
      ipc::default_staging().dump_item(inbox[0], ipc::parse_method(type), parse_codec(codec));
  return ipc::to_value(loc);
}

Value load_item(std::span<const Value> inbox, const Value& kwargs) {
  auto loc = ipc::locator_from_value(inbox[0]);
  if (!loc) throw std::invalid_argument("io.load_item expects a locator");
  ipc::LoadOptions opts;
  if (kwargs.contains("timeout_ms")) {
    opts.timeout = std::chrono::milliseconds(kwargs["timeout_ms"].get<std::int64_t>());
  }
  return ipc::load_item(*loc, opts);
}

Value where(std::span<const Value> inbox, const Value&) {
  std::ostringstream tid;
  tid << std::this_thread::get_id();
  return Value{{"input", inbox[0]},
               {"host", net::host_name()},
               {"parent", static_cast<std::int64_t>(::getppid())},
               {"process", static_cast<std::int64_t>(::getpid())},
               {"thread", tid.str()}};
}

}  // namespace

void register_builtins(WorkerRegistry& registry) {
  registry.register_function(
      "identity", [](std::span<const Value> inbox, const Value&) { return inbox[0]; }, 1);
  registry.register_function("io.print", print_item, 1);
  registry.register_function("io.dump_item", dump_item, 1);
  registry.register_function("io.load_item", load_item, 1);
  registry.register_function("shell.exec", shell_exec, 1);
  registry.register_function("where", where, 1);
}

}  // namespace flowpipe
