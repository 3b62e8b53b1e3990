#include "flowpipe/log.hpp"

#include <pthread.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <mutex>

namespace flowpipe::log {

namespace {

struct Sink {
  std::mutex mu;
  std::FILE* file = nullptr;  // nullptr: stderr
  std::atomic<Level> min_level{Level::Info};
  std::chrono::system_clock::time_point last{};
};

Sink& sink() {
  static Sink* s = [] {
    auto* created = new Sink();
    // Keep the sink lock consistent across fork() so forked lanes can log.
    pthread_atfork([] { sink().mu.lock(); }, [] { sink().mu.unlock(); },
                   [] { sink().mu.unlock(); });
    return created;
  }();
  return *s;
}

std::string timestamp(std::chrono::system_clock::time_point tp) {
  const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(tp);
  const auto micros =
      std::chrono::duration_cast<std::chrono::microseconds>(tp - secs).count();
  const std::time_t t = std::chrono::system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  char out[64];
  std::snprintf(out, sizeof(out), "%s.%06ldZ", buf, static_cast<long>(micros));
  return out;
}

}  // namespace

std::string_view to_string(Level level) noexcept {
  switch (level) {
    case Level::Debug: return "DEBUG";
    case Level::Info: return "INFO";
    case Level::Error: return "ERROR";
  }
  return "INFO";
}

std::optional<Level> parse_level(std::string_view text) {
  std::string upper(text);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "DEBUG") return Level::Debug;
  if (upper == "INFO") return Level::Info;
  if (upper == "ERROR") return Level::Error;
  return std::nullopt;
}

int sink_fd() {
  Sink& s = sink();
  std::lock_guard lock(s.mu);
  return s.file ? fileno(s.file) : 2;
}

void setup(const std::string& file_path, Level min_level) {
  Sink& s = sink();
  std::lock_guard lock(s.mu);
  if (s.file) {
    std::fclose(s.file);
    s.file = nullptr;
  }
  if (!file_path.empty()) {
    s.file = std::fopen(file_path.c_str(), "a");
    if (!s.file) {
      std::fprintf(stderr, "flowpipe: cannot open log file %s, logging to stderr\n",
                   file_path.c_str());
    }
  }
  s.min_level = min_level;
}

void set_level(Level min_level) { sink().min_level = min_level; }

Level level() { return sink().min_level; }

void emit(Level lvl, std::string_view source, std::string_view message) {
  Sink& s = sink();
  if (lvl < s.min_level.load()) return;
  std::lock_guard lock(s.mu);
  // Non-decreasing per sink even if the wall clock steps back.
  auto now = std::chrono::system_clock::now();
  if (now < s.last) now = s.last;
  s.last = now;
  std::string text(message);
  for (auto& c : text) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  const std::string line = timestamp(now) + "\t" + std::string(to_string(lvl)) + "\t" +
                           std::string(source) + "\t" + text + "\n";
  std::FILE* out = s.file ? s.file : stderr;
  if (std::fwrite(line.data(), 1, line.size(), out) != line.size() || std::fflush(out) != 0) {
    if (out != stderr) {
      std::fwrite(line.data(), 1, line.size(), stderr);
      std::fflush(stderr);
    }
  }
}

}  // namespace flowpipe::log
