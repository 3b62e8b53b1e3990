#include "flowpipe/log.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <thread>

#include "flowpipe/pipeline.hpp"

namespace flowpipe {
namespace {

using namespace std::chrono_literals;

std::string temp_log(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("fp-log-" + tag + "-" + std::to_string(::getpid()) + ".log");
  std::filesystem::remove(p);
  return p.string();
}

std::vector<std::string> lines_of(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

const std::regex kRecord(R"(^(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d+Z)\t(DEBUG|INFO|ERROR)\t([^\t]+)\t(.*)$)");

struct LogReset {
  ~LogReset() { log::setup("", log::Level::Info); }
};

TEST(Log, LevelsAndFormat) {
  LogReset reset;
  const auto path = temp_log("fmt");
  log::setup(path, log::Level::Error);
  log::debug("t", "hidden");
  log::info("t", "hidden");
  log::error("t", "shown");
  auto lines = lines_of(path);
  ASSERT_EQ(lines.size(), 1u);
  std::smatch m;
  ASSERT_TRUE(std::regex_match(lines[0], m, kRecord)) << lines[0];
  EXPECT_EQ(m[2], "ERROR");
  EXPECT_EQ(m[3], "t");
  EXPECT_EQ(m[4], "shown");

  log::set_level(log::Level::Debug);
  log::debug("t", "now visible");
  EXPECT_EQ(lines_of(path).size(), 2u);  // flushed per record
}

TEST(Log, ParseLevel) {
  EXPECT_EQ(log::parse_level("debug"), log::Level::Debug);
  EXPECT_EQ(log::parse_level("ERROR"), log::Level::Error);
  EXPECT_FALSE(log::parse_level("loud"));
}

TEST(Log, UnopenableSinkFallsBack) {
  LogReset reset;
  log::setup("/nonexistent-dir/x/y.log", log::Level::Info);
  EXPECT_EQ(log::sink_fd(), 2);
  log::info("t", "to stderr");
}

TEST(Log, TimestampsNonDecreasingAcrossThreads) {
  LogReset reset;
  const auto path = temp_log("mono");
  log::setup(path, log::Level::Debug);
  std::vector<std::thread> ts;
  for (int t = 0; t < 4; ++t) {
    ts.emplace_back([t] {
      for (int i = 0; i < 200; ++i) log::info("thread" + std::to_string(t), std::to_string(i));
    });
  }
  for (auto& t : ts) t.join();
  const auto lines = lines_of(path);
  ASSERT_EQ(lines.size(), 800u);
  std::string prev;
  for (const auto& l : lines) {
    std::smatch m;
    ASSERT_TRUE(std::regex_match(l, m, kRecord)) << l;
    EXPECT_LE(prev, m[1].str());  // fixed-width ISO timestamps order lexically
    prev = m[1];
  }
}

std::shared_ptr<WorkerRegistry> registry() {
  auto reg = WorkerRegistry::with_builtins();
  reg->register_function("poison", [](std::span<const Value> in, const Value& kw) -> Value {
    if (in[0] == kw.at("item")) throw std::runtime_error("poisoned");
    return in[0];
  });
  reg->register_function("sleep_ms", [](std::span<const Value> in, const Value& kw) {
    std::this_thread::sleep_for(std::chrono::milliseconds(kw.value("ms", 1)));
    return in[0];
  });
  return reg;
}

TEST(Log, OneErrorPerFaultFromOrigin) {
  LogReset reset;
  const auto path = temp_log("fault");
  log::setup(path, log::Level::Debug);
  Pipeline p(registry());
  ExecutorConfig ex;
  ex.name = "ex";
  ex.lanes_inproc = 3;
  p.add_executor(ex);
  p.add_piper(PiperSpec{"a", {{{"identity", {}}}}, "ex"});
  p.add_piper(PiperSpec{"b", {{{"poison", {{"item", 5}}}}}, "ex"});
  p.add_piper(PiperSpec{"c", {{{"identity", {}}}}});
  p.add_pipe("a", "b");
  p.add_pipe("b", "c");
  ASSERT_TRUE(p.validate().ok());
  std::vector<Value> in;
  for (int i = 0; i < 20; ++i) in.emplace_back(i);
  p.start({in});
  p.run();
  p.wait();
  int errors = 0;
  for (const auto& l : lines_of(path)) {
    std::smatch m;
    ASSERT_TRUE(std::regex_match(l, m, kRecord)) << l;
    if (m[2] == "ERROR") {
      ++errors;
      EXPECT_EQ(m[3], "b");
    }
  }
  EXPECT_EQ(errors, 1);
}

TEST(Log, ErrorAppearsBeforeRunEnds) {
  LogReset reset;
  const auto path = temp_log("rt");
  log::setup(path, log::Level::Info);
  Pipeline p(registry());
  ExecutorConfig ex;
  ex.name = "ex";
  ex.lanes_inproc = 1;
  p.add_executor(ex);
  p.add_piper(PiperSpec{"a", {{{"poison", {{"item", 0}}}, {"sleep_ms", {{"ms", 20}}}}}, "ex"});
  ASSERT_TRUE(p.validate().ok());
  std::vector<Value> in;
  for (int i = 0; i < 50; ++i) in.emplace_back(i);
  p.start({in});
  p.run();
  bool seen = false;
  for (int i = 0; i < 200 && !seen; ++i) {
    for (const auto& l : lines_of(path)) seen = seen || l.find("\tERROR\ta\t") != std::string::npos;
    if (!seen) std::this_thread::sleep_for(5ms);
  }
  const auto delivered = p.results()["a"].size();
  EXPECT_TRUE(seen);
  EXPECT_LT(delivered, 50u);
  p.wait();
}

}  // namespace
}  // namespace flowpipe
