#include "flowpipe/pipeline.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <set>
#include <thread>

#include "flowpipe/error.hpp"

namespace flowpipe {
namespace {

using namespace std::chrono_literals;

std::atomic<int> g_user_calls{0};

std::shared_ptr<WorkerRegistry> test_registry() {
  auto reg = WorkerRegistry::with_builtins();
  reg->register_function("add", [](std::span<const Value> in, const Value& kw) {
    ++g_user_calls;
    return Value(in[0].get<std::int64_t>() + kw.value("n", 1));
  });
  reg->register_function("poison", [](std::span<const Value> in, const Value& kw) -> Value {
    ++g_user_calls;
    if (in[0] == kw.at("item")) throw std::runtime_error("poisoned");
    return in[0];
  });
  reg->register_function("split", [](std::span<const Value> in, const Value& kw) {
    const auto x = in[0].get<std::int64_t>();
    Value out = Value::array();
    for (int j = 0; j < kw.value("n", 4); ++j) out.push_back(x * 10 + j);
    return out;
  });
  reg->register_function("sum", [](std::span<const Value> in, const Value&) {
    std::int64_t s = 0;
    for (const auto& v : in[0]) s += v.get<std::int64_t>();
    return Value(s);
  });
  reg->register_function("pair", [](std::span<const Value> in, const Value&) {
    return Value::array({in[0], in[1]});
  });
  reg->register_function("sleep_ms", [](std::span<const Value> in, const Value& kw) {
    std::this_thread::sleep_for(std::chrono::milliseconds(kw.value("ms", 1)));
    return in[0];
  });
  return reg;
}

PiperSpec piper(std::string name, std::vector<FunctionRef> stages,
                std::optional<std::string> executor = std::nullopt) {
  PiperSpec s;
  s.name = std::move(name);
  s.chain.stages = std::move(stages);
  s.executor = std::move(executor);
  return s;
}

FunctionRef fn(std::string name, Value kwargs = Value::object()) {
  return FunctionRef{std::move(name), std::move(kwargs)};
}

ExecutorConfig pool(std::string name, int lanes, int stride = 1) {
  ExecutorConfig c;
  c.name = std::move(name);
  c.lanes_inproc = lanes;
  c.stride = stride;
  return c;
}

std::vector<Value> range(int n) {
  std::vector<Value> v;
  for (int i = 0; i < n; ++i) v.emplace_back(i);
  return v;
}

bool mentions(const ValidationReport& r, const std::string& a, const std::string& b = "") {
  for (const auto& v : r.violations) {
    if (v.find(a) != std::string::npos && v.find(b) != std::string::npos) return true;
  }
  return false;
}

/// p -> s (spawned n) -> c, all on one executor.
void scatter_gather(Pipeline& p, int produce, int spawn, int consume) {
  p.add_executor(pool("ex", 4, 2));
  auto pr = piper("P", {fn("split", {{"n", produce}})}, "ex");
  pr.produce = produce;
  auto sp = piper("S", {fn("add", {{"n", 1}})}, "ex");
  sp.spawn = spawn;
  auto co = piper("C", {fn("sum")}, "ex");
  co.consume = consume;
  p.add_piper(pr);
  p.add_piper(sp);
  p.add_piper(co);
  p.add_pipe("P", "S");
  p.add_pipe("S", "C");
}

TEST(Pipeline, AddConnectDelete) {
  Pipeline p(test_registry());
  p.add_piper(piper("a", {fn("identity")}));
  p.add_piper(piper("b", {fn("identity")}));
  p.add_pipe("a", "b");
  p.del_piper("a");
  EXPECT_EQ(p.dag().size(), 1u);
  EXPECT_TRUE(p.dag().edges().empty());
  EXPECT_EQ(p.pipers().size(), 1u);
}

TEST(Pipeline, DelPiperCascadesLikeDag) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Pipeline p(test_registry());
    Dag oracle;
    const int n = 6;
    for (int i = 0; i < n; ++i) {
      p.add_piper(piper("n" + std::to_string(i), {fn("identity")}));
      oracle.add_node("n" + std::to_string(i));
    }
    for (int k = 0; k < 10; ++k) {
      int a = rng() % n, b = rng() % n;
      if (a >= b) continue;
      const auto from = "n" + std::to_string(a), to = "n" + std::to_string(b);
      if (oracle.has_edge(from, to)) continue;
      oracle.add_edge(from, to);
      p.add_pipe(from, to);
    }
    const auto victim = "n" + std::to_string(rng() % n);
    oracle.remove_node(victim);
    p.del_piper(victim);
    EXPECT_EQ(p.dag().edges(), oracle.edges());
    EXPECT_FALSE(p.pipers().count(victim));
  }
}

TEST(Pipeline, EditErrors) {
  Pipeline p(test_registry());
  p.add_piper(piper("a", {fn("identity")}));
  p.add_piper(piper("b", {fn("identity")}));
  EXPECT_THROW(
      try { p.add_piper(piper("a", {fn("identity")})); } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DuplicateName);
        throw;
      },
      Error);
  try {
    p.del_piper("zz");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownPiper);
  }
  try {
    p.add_pipe("a", "zz");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownPiper);
  }
  p.add_pipe("a", "b");
  try {
    p.add_pipe("b", "a");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CycleRejected);
  }
}

TEST(Pipeline, InboxSlotsFollowPipeOrder) {
  Pipeline p(test_registry());
  p.add_piper(piper("x", {fn("add", {{"n", 100}})}));
  p.add_piper(piper("y", {fn("identity")}));
  p.add_piper(piper("j", {fn("pair")}));
  p.add_pipe("y", "j");
  p.add_pipe("x", "j");
  ASSERT_TRUE(p.validate().ok());
  // roots in insertion order: x then y
  p.start({range(3), range(3)});
  p.run();
  p.wait();
  const auto res = p.results().at("j");
  ASSERT_EQ(res.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(res[i].value(), Value::array({Value(i), Value(i + 100)}));
  }
}

TEST(Pipeline, UnevenInputsFaultTheUnmatchedItems) {
  Pipeline p(test_registry());
  p.add_piper(piper("x", {fn("identity")}));
  p.add_piper(piper("y", {fn("identity")}));
  p.add_piper(piper("j", {fn("pair")}));
  p.add_pipe("x", "j");
  p.add_pipe("y", "j");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(5), range(3)});
  p.run();
  p.wait();
  const auto res = p.results().at("j");
  ASSERT_EQ(res.size(), 5u);
  int faults = 0;
  for (const auto& e : res) faults += e.is_fault();
  EXPECT_EQ(faults, 2);
  EXPECT_TRUE(p.accounting().conserved());
}

TEST(Pipeline, ValidateReportsEverything) {
  Pipeline p(test_registry());
  EXPECT_TRUE(mentions(p.validate(), "no pipers"));
  EXPECT_EQ(p.state(), RunState::Created);

  p.add_piper(piper("a", {fn("nosuch")}));
  p.add_piper(piper("b", {fn("identity")}, "missing"));
  p.add_pipe("a", "b");
  const auto r = p.validate();
  EXPECT_FALSE(r.ok());
  EXPECT_TRUE(mentions(r, "a", "nosuch"));
  EXPECT_TRUE(mentions(r, "b", "missing"));
  EXPECT_EQ(p.state(), RunState::Created);
}

TEST(Pipeline, ScatterGatherValidation) {
  {
    Pipeline p(test_registry());
    scatter_gather(p, 4, 4, 4);
    EXPECT_TRUE(p.validate().ok()) << p.validate().to_string();
  }
  {
    Pipeline p(test_registry());
    scatter_gather(p, 4, 4, 3);
    const auto r = p.validate();
    EXPECT_TRUE(mentions(r, "C", "S"));
    EXPECT_TRUE(mentions(r, "C", "P"));
  }
  {
    Pipeline p(test_registry());
    scatter_gather(p, 4, 3, 3);
    EXPECT_TRUE(mentions(p.validate(), "S", "P"));
  }
  {
    // a spawned piper cannot be an output
    Pipeline p(test_registry());
    auto pr = piper("P", {fn("split")});
    pr.produce = 4;
    auto sp = piper("S", {fn("identity")});
    sp.spawn = 4;
    p.add_piper(pr);
    p.add_piper(sp);
    p.add_pipe("P", "S");
    EXPECT_TRUE(mentions(p.validate(), "S", "output"));
  }
  {
    // nesting: spawn and produce on one piper
    Pipeline p(test_registry());
    auto x = piper("X", {fn("split")});
    x.produce = 2;
    x.spawn = 2;
    p.add_piper(x);
    EXPECT_TRUE(mentions(p.validate(), "X", "nested"));
  }
}

TEST(Pipeline, LifecycleBasics) {
  Pipeline p(test_registry());
  EXPECT_THROW(p.wait(), Error);
  p.add_piper(piper("a", {fn("identity")}));
  ASSERT_TRUE(p.validate().ok());
  try {
    p.start({range(1), range(1)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InputArityMismatch);
  }
  EXPECT_EQ(p.state(), RunState::Validated);
  p.start({range(10)});
  EXPECT_THROW(p.add_piper(piper("b", {fn("identity")})), Error);
  p.run();
  EXPECT_THROW(p.add_piper(piper("b", {fn("identity")})), Error);
  try {
    p.stop();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IllegalState);
  }
  p.wait();
  EXPECT_EQ(p.state(), RunState::Finished);
  EXPECT_THROW(p.run(), Error);
}

TEST(Pipeline, EditAfterValidateReturnsToCreated) {
  Pipeline p(test_registry());
  p.add_piper(piper("a", {fn("identity")}));
  ASSERT_TRUE(p.validate().ok());
  p.add_piper(piper("b", {fn("identity")}));
  EXPECT_EQ(p.state(), RunState::Created);
}

TEST(Pipeline, HundredItemsTraverse) {
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 4));
  p.add_piper(piper("where", {fn("where")}, "ex"));
  p.add_piper(piper("out", {fn("identity")}));
  p.add_pipe("where", "out");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(100)});
  p.run();
  p.wait();
  const auto res = p.results().at("out");
  ASSERT_EQ(res.size(), 100u);
  for (std::size_t i = 0; i < res.size(); ++i) EXPECT_EQ(res[i].value()["input"], Value(i));
  const auto st = p.stats();
  EXPECT_EQ(st.pipers.at("out").items_out, 100u);
  EXPECT_TRUE(st.started && st.finished);
}

TEST(Pipeline, TaskSeqFollowsTopoOrder) {
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 2, 2));
  // inserted out of topological order
  p.add_piper(piper("c", {fn("add")}, "ex"));
  p.add_piper(piper("a", {fn("add")}, "ex"));
  p.add_piper(piper("b", {fn("add")}, "ex"));
  p.add_pipe("a", "b");
  p.add_pipe("b", "c");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(20)});
  p.run();
  p.wait();
  std::vector<std::string> topo;
  for (const auto& n : p.dag().topo_sort()) topo.push_back(n.name);
  EXPECT_EQ(p.task_names("ex"), topo);
  // the first dispatch of each task_seq happens in the same order
  std::vector<int> first_seen;
  for (const auto& r : p.live_executors().at("ex")->dispatch_log()) {
    if (std::find(first_seen.begin(), first_seen.end(), r.task_seq) == first_seen.end()) {
      first_seen.push_back(r.task_seq);
    }
  }
  EXPECT_EQ(first_seen, (std::vector<int>{0, 1, 2}));
  for (const auto& r : p.live_executors().at("ex")->dispatch_log()) {
    EXPECT_EQ(p.task_names("ex").at(static_cast<std::size_t>(r.task_seq)),
              topo.at(static_cast<std::size_t>(r.task_seq)));
  }
}

TEST(Pipeline, PauseResumeNoDuplicatesNoLoss) {
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 3, 2));
  p.add_piper(piper("a", {fn("sleep_ms", {{"ms", 1}})}, "ex"));
  p.add_piper(piper("b", {fn("add")}));
  p.add_piper(piper("c", {fn("add")}, "ex"));
  p.add_pipe("a", "b");
  p.add_pipe("b", "c");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(200)});
  p.run();
  std::this_thread::sleep_for(20ms);
  p.pause();
  const auto acc = p.accounting();
  EXPECT_TRUE(acc.conserved()) << acc.delivered << " " << acc.parked << " " << acc.unread << " "
                               << acc.lost;
  p.run();
  p.wait();
  const auto res = p.results().at("c");
  std::multiset<std::int64_t> got;
  for (const auto& e : res) got.insert(e.value().get<std::int64_t>());
  std::multiset<std::int64_t> want;
  for (int i = 0; i < 200; ++i) want.insert(i + 2);
  EXPECT_EQ(got, want);
}

TEST(Pipeline, PauseThenStopConserves) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Pipeline p(test_registry());
    p.add_executor(pool("ex", 4, 4));
    p.add_piper(piper("a", {fn("sleep_ms", {{"ms", 1}})}, "ex"));
    p.add_piper(piper("b", {fn("add")}, "ex"));
    p.add_piper(piper("c", {fn("add")}));
    p.add_pipe("a", "b");
    p.add_pipe("b", "c");
    ASSERT_TRUE(p.validate().ok());
    p.start({range(300)});
    p.run();
    std::this_thread::sleep_for(std::chrono::milliseconds(rng() % 40));
    p.pause();
    p.stop();
    const auto acc = p.accounting();
    EXPECT_EQ(acc.expected, 300u);
    EXPECT_TRUE(acc.conserved()) << acc.delivered << " " << acc.parked << " " << acc.unread << " "
                                 << acc.lost;
    EXPECT_EQ(p.state(), RunState::Stopped);
  }
}

TEST(Pipeline, ScatterRoutesSubJToInstanceJ) {
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 3, 1));
  auto pr = piper("P", {fn("split", {{"n", 4}})}, "ex");
  pr.produce = 4;
  auto sp = piper("S", {fn("identity")}, "ex");
  sp.spawn = 4;
  auto co = piper("C", {fn("identity")}, "ex");
  co.consume = 4;
  p.add_piper(pr);
  p.add_piper(sp);
  p.add_piper(co);
  p.add_pipe("P", "S");
  p.add_pipe("S", "C");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(6)});
  p.run();
  p.wait();
  const auto res = p.results().at("C");
  ASSERT_EQ(res.size(), 6u);
  for (std::int64_t i = 0; i < 6; ++i) {
    EXPECT_EQ(res[i].value(), Value::array({i * 10, i * 10 + 1, i * 10 + 2, i * 10 + 3}));
    EXPECT_EQ(res[i].key(), (ItemKey{static_cast<std::uint64_t>(i), std::nullopt}));
  }
  const auto names = p.task_names("ex");
  std::map<int, std::vector<ItemKey>> per_task;
  for (const auto& r : p.live_executors().at("ex")->dispatch_log()) {
    per_task[r.task_seq].push_back(r.key);
  }
  for (std::size_t t = 0; t < names.size(); ++t) {
    if (names[t].rfind("S#", 0) != 0) continue;
    const auto j = static_cast<std::uint32_t>(std::stoi(names[t].substr(2)));
    const auto& keys = per_task[static_cast<int>(t)];
    ASSERT_EQ(keys.size(), 6u);
    for (std::size_t k = 0; k < keys.size(); ++k) {
      EXPECT_EQ(keys[k].sub, j);
      EXPECT_EQ(keys[k].index, k);  // ascending parent order
    }
  }
}

TEST(Pipeline, GatherSums) {
  Pipeline p(test_registry());
  scatter_gather(p, 4, 4, 4);
  ASSERT_TRUE(p.validate().ok());
  p.start({range(20)});
  p.run();
  p.wait();
  const auto res = p.results().at("C");
  ASSERT_EQ(res.size(), 20u);
  for (std::int64_t i = 0; i < 20; ++i) {
    std::int64_t want = 0;
    for (int j = 0; j < 4; ++j) want += i * 10 + j + 1;
    EXPECT_EQ(res[i].value(), want);
  }
}

TEST(Pipeline, ShortProduceFaultsItsParent) {
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 2));
  auto pr = piper("P", {fn("split", {{"n", 3}})}, "ex");
  pr.produce = 4;
  auto sp = piper("S", {fn("add")}, "ex");
  sp.spawn = 4;
  auto co = piper("C", {fn("sum")}, "ex");
  co.consume = 4;
  p.add_piper(pr);
  p.add_piper(sp);
  p.add_piper(co);
  p.add_pipe("P", "S");
  p.add_pipe("S", "C");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(3)});
  p.run();
  p.wait();
  const auto res = p.results().at("C");
  ASSERT_EQ(res.size(), 3u);
  for (const auto& e : res) {
    ASSERT_TRUE(e.is_fault());
    EXPECT_EQ(e.fault().origin_piper, "P");
    EXPECT_EQ(e.fault().error_class, "user_error");
  }
}

TEST(Pipeline, OneSubFaultCollapsesItsParent) {
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 4, 2));
  auto pr = piper("P", {fn("split", {{"n", 4}})}, "ex");
  pr.produce = 4;
  auto sp = piper("S", {fn("poison", {{"item", 52}})}, "ex");  // parent 5, sub 2
  sp.spawn = 4;
  auto co = piper("C", {fn("sum")}, "ex");
  co.consume = 4;
  p.add_piper(pr);
  p.add_piper(sp);
  p.add_piper(co);
  p.add_pipe("P", "S");
  p.add_pipe("S", "C");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(10)});
  p.run();
  p.wait();
  const auto res = p.results().at("C");
  ASSERT_EQ(res.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    if (i != 5) {
      EXPECT_FALSE(res[i].is_fault());
      continue;
    }
    ASSERT_TRUE(res[i].is_fault());
    const auto& f = res[i].fault();
    EXPECT_EQ(f.error_class, "user_error");
    EXPECT_EQ(f.origin_piper, "S");
    EXPECT_NE(f.message.find("sub-item 2"), std::string::npos);
    ASSERT_EQ(f.sub_faults.size(), 1u);
    EXPECT_EQ(f.sub_faults[0].sub, 2u);
    EXPECT_EQ(f.hops, 1);
  }
  EXPECT_EQ(p.stats().pipers.at("C").faults_out, 1u);
}

TEST(Pipeline, FaultAwareConsumerSeesMarkers) {
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 2));
  auto pr = piper("P", {fn("split", {{"n", 2}})}, "ex");
  pr.produce = 2;
  auto sp = piper("S", {fn("poison", {{"item", 1}})}, "ex");
  sp.spawn = 2;
  auto co = piper("C", {fn("identity")}, "ex");
  co.consume = 2;
  co.chain.handles_faults = true;
  p.add_piper(pr);
  p.add_piper(sp);
  p.add_piper(co);
  p.add_pipe("P", "S");
  p.add_pipe("S", "C");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(2)});
  p.run();
  p.wait();
  const auto res = p.results().at("C");
  ASSERT_EQ(res.size(), 2u);
  ASSERT_FALSE(res[0].is_fault());
  EXPECT_EQ(res[0].value()[0], 0);
  EXPECT_TRUE(is_fault_marker(res[0].value()[1]));
}

TEST(Pipeline, StatsCountAndPropagate) {
  {
    Pipeline p(test_registry());
    const auto st = p.stats();
    EXPECT_TRUE(st.pipers.empty());
    EXPECT_FALSE(st.started);
  }
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 4));
  p.add_piper(piper("a", {fn("poison", {{"item", 37}})}, "ex"));
  p.add_piper(piper("b", {fn("add")}));
  p.add_piper(piper("c", {fn("add")}, "ex"));
  p.add_pipe("a", "b");
  p.add_pipe("b", "c");
  ASSERT_TRUE(p.validate().ok());
  for (const auto& [n, s] : p.stats().pipers) {
    EXPECT_EQ(s.items_in + s.items_out + s.faults_out, 0u) << n;
  }
  p.start({range(100)});
  p.run();
  p.wait();
  const auto st = p.stats();
  for (const auto& name : {"a", "b", "c"}) {
    EXPECT_EQ(st.pipers.at(name).items_in, 100u) << name;
    EXPECT_EQ(st.pipers.at(name).items_out, 100u) << name;
    EXPECT_EQ(st.pipers.at(name).faults_out, 1u) << name;
  }
  const auto& leaf = p.results().at("c");
  ASSERT_TRUE(leaf[37].is_fault());
  EXPECT_EQ(leaf[37].fault().origin_piper, "a");
  EXPECT_EQ(leaf[37].fault().hops, 2);
  const auto v = st.to_value();
  EXPECT_EQ(v["pipers"]["a"]["items_out"], 100);
}

TEST(Pipeline, OrderedEndToEnd) {
  Pipeline p(test_registry());
  p.add_executor(pool("ex", 5, 3));
  p.add_piper(piper("a", {fn("sleep_ms", {{"ms", 1}})}, "ex"));
  p.add_piper(piper("b", {fn("add")}, "ex"));
  p.add_pipe("a", "b");
  ASSERT_TRUE(p.validate().ok());
  p.start({range(60)});
  p.run();
  p.wait();
  const auto res = p.results().at("b");
  ASSERT_EQ(res.size(), 60u);
  for (std::size_t i = 0; i < 60; ++i) EXPECT_EQ(res[i].key().index, i);
}

}  // namespace
}  // namespace flowpipe
