#include "flowpipe/worker.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <random>

#include "flowpipe/codec.hpp"
#include "flowpipe/envelope.hpp"
#include "flowpipe/error.hpp"

namespace flowpipe {
namespace {

std::atomic<int> g_calls{0};

std::shared_ptr<WorkerRegistry> registry() {
  auto reg = WorkerRegistry::with_builtins();
  reg->register_function("inc", [](std::span<const Value> in, const Value&) {
    ++g_calls;
    return Value(in[0].get<std::int64_t>() + 1);
  }, 1);
  reg->register_function("reciprocal", [](std::span<const Value> in, const Value&) {
    ++g_calls;
    const auto x = in[0].get<std::int64_t>();
    if (x == 0) throw std::domain_error("division by zero");
    return Value(1.0 / static_cast<double>(x));
  }, 1);
  reg->register_function("parse", [](std::span<const Value> in, const Value&) {
    return Value::parse(in[0].get<std::string>());
  }, 1);
  reg->register_function("scale", [](std::span<const Value> in, const Value& kw) {
    Value v = in[0];
    v["x"] = v["x"].get<std::int64_t>() * kw.value("k", 2);
    return v;
  }, 1);
  reg->register_function("serialize", [](std::span<const Value> in, const Value&) {
    return Value(in[0].dump());
  }, 1);
  return reg;
}

Envelope pay(std::uint64_t i, Value v) { return Envelope::payload(ItemKey{i, std::nullopt}, v); }

TEST(Registry, BuiltinsAndDuplicates) {
  auto reg = WorkerRegistry::with_builtins();
  for (auto n : {"io.print", "io.dump_item", "io.load_item", "identity", "shell.exec"}) {
    EXPECT_TRUE(reg->contains(n)) << n;
  }
  try {
    reg->register_function("identity", [](std::span<const Value> in, const Value&) {
      return in[0];
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateName);
  }
  reg->freeze();
  try {
    reg->register_function("late", [](std::span<const Value> in, const Value&) { return in[0]; });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RegistryFrozen);
  }
}

TEST(Chain, ComposeAndApply) {
  auto reg = registry();
  const auto chain = compose_chain(*reg, {{"inc", {}}, {"inc", {}}});
  const Envelope out = apply_chain(*reg, chain, "p", std::vector{pay(0, 3)});
  ASSERT_FALSE(out.is_fault());
  EXPECT_EQ(out.value(), 5);
  try {
    compose_chain(*reg, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyChain);
  }
  try {
    compose_chain(*reg, {{"nosuch", {}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownFunction);
  }
}

TEST(Chain, UserErrorBecomesFault) {
  auto reg = registry();
  const auto chain = compose_chain(*reg, {{"reciprocal", {}}});
  const Envelope out = apply_chain(*reg, chain, "recip", std::vector{pay(4, 0)});
  ASSERT_TRUE(out.is_fault());
  EXPECT_EQ(out.fault().stage_index, 0);
  EXPECT_EQ(out.fault().error_class, "user_error");
  EXPECT_EQ(out.fault().origin_piper, "recip");
  EXPECT_EQ(out.fault().hops, 0);
  EXPECT_EQ(out.item_index(), 4u);
}

TEST(Chain, FaultShortCircuits) {
  auto reg = registry();
  const auto chain = compose_chain(*reg, {{"inc", {}}, {"inc", {}}});
  FaultInfo f{"up", 1, "user_error", "boom", 2, {}};
  const int before = g_calls.load();
  const Envelope out =
      apply_chain(*reg, chain, "p", std::vector{Envelope::fault(ItemKey{9, std::nullopt}, f)});
  EXPECT_EQ(g_calls.load(), before);
  ASSERT_TRUE(out.is_fault());
  EXPECT_EQ(out.fault().hops, 3);
  EXPECT_EQ(out.fault().origin_piper, "up");
  EXPECT_EQ(out.fault().stage_index, 1);
  EXPECT_EQ(out.item_index(), 9u);
}

TEST(Chain, ArityMismatchIsAFault) {
  auto reg = registry();
  const auto chain = compose_chain(*reg, {{"inc", {}}});
  const Envelope out = apply_chain(*reg, chain, "p", std::vector{pay(0, 41), pay(0, 1)});
  ASSERT_TRUE(out.is_fault());
  EXPECT_EQ(out.fault().error_class, "user_error");
}

TEST(Chain, CollapseEquivalence) {
  auto reg = registry();
  const auto whole = compose_chain(*reg, {{"parse", {}}, {"scale", {{"k", 3}}}, {"serialize", {}}});
  std::mt19937 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Value doc = {{"x", static_cast<int>(rng() % 1000)}, {"tag", "t" + std::to_string(i)}};
    Envelope in = pay(i, doc.dump());
    const Envelope a = apply_chain(*reg, whole, "w", std::vector{in});
    Envelope b = in;
    for (const auto& st : whole.stages) {
      b = apply_chain(*reg, compose_chain(*reg, {st}), "s", std::vector{b});
    }
    EXPECT_EQ(a.value(), b.value());
    EXPECT_EQ(a.item_index(), in.item_index());
  }
}

TEST(Chain, HandlesFaultsSeesMarker) {
  auto reg = registry();
  auto chain = compose_chain(*reg, {{"identity", {}}}, true);
  FaultInfo f{"up", 0, "user_error", "boom", 0, {}};
  const Envelope out =
      apply_chain(*reg, chain, "p", std::vector{Envelope::fault(ItemKey{1, std::nullopt}, f)});
  ASSERT_FALSE(out.is_fault());
  EXPECT_TRUE(is_fault_marker(out.value()));
}

TEST(Envelope, ValueRoundtrip) {
  FaultInfo f{"o", 2, "timeout", "late", 4, {SubFault{1, "s", 0, "user_error"}}};
  const Envelope a = Envelope::fault(ItemKey{3, 2u}, f);
  EXPECT_EQ(envelope_from_value(to_value(a)), a);
  const Envelope b = pay(7, Value{{"k", {1, 2, 3}}});
  EXPECT_EQ(envelope_from_value(to_value(b)), b);
}

TEST(Codec, RoundtripBothCodecs) {
  std::mt19937 rng(2);
  for (int i = 0; i < 100; ++i) {
    std::vector<std::uint8_t> bytes(rng() % 64);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    const Value v = {{"n", static_cast<int>(rng())}, {"s", std::string(rng() % 8, 'x')},
                     {"blob", make_blob(bytes)}, {"list", {1.5, nullptr, true}}};
    for (auto codec : {CodecId::Text, CodecId::Binary}) {
      EXPECT_EQ(decode(encode(v, codec), codec), v);
    }
  }
  EXPECT_EQ(parse_codec("bin-v1"), CodecId::Binary);
  EXPECT_EQ(codec_name(CodecId::Text), "text-v1");
  EXPECT_THROW(parse_codec("zip"), Error);
  EXPECT_THROW(decode("{not json", CodecId::Text), Error);
}

TEST(Codec, Base64) {
  const std::vector<std::uint8_t> data = {'f', 'o', 'o', 'b', 'a'};
  EXPECT_EQ(base64_encode(data), "Zm9vYmE=");
  EXPECT_EQ(base64_decode("Zm9vYmE="), data);
}

}  // namespace
}  // namespace flowpipe
