#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <vector>

#include "flowpipe/envelope.hpp"

namespace flowpipe {

/// Append-only envelope stream with a fixed set of independent readers.
/// Each reader sees every envelope once, in push order. Storage is released
/// once every reader has moved past an entry.
class Channel {
 public:
  enum class Poll { Item, Empty, End, Stopped };
  enum class State { Open, Closed, Stopped };

  explicit Channel(std::size_t readers = 1);
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;

  std::size_t readers() const noexcept { return cursors_.size(); }

  void push(Envelope envelope);
  /// Normal end of stream.
  void close();
  /// End of stream caused by an executor stop; pending entries stay readable.
  void stop();

  Poll try_pop(std::size_t reader, Envelope& out);
  /// Blocks until an entry is available or the stream ended. Never Empty.
  Poll pop(std::size_t reader, Envelope& out);

  std::uint64_t pushed() const;
  std::uint64_t consumed(std::size_t reader) const;
  std::uint64_t min_consumed() const;
  State state() const;
  /// Entries not yet read by `reader`.
  std::vector<Envelope> pending(std::size_t reader) const;

  /// Listeners are registered before use and run outside the channel lock.
  void on_push(std::function<void()> fn);
  /// Receives the new min_consumed() after every pop.
  void on_pop(std::function<void(std::uint64_t)> fn);

 private:
  void trim_locked();

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Envelope> buf_;
  std::uint64_t base_ = 0;  // absolute index of buf_.front()
  std::vector<std::uint64_t> cursors_;
  State state_ = State::Open;
  std::vector<std::function<void()>> push_listeners_;
  std::vector<std::function<void(std::uint64_t)>> pop_listeners_;
};

}  // namespace flowpipe
