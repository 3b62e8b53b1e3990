#include "flowpipe/channel.hpp"

#include <algorithm>
#include <stdexcept>

namespace flowpipe {

Channel::Channel(std::size_t readers) : cursors_(std::max<std::size_t>(readers, 1), 0) {}

void Channel::push(Envelope envelope) {
  {
    std::lock_guard lock(mu_);
    if (state_ != State::Open) throw std::logic_error("push on an ended channel");
    buf_.push_back(std::move(envelope));
  }
  cv_.notify_all();
  for (auto& fn : push_listeners_) fn();
}

void Channel::close() {
  {
    std::lock_guard lock(mu_);
    if (state_ != State::Open) return;
    state_ = State::Closed;
  }
  cv_.notify_all();
  for (auto& fn : push_listeners_) fn();
}

void Channel::stop() {
  {
    std::lock_guard lock(mu_);
    if (state_ != State::Open) return;
    state_ = State::Stopped;
  }
  cv_.notify_all();
  for (auto& fn : push_listeners_) fn();
}

void Channel::trim_locked() {
  const std::uint64_t low = *std::min_element(cursors_.begin(), cursors_.end());
  while (base_ < low && !buf_.empty()) {
    buf_.pop_front();
    ++base_;
  }
}

Channel::Poll Channel::try_pop(std::size_t reader, Envelope& out) {
  std::uint64_t low = 0;
  {
    std::lock_guard lock(mu_);
    std::uint64_t& cur = cursors_.at(reader);
    if (cur >= base_ + buf_.size()) {
      if (state_ == State::Closed) return Poll::End;
      if (state_ == State::Stopped) return Poll::Stopped;
      return Poll::Empty;
    }
    out = buf_[static_cast<std::size_t>(cur - base_)];
    ++cur;
    trim_locked();
    low = *std::min_element(cursors_.begin(), cursors_.end());
  }
  for (auto& fn : pop_listeners_) fn(low);
  return Poll::Item;
}

Channel::Poll Channel::pop(std::size_t reader, Envelope& out) {
  for (;;) {
    Poll p = try_pop(reader, out);
    if (p != Poll::Empty) return p;
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] {
      return cursors_.at(reader) < base_ + buf_.size() || state_ != State::Open;
    });
  }
}

std::uint64_t Channel::pushed() const {
  std::lock_guard lock(mu_);
  return base_ + buf_.size();
}

std::uint64_t Channel::consumed(std::size_t reader) const {
  std::lock_guard lock(mu_);
  return cursors_.at(reader);
}

std::uint64_t Channel::min_consumed() const {
  std::lock_guard lock(mu_);
  return *std::min_element(cursors_.begin(), cursors_.end());
}

Channel::State Channel::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

std::vector<Envelope> Channel::pending(std::size_t reader) const {
  std::lock_guard lock(mu_);
  std::vector<Envelope> out;
  for (std::uint64_t i = cursors_.at(reader); i < base_ + buf_.size(); ++i) {
    out.push_back(buf_[static_cast<std::size_t>(i - base_)]);
  }
  return out;
}

void Channel::on_push(std::function<void()> fn) { push_listeners_.push_back(std::move(fn)); }

void Channel::on_pop(std::function<void(std::uint64_t)> fn) {
  pop_listeners_.push_back(std::move(fn));
}

}  // namespace flowpipe
