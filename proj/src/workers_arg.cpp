#include "flowpipe/workers_arg.hpp"

#include <charconv>

#include "flowpipe/error.hpp"

namespace flowpipe {

namespace {

[[noreturn]] void malformed(std::size_t offset, std::string_view fragment, const std::string& why) {
  throw Error(ErrorCode::MalformedWorkersArg, "at offset " + std::to_string(offset) + ": '" +
                                                  std::string(fragment) + "' " + why);
}

bool parse_uint(std::string_view s, unsigned long& out) {
  if (s.empty() || s.size() > 9) return false;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

RemoteEndpoint parse_entry(std::string_view frag, std::size_t offset) {
  const auto hash = frag.rfind('#');
  if (hash == std::string_view::npos) malformed(offset, frag, "is missing '#slots'");
  const auto colon = frag.rfind(':', hash);
  if (colon == std::string_view::npos) malformed(offset, frag, "is missing ':port'");
  const auto host = frag.substr(0, colon);
  const auto port = frag.substr(colon + 1, hash - colon - 1);
  const auto slots = frag.substr(hash + 1);
  if (host.empty()) malformed(offset, frag, "has an empty host");
  if (host.find_first_of(":#") != std::string_view::npos) {
    malformed(offset, frag, "has a malformed host");
  }
  unsigned long p = 0, s = 0;
  if (!parse_uint(port, p) || p == 0 || p > 65535) {
    malformed(offset + colon + 1, frag, "has an invalid port");
  }
  if (!parse_uint(slots, s)) malformed(offset + hash + 1, frag, "has invalid slots");
  if (s < 1) malformed(offset + hash + 1, frag, "needs slots >= 1");
  return RemoteEndpoint{std::string(host), static_cast<std::uint16_t>(p), static_cast<int>(s)};
}

}  // namespace

std::vector<RemoteEndpoint> parse_workers_arg(std::string_view text) {
  std::vector<RemoteEndpoint> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    const auto frag = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    if (frag.empty()) malformed(start, frag, "is an empty entry");
    out.push_back(parse_entry(frag, start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_endpoint(const RemoteEndpoint& e) {
  return e.host + ":" + std::to_string(e.port) + "#" + std::to_string(e.slots);
}

std::string format_workers_arg(const std::vector<RemoteEndpoint>& entries) {
  std::string out;
  for (const auto& e : entries) {
    if (!out.empty()) out += ",";
    out += format_endpoint(e);
  }
  return out;
}

}  // namespace flowpipe
