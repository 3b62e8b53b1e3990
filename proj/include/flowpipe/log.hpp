#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace flowpipe::log {

enum class Level { Debug = 0, Info = 1, Error = 2 };

std::string_view to_string(Level level) noexcept;
/// Accepts DEBUG/INFO/ERROR in any case.
std::optional<Level> parse_level(std::string_view text);

/// Route records to stderr (empty path) or append to a file. Records below
/// `min_level` are dropped. Unopenable files fall back to stderr.
void setup(const std::string& file_path, Level min_level);
void set_level(Level min_level);
/// Descriptor behind the current sink (2 for stderr).
int sink_fd();
Level level();

/// One line per record: ISO-8601 UTC timestamp, level, source, message,
/// separated by tabs. The sink is flushed after every record.
void emit(Level level, std::string_view source, std::string_view message);

inline void debug(std::string_view source, std::string_view message) {
  emit(Level::Debug, source, message);
}
inline void info(std::string_view source, std::string_view message) {
  emit(Level::Info, source, message);
}
inline void error(std::string_view source, std::string_view message) {
  emit(Level::Error, source, message);
}

}  // namespace flowpipe::log
