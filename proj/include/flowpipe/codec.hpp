#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace flowpipe {

/// Payload values flowing through a pipeline. Binary blobs use the json
/// binary subtype.
using Value = nlohmann::json;

Value make_blob(std::vector<std::uint8_t> bytes);

enum class CodecId { Text, Binary };

/// "text-v1" or "bin-v1".
std::string_view codec_name(CodecId id) noexcept;
/// Throws Error(CodecError) on an unknown identifier.
CodecId parse_codec(std::string_view name);

/// text-v1: JSON, blobs as {"$b64": "..."}; bin-v1: CBOR with native byte strings.
std::string encode(const Value& value, CodecId codec);
/// Throws Error(CodecError) on malformed input.
Value decode(std::string_view bytes, CodecId codec);

/// Rewrites blobs into their {"$b64": ...} text form (and back).
Value to_text_form(const Value& value);
Value from_text_form(const Value& value);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace flowpipe
