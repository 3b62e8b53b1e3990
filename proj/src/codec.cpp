#include "flowpipe/codec.hpp"

#include <openssl/evp.h>

#include "flowpipe/error.hpp"

namespace flowpipe {

namespace {
constexpr const char* kBlobKey = "$b64";
}

Value make_blob(std::vector<std::uint8_t> bytes) { return Value::binary(std::move(bytes)); }

std::string_view codec_name(CodecId id) noexcept {
  return id == CodecId::Text ? "text-v1" : "bin-v1";
}

CodecId parse_codec(std::string_view name) {
  if (name == "text-v1") return CodecId::Text;
  if (name == "bin-v1") return CodecId::Binary;
  throw Error(ErrorCode::CodecError, "unknown codec '" + std::string(name) + "'");
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  if (bytes.empty()) return out;
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.empty()) return {};
  if (text.size() % 4 != 0) throw Error(ErrorCode::CodecError, "base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::CodecError, "invalid base64");
  // EVP_DecodeBlock counts padding as zero bytes.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

Value to_text_form(const Value& value) {
  if (value.is_binary()) {
    const auto& bin = value.get_binary();
    return Value{{kBlobKey, base64_encode(std::span(bin.data(), bin.size()))}};
  }
  if (value.is_array()) {
    Value out = Value::array();
    for (const auto& v : value) out.push_back(to_text_form(v));
    return out;
  }
  if (value.is_object()) {
    Value out = Value::object();
    for (auto it = value.begin(); it != value.end(); ++it) out[it.key()] = to_text_form(it.value());
    return out;
  }
  return value;
}

Value from_text_form(const Value& value) {
  if (value.is_object()) {
    if (value.size() == 1 && value.contains(kBlobKey) && value[kBlobKey].is_string()) {
      return make_blob(base64_decode(value[kBlobKey].get_ref<const std::string&>()));
    }
    Value out = Value::object();
    for (auto it = value.begin(); it != value.end(); ++it) out[it.key()] = from_text_form(it.value());
    return out;
  }
  if (value.is_array()) {
    Value out = Value::array();
    for (const auto& v : value) out.push_back(from_text_form(v));
    return out;
  }
  return value;
}

std::string encode(const Value& value, CodecId codec) {
  if (codec == CodecId::Text) return to_text_form(value).dump();
  std::vector<std::uint8_t> cbor = Value::to_cbor(value);
  return std::string(cbor.begin(), cbor.end());
}

Value decode(std::string_view bytes, CodecId codec) {
  try {
    if (codec == CodecId::Text) return from_text_form(Value::parse(bytes));
    return Value::from_cbor(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CodecError, e.what());
  }
}

}  // namespace flowpipe
