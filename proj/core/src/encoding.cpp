#include "htapstore/encoding.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>

namespace htap {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; chunk to stay portable for large inputs.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::short_string(std::string_view s) {
  if (s.size() > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "identifier too long");
  u16(static_cast<std::uint16_t>(s.size()));
  raw(s);
}

void ByteWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void ByteWriter::value(const Value& v) {
  u8(static_cast<std::uint8_t>(type_of(v)));
  switch (type_of(v)) {
    case ValueType::kInt64: i64(std::get<std::int64_t>(v)); break;
    case ValueType::kFloat64: f64(std::get<double>(v)); break;
    case ValueType::kBool: u8(std::get<bool>(v) ? 1 : 0); break;
    case ValueType::kString: string(std::get<std::string>(v)); break;
  }
}

void ByteWriter::patch_u32(std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t ByteReader::get_le(int n) {
  if (remaining() < static_cast<std::size_t>(n)) throw TruncatedInput{};
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (remaining() < n) throw TruncatedInput{};
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::short_string() {
  const auto n = u16();
  auto b = bytes(n);
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

std::string ByteReader::string() {
  const auto n = u32();
  auto b = bytes(n);
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

Value ByteReader::value() {
  const auto tag = u8();
  switch (tag) {
    case 0: return i64();
    case 1: return f64();
    case 2: return u8() != 0;
    case 3: return string();
    default: throw Error(ErrorCode::kInvalidArgument, "bad value tag " + std::to_string(tag));
  }
}

}  // namespace htap
