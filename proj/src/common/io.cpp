#include "posedistill/io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace posedistill::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large blobs in chunks
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "' for reading");
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("read failure on '" + path.string() + "'");
  }
  return bytes;
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path.string() + "' for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failure on '" + path.string() + "'");
  }
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void ByteWriter::put_le(std::uint64_t bits, int width) {
  for (int i = 0; i < width; ++i) {
    bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

void ByteWriter::put_f64(double v) {
  put_le(std::bit_cast<std::uint64_t>(v), 8);
}

void ByteWriter::put_f32(float v) {
  put_le(std::bit_cast<std::uint32_t>(v), 4);
}

void ByteWriter::put_u16(std::uint16_t v) {
  put_le(v, 2);
}

void ByteWriter::put_f64s(std::span<const double> vs) {
  bytes_.reserve(bytes_.size() + vs.size() * 8);
  for (double v : vs) put_f64(v);
}

void ByteWriter::put_f32s(std::span<const float> vs) {
  bytes_.reserve(bytes_.size() + vs.size() * 4);
  for (float v : vs) put_f32(v);
}

std::uint64_t ByteReader::get_le(int width) {
  if (remaining() < static_cast<std::size_t>(width)) {
    throw FormatError("unexpected end of data");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < width; ++i) {
    bits |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
  }
  pos_ += static_cast<std::size_t>(width);
  return bits;
}

double ByteReader::get_f64() {
  return std::bit_cast<double>(get_le(8));
}

float ByteReader::get_f32() {
  return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(4)));
}

std::uint16_t ByteReader::get_u16() {
  return static_cast<std::uint16_t>(get_le(2));
}

void ByteReader::get_f64s(std::span<double> out) {
  if (remaining() < out.size() * 8) {
    throw FormatError("unexpected end of data");
  }
  for (double& v : out) v = get_f64();
}

void ByteReader::get_f32s(std::span<float> out) {
  if (remaining() < out.size() * 4) {
    throw FormatError("unexpected end of data");
  }
  for (float& v : out) v = get_f32();
}

}  // namespace posedistill::io
