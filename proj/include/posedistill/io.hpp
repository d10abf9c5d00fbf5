#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace posedistill::io {

/// Malformed, truncated or checksum-failing file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The filesystem refused a read or a write.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view text);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  void put_f64(double v);
  void put_f32(float v);
  void put_u16(std::uint16_t v);
  void put_f64s(std::span<const double> vs);
  void put_f32s(std::span<const float> vs);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put_le(std::uint64_t bits, int width);
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian decoder that throws FormatError on reads past the end.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  double get_f64();
  float get_f32();
  std::uint16_t get_u16();
  void get_f64s(std::span<double> out);
  void get_f32s(std::span<float> out);

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint64_t get_le(int width);
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace posedistill::io
