#pragma once

// Little-endian primitive encoding shared by the dataset and checkpoint
// formats. Readers throw IoError on truncation.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace gaze::io {

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n);
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void magic(std::string_view tag) { bytes(tag.data(), tag.size()); }

 private:
  void le(std::uint64_t v, int width);
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string context) : in_(in), context_(std::move(context)) {}

  void bytes(void* data, std::size_t n);
  std::uint8_t u8();
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string(std::size_t n);
  /// Throws IoError unless the next bytes equal tag.
  void expect_magic(std::string_view tag);
  /// True when no bytes remain.
  bool at_end();

 private:
  std::uint64_t le(int width);
  std::istream& in_;
  std::string context_;
};

}  // namespace gaze::io
