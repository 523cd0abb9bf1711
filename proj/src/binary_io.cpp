#include "gaze/binary_io.hpp"

#include "gaze/errors.hpp"

namespace gaze::io {

void BinaryWriter::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw IoError("write failed");
}

void BinaryWriter::le(std::uint64_t v, int width) {
  unsigned char buf[8];
  for (int i = 0; i < width; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(buf, static_cast<std::size_t>(width));
}

void BinaryReader::bytes(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError(context_ + ": truncated file");
}

std::uint8_t BinaryReader::u8() {
  std::uint8_t v;
  bytes(&v, 1);
  return v;
}

std::uint64_t BinaryReader::le(int width) {
  unsigned char buf[8];
  bytes(buf, static_cast<std::size_t>(width));
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

std::string BinaryReader::string(std::size_t n) {
  std::string s(n, '\0');
  if (n) bytes(s.data(), n);
  return s;
}

void BinaryReader::expect_magic(std::string_view tag) {
  std::string got(tag.size(), '\0');
  in_.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (static_cast<std::size_t>(in_.gcount()) != tag.size() || got != tag)
    throw IoError(context_ + ": bad magic (expected " + std::string(tag) + ")");
}

bool BinaryReader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

}  // namespace gaze::io
