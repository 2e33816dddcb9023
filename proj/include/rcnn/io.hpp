#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>

namespace rcnn {

std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t crc = 0);
/// Whole-file fingerprint for manifests. Not CRC-32: a file whose records
/// each end in their own CRC-32 has a whole-file CRC-32 that ignores the
/// record contents.
std::uint32_t file_adler32(const std::filesystem::path& path);

/// Little-endian encoding into a byte buffer.
class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
  }
  void put_f32(float value);
  void put_bytes(const void* data, std::size_t size);
  void put_string(std::string_view s);  // u16 length prefix

  const std::string& bytes() const { return bytes_; }
  void clear() { bytes_.clear(); }

 private:
  std::string bytes_;
};

/// Little-endian decoding. Running past the end throws DataError with
/// `what` naming the structure being read.
class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  template <typename T>
  T get() {
    static_assert(std::is_integral_v<T>);
    const char* p = take(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return static_cast<T>(v);
  }
  float get_f32();
  void get_bytes(void* out, std::size_t size);
  std::string get_string();

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const char* take(std::size_t n);

  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

/// Writes through a temporary sibling file which is renamed onto `path`
/// only after `fill` returns and the stream flushed cleanly. On any
/// exception the temporary is removed and `path` is left untouched.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill);

/// Shortest round-trip decimal form.
std::string format_number(double value);

std::string read_file(const std::filesystem::path& path);

/// key: value lines in insertion order of the map (sorted by key).
using KeyValues = std::map<std::string, std::string>;
void write_key_values(const std::filesystem::path& path, const KeyValues& values);
KeyValues read_key_values(const std::filesystem::path& path);

}  // namespace rcnn
