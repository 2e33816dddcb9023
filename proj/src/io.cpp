#include "rcnn/io.hpp"

#include "rcnn/tensor.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>
#include <unistd.h>

namespace rcnn {

std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t crc) {
  const auto* p = static_cast<const Bytef*>(data);
  uLong c = crc;
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    c = ::crc32(c, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

std::uint32_t file_adler32(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t size = bytes.size();
  uLong a = ::adler32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    a = ::adler32(a, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(a);
}

void ByteWriter::put_f32(float value) { put(std::bit_cast<std::uint32_t>(value)); }

void ByteWriter::put_bytes(const void* data, std::size_t size) {
  bytes_.append(static_cast<const char*>(data), size);
}

void ByteWriter::put_string(std::string_view s) {
  if (s.size() > 0xFFFF) throw std::invalid_argument("string too long to encode");
  put(static_cast<std::uint16_t>(s.size()));
  put_bytes(s.data(), s.size());
}

const char* ByteReader::take(std::size_t n) {
  if (n > size_ - pos_) {
    throw DataError(what_ + ": truncated at byte " + std::to_string(pos_) + " (need " +
                    std::to_string(n) + ", have " + std::to_string(size_ - pos_) + ")");
  }
  const char* p = data_ + pos_;
  pos_ += n;
  return p;
}

float ByteReader::get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }

void ByteReader::get_bytes(void* out, std::size_t size) { std::memcpy(out, take(size), size); }

std::string ByteReader::get_string() {
  const auto n = get<std::uint16_t>();
  const char* p = take(n);
  return std::string(p, n);
}

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
      fill(out);
      out.flush();
      if (!out) throw DataError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

std::string format_number(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_key_values(const std::filesystem::path& path, const KeyValues& values) {
  atomic_write(path, [&](std::ostream& out) {
    for (const auto& [k, v] : values) out << k << ": " << v << '\n';
  });
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  KeyValues kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    kv[line.substr(0, colon)] = line.substr(colon + 2);
  }
  return kv;
}

}  // namespace rcnn
