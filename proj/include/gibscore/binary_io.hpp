#pragma once

#include "gibscore/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace gibscore::binary {

using Magic = std::array<char, 4>;

constexpr Magic make_magic(const char (&s)[5]) noexcept
{
  return { s[0], s[1], s[2], s[3] };
}

inline std::string magic_string(const Magic& m)
{
  return std::string(m.begin(), m.end());
}

template<typename T>
concept Scalar = std::is_arithmetic_v<T> && !std::is_same_v<T, bool>;

namespace detail {

template<std::size_t N>
struct uint_of;
template<>
struct uint_of<1> { using type = std::uint8_t; };
template<>
struct uint_of<2> { using type = std::uint16_t; };
template<>
struct uint_of<4> { using type = std::uint32_t; };
template<>
struct uint_of<8> { using type = std::uint64_t; };

} // namespace detail

//! Accumulates a little-endian byte image in memory. Files are written in one
//! call so a failed validation never leaves a half-written file behind.
class Writer
{
public:
  template<Scalar T>
  void put(T value)
  {
    using U = typename detail::uint_of<sizeof(T)>::type;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }

  void put_magic(const Magic& magic)
  {
    bytes_.insert(bytes_.end(), magic.begin(), magic.end());
  }

  template<Scalar T>
  void put_array(std::span<const T> values)
  {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const char*>(values.data());
      bytes_.insert(bytes_.end(), p, p + values.size_bytes());
    } else {
      for (T v : values) {
        put(v);
      }
    }
  }

  const std::vector<char>& bytes() const noexcept { return bytes_; }

  void save(const std::filesystem::path& destination) const;

private:
  std::vector<char> bytes_;
};

inline void save_bytes(const std::vector<char>& bytes,
                       const std::filesystem::path& destination)
{
  if (destination.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(destination.parent_path(), ec);
  }
  std::ofstream out(destination, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + destination.string() + "' for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error("write to '" + destination.string() + "' failed");
  }
}

inline void Writer::save(const std::filesystem::path& destination) const
{
  save_bytes(bytes_, destination);
}

//! Bounds-checked little-endian cursor over an in-memory file image.
class Reader
{
public:
  Reader(std::vector<char> bytes, std::string source)
    : bytes_(std::move(bytes))
    , source_(std::move(source))
  {}

  static Reader open(const std::filesystem::path& path)
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw Error("cannot open '" + path.string() + "'");
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return Reader(std::move(bytes), path.string());
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  const std::string& source() const noexcept { return source_; }

  template<Scalar T>
  T get()
  {
    require(sizeof(T), "field");
    using U = typename detail::uint_of<sizeof(T)>::type;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(
                               bytes_[pos_ + i]))
                             << (8 * i));
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  //! Reads the 4 magic bytes and fails with FormatError unless they match.
  void expect_magic(const Magic& expected)
  {
    require(4, "magic");
    Magic got{ bytes_[pos_], bytes_[pos_ + 1], bytes_[pos_ + 2], bytes_[pos_ + 3] };
    pos_ += 4;
    if (got != expected) {
      throw FormatError(source_ + ": expected magic '" + magic_string(expected) +
                        "', found '" + printable(got) + "'");
    }
  }

  void expect_version(std::uint32_t expected)
  {
    auto v = get<std::uint32_t>();
    if (v != expected) {
      throw FormatError(source_ + ": unsupported format version " +
                        std::to_string(v));
    }
  }

  //! Reads `count` scalars. The size is checked against the remaining bytes
  //! before anything is allocated.
  template<Scalar T>
  std::vector<T> get_array(std::uint64_t count)
  {
    if (count > remaining() / sizeof(T)) {
      throw CorruptionError(source_ + ": truncated payload (need " +
                            std::to_string(count) + " elements of " +
                            std::to_string(sizeof(T)) + " bytes, " +
                            std::to_string(remaining()) + " bytes left)");
    }
    std::vector<T> out(static_cast<std::size_t>(count));
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(T));
      pos_ += out.size() * sizeof(T);
    } else {
      for (auto& v : out) {
        v = get<T>();
      }
    }
    return out;
  }

  void expect_end() const
  {
    if (remaining() != 0) {
      throw CorruptionError(source_ + ": " + std::to_string(remaining()) +
                            " trailing bytes after payload");
    }
  }

private:
  void require(std::size_t n, std::string_view what) const
  {
    if (remaining() < n) {
      throw CorruptionError(source_ + ": truncated " + std::string(what));
    }
  }

  static std::string printable(const Magic& m)
  {
    std::string s;
    for (char c : m) {
      s += (c >= 0x20 && c < 0x7f) ? c : '?';
    }
    return s;
  }

  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

//! First four bytes of a file; empty if the file is shorter than that.
inline std::string peek_magic(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open '" + path.string() + "'");
  }
  char buf[4];
  in.read(buf, 4);
  if (in.gcount() != 4) {
    return {};
  }
  return std::string(buf, 4);
}

} // namespace gibscore::binary
