#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pnerf/error.hpp"

namespace pnerf::detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return out;
  }
}

inline void write_f64_le(std::ostream& out, std::span<const double> values) {
  std::vector<char> buffer(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(buffer.data() + 8 * i, &bits, 8);
  }
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
}

/// Returns false on a short read.
inline bool read_f64_le(std::istream& in, std::span<double> values) {
  std::vector<char> buffer(values.size() * 8);
  in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (in.gcount() != static_cast<std::streamsize>(buffer.size())) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, buffer.data() + 8 * i, 8);
    values[i] = std::bit_cast<double>(to_little_endian(bits));
  }
  return true;
}

/// Reads "key value..." header lines; failures name the offending key.
class HeaderReader {
 public:
  HeaderReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::istringstream expect(const std::string& key) {
    std::string line;
    if (!std::getline(in_, line)) fail(key);
    std::istringstream fields(line);
    std::string found;
    fields >> found;
    if (found != key) fail(key);
    return fields;
  }

  template <typename T>
  T value(const std::string& key) {
    auto fields = expect(key);
    T v{};
    if (!(fields >> v)) fail(key);
    return v;
  }

  [[noreturn]] void fail(const std::string& key) const {
    throw FormatError(source_ + ": bad header field '" + key + "'");
  }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace pnerf::detail
