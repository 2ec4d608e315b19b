#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "error.hpp"

namespace dagnet {

// Little-endian fixed-width binary io used by the model and bank formats.
// The IDX loader has its own big-endian readers (that format demands it).

inline void write_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
    write_u32_le(os, static_cast<std::uint32_t>(v & 0xffffffffull));
    write_u32_le(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    write_u64_le(os, bits);
}

inline std::uint8_t read_u8(std::istream& is, const std::string& what) {
    int c = is.get();
    require(c != std::istream::traits_type::eof(), ErrorCode::Format, "truncated input reading " + what);
    return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32_le(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.gcount() == 4, ErrorCode::Format, "truncated input reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64_le(std::istream& is, const std::string& what) {
    std::uint64_t lo = read_u32_le(is, what);
    std::uint64_t hi = read_u32_le(is, what);
    return lo | (hi << 32);
}

inline double read_f64_le(std::istream& is, const std::string& what) {
    std::uint64_t bits = read_u64_le(is, what);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace dagnet
