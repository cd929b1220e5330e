#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "segsim/errors.hpp"

namespace segsim::binio {

// Bulk f32 arrays are read/written directly; only supported on LE hosts.
static_assert(std::endian::native == std::endian::little);

// Little-endian primitives shared by the SGAF/SGIX/SGDM/SGSM readers and
// writers. Byte order is composed explicitly so files are portable.

inline void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u = 0;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t u = 0;
    std::memcpy(&u, &v, 8);
    write_u64(os, u);
}

inline void write_str(std::ostream& os, const std::string& s) {
    if (s.size() > 0xffff) throw DataError("string too long for u16 length prefix");
    write_u16(os, static_cast<std::uint16_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw DataError(std::string("truncated file while reading ") + what);
}

inline std::uint16_t read_u16(std::istream& is, const char* what = "u16") {
    unsigned char b[2];
    read_exact(is, b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& is, const char* what = "u32") {
    unsigned char b[4];
    read_exact(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what = "u64") {
    unsigned char b[8];
    read_exact(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline float read_f32(std::istream& is, const char* what = "f32") {
    std::uint32_t u = read_u32(is, what);
    float v = 0.0f;
    std::memcpy(&v, &u, 4);
    return v;
}

inline double read_f64(std::istream& is, const char* what = "f64") {
    std::uint64_t u = read_u64(is, what);
    double v = 0.0;
    std::memcpy(&v, &u, 8);
    return v;
}

inline std::string read_str(std::istream& is, const char* what = "string") {
    std::uint16_t n = read_u16(is, what);
    std::string s(n, '\0');
    if (n > 0) read_exact(is, s.data(), n, what);
    return s;
}

// FNV-1a 64-bit digest; used for the manifest hash chain, not cryptographic.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace segsim::binio
