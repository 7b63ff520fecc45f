#pragma once

// Binary blob formats. Everything is explicit little-endian so files are
// byte-stable across platforms:
//
//   tensor blob:  magic "MTB1" | u32 ndim | u64 dims[] | f64 payload[]
//
// Higher-level records (datasets, checkpoints, PKCF payloads) are built
// from these primitives plus u32/u64/string fields.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mupfl/tensor.hpp"

namespace mupfl::io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double v) {
    write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("blob: truncated (u32)");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("blob: truncated (u64)");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double read_f64(std::istream& is) {
    return std::bit_cast<double>(read_u64(is));
}

inline std::string read_string(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n)))
        throw std::runtime_error("blob: truncated (string)");
    return s;
}

constexpr std::uint32_t kTensorMagic = 0x3142544dU;  // "MTB1"

inline void write_tensor(std::ostream& os, const Tensor& t) {
    write_u32(os, kTensorMagic);
    write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) write_u64(os, d);
    for (double v : t.data) write_f64(os, v);
}

inline Tensor read_tensor(std::istream& is) {
    if (read_u32(is) != kTensorMagic)
        throw std::runtime_error("tensor blob: bad magic");
    const std::uint32_t ndim = read_u32(is);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(read_u64(is));
    Tensor t(shape);
    for (auto& v : t.data) v = read_f64(is);
    return t;
}

inline void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_tensor(os, t);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return read_tensor(is);
}

}  // namespace mupfl::io
