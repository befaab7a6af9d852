#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "wch/common.hpp"
#include "wch/tensor.hpp"

// Binary tensor container. Layout, all little-endian:
//   bytes 0-3   magic "WTNS"
//   byte  4     format version (1)
//   byte  5     dtype: 0 = f32, 1 = f64
//   byte  6     ndim
//   then ndim x u64 dimensions, then the row-major payload.

namespace wch {

namespace detail {

inline void write_bytes(std::ofstream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::ifstream& is, void* p, size_t n,
                       const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw FormatError("tensor file truncated: " + path);
}

inline void write_u64(std::ofstream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(os, b, 8);
}

inline uint64_t read_u64(std::ifstream& is, const std::string& path) {
    unsigned char b[8];
    read_bytes(is, b, 8, path);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

template <typename S>
void save_tensor(const std::string& path, const Tensor<S>& t) {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    detail::write_bytes(os, "WTNS", 4);
    const unsigned char version = 1;
    const unsigned char dtype = std::is_same_v<S, double> ? 1 : 0;
    const unsigned char ndim = static_cast<unsigned char>(t.rank());
    detail::write_bytes(os, &version, 1);
    detail::write_bytes(os, &dtype, 1);
    detail::write_bytes(os, &ndim, 1);
    for (int64_t i = 0; i < t.rank(); ++i)
        detail::write_u64(os, static_cast<uint64_t>(t.dim(i)));
    detail::write_bytes(os, t.values().data(), t.values().size() * sizeof(S));
    if (!os) throw IoError("write failed: " + path);
}

template <typename S>
Tensor<S> load_tensor(const std::string& path) {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4, path);
    if (std::memcmp(magic, "WTNS", 4) != 0)
        throw FormatError("not a tensor file (bad magic): " + path);
    unsigned char version, dtype, ndim;
    detail::read_bytes(is, &version, 1, path);
    detail::read_bytes(is, &dtype, 1, path);
    detail::read_bytes(is, &ndim, 1, path);
    if (version != 1)
        throw FormatError("unsupported tensor format version " +
                          std::to_string(int(version)) + ": " + path);
    const unsigned char want = std::is_same_v<S, double> ? 1 : 0;
    if (dtype != want)
        throw FormatError("tensor dtype mismatch in " + path + ": stored " +
                          (dtype == 1 ? "f64" : "f32") + ", requested " +
                          (want == 1 ? "f64" : "f32"));
    Shape shape(ndim);
    for (int i = 0; i < ndim; ++i)
        shape[i] = static_cast<int64_t>(detail::read_u64(is, path));
    const int64_t n = numel(shape);
    std::vector<S> values(static_cast<size_t>(n));
    detail::read_bytes(is, values.data(), values.size() * sizeof(S), path);
    char extra;
    if (is.read(&extra, 1); is.gcount() != 0)
        throw FormatError("trailing bytes after tensor payload: " + path);
    return Tensor<S>::from(std::move(shape), std::move(values));
}

}  // namespace wch
