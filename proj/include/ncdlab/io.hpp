#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ncdlab/errors.hpp"
#include "ncdlab/tensor.hpp"

namespace ncdlab {

// CDT1 tensor file: magic "CDT1", u32 rank, u32 dims[rank], then row-major
// little-endian float32 payload. Everything on disk is float32 regardless of
// the in-memory scalar type.

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    buf.append(b, 4);
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

template <typename T>
inline std::string encode_cdt1(const Tensor<T>& t) {
    std::string buf;
    buf.reserve(8 + 4 * t.dims.size() + 4 * t.data.size());
    buf.append("CDT1", 4);
    detail::put_u32(buf, static_cast<std::uint32_t>(t.dims.size()));
    for (int d : t.dims) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    for (T v : t.data) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(buf, bits);
    }
    return buf;
}

template <typename T = float>
inline Tensor<T> decode_cdt1(const std::string& buf) {
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    if (buf.size() < 8 || std::memcmp(p, "CDT1", 4) != 0)
        throw io_error("not a CDT1 tensor (bad magic)");
    const std::uint32_t rank = detail::get_u32(p + 4);
    if (rank == 0 || rank > 8) throw io_error("CDT1 rank out of range");
    if (buf.size() < 8 + 4ull * rank) throw io_error("CDT1 header truncated");
    std::vector<int> dims(rank);
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        dims[i] = static_cast<int>(detail::get_u32(p + 8 + 4 * i));
        if (dims[i] <= 0) throw io_error("CDT1 dim must be positive");
        numel *= static_cast<std::uint64_t>(dims[i]);
    }
    const std::size_t off = 8 + 4ull * rank;
    if (buf.size() != off + 4 * numel) throw io_error("CDT1 payload size mismatch");
    Tensor<T> t(dims);
    for (std::uint64_t i = 0; i < numel; ++i) {
        const std::uint32_t bits = detail::get_u32(p + off + 4 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        t.data[i] = static_cast<T>(f);
    }
    return t;
}

template <typename T>
inline void save_cdt1(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    const std::string buf = encode_cdt1(t);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("write failed: " + path.string());
}

template <typename T = float>
inline Tensor<T> load_cdt1(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_cdt1<T>(buf);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw io_error("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace ncdlab
