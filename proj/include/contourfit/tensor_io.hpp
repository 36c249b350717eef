#ifndef CONTOURFIT_TENSOR_IO_HPP
#define CONTOURFIT_TENSOR_IO_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"

namespace contourfit {

// ---------------------------------------------------------------------------
// CFT1 tensor files
//
// Layout: magic bytes "CFT1", little-endian uint32 rank, one little-endian
// uint32 per dimension, then 32-bit little-endian IEEE-754 floats in
// row-major order. 2-D grids are stored as [height, width].
// ---------------------------------------------------------------------------

struct Tensor {
    std::vector<std::uint32_t> shape;
    std::vector<double> data; // held as double in memory, float32 on disk

    Tensor() = default;
    explicit Tensor(std::vector<std::uint32_t> s) : shape(std::move(s)) {
        data.assign(element_count(shape), 0.0);
    }

    static std::size_t element_count(const std::vector<std::uint32_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    std::size_t size() const { return data.size(); }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline float get_f32(const unsigned char* p) {
    const std::uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace detail

/// Serialize to CFT1 bytes. Values are narrowed to float32.
inline std::string encode_cft(const Tensor& t) {
    if (t.shape.empty()) throw FormatError("CFT1: rank must be at least 1");
    if (t.data.size() != Tensor::element_count(t.shape))
        throw FormatError("CFT1: data length does not match shape");
    std::string out;
    out.reserve(8 + 4 * t.shape.size() + 4 * t.data.size());
    out += "CFT1";
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_u32(out, d);
    for (double v : t.data) detail::put_f32(out, static_cast<float>(v));
    return out;
}

inline Tensor decode_cft(const std::string& bytes, const std::string& origin = "") {
    const auto fail = [&](const char* why) {
        throw FormatError("CFT1" + (origin.empty() ? std::string() : " (" + origin + ")") + ": " +
                          why);
    };
    if (bytes.size() < 8) fail("truncated header");
    if (bytes.compare(0, 4, "CFT1") != 0) fail("bad magic");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t rank = detail::get_u32(p + 4);
    if (rank == 0 || rank > 8) fail("unsupported rank");
    if (bytes.size() < 8 + 4ull * rank) fail("truncated shape");
    Tensor t;
    t.shape.resize(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.shape[i] = detail::get_u32(p + 8 + 4ull * i);
        if (t.shape[i] == 0) fail("zero dimension");
        count *= t.shape[i];
    }
    const std::size_t header = 8 + 4ull * rank;
    if (bytes.size() != header + 4ull * count) fail("payload size mismatch");
    t.data.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        t.data[i] = static_cast<double>(detail::get_f32(p + header + 4 * i));
    return t;
}

inline void write_cft(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    const std::string bytes = encode_cft(t);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

inline Tensor read_cft(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_cft(bytes, path.filename().string());
}

// --------------------------- grid/mask adapters ----------------------------

inline Tensor tensor_from_grid(const Grid2D& g) {
    Tensor t({static_cast<std::uint32_t>(g.height), static_cast<std::uint32_t>(g.width)});
    t.data = g.data;
    return t;
}

inline Grid2D grid_from_tensor(const Tensor& t, const std::string& origin = "") {
    if (t.shape.size() != 2)
        throw FormatError("expected a rank-2 tensor" +
                          (origin.empty() ? std::string() : " in " + origin));
    Grid2D g(static_cast<int>(t.shape[1]), static_cast<int>(t.shape[0]));
    g.data = t.data;
    return g;
}

inline Tensor tensor_from_mask(const BinaryMask& m) {
    Tensor t({static_cast<std::uint32_t>(m.height), static_cast<std::uint32_t>(m.width)});
    for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = m.data[i] ? 1.0 : 0.0;
    return t;
}

inline BinaryMask mask_from_tensor(const Tensor& t, const std::string& origin = "") {
    if (t.shape.size() != 2)
        throw FormatError("expected a rank-2 mask tensor" +
                          (origin.empty() ? std::string() : " in " + origin));
    BinaryMask m(static_cast<int>(t.shape[1]), static_cast<int>(t.shape[0]));
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (t.data[i] == 0.0) {
            m.data[i] = 0;
        } else if (t.data[i] == 1.0) {
            m.data[i] = 1;
        } else {
            throw FormatError("mask values must be exactly 0 or 1" +
                              (origin.empty() ? std::string() : " in " + origin));
        }
    }
    return m;
}

} // namespace contourfit

#endif
