#pragma once

// PLT: portable raw tensor file.
//   8-byte magic "PLT0" padded with four NUL bytes,
//   u32 little-endian rank,
//   rank x u32 little-endian extents,
//   u8 dtype tag (0 = f32, 1 = f64),
//   raw little-endian value buffer.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pattlite/common.hpp"
#include "pattlite/tensor.hpp"

namespace pattlite {

namespace detail {

inline constexpr char kPltMagic[8] = {'P', 'L', 'T', '0', 0, 0, 0, 0};

template <class Scalar>
constexpr std::uint8_t dtype_tag() {
    static_assert(sizeof(Scalar) == 4 || sizeof(Scalar) == 8, "PLT supports f32/f64 only");
    return sizeof(Scalar) == 4 ? 0 : 1;
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                 static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    os.write(b, 4);
}

inline std::uint32_t read_u32le(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw DataError("PLT: truncated file while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <class Scalar>
void write_plt(std::ostream& os, const Tensor<Scalar>& t) {
    os.write(detail::kPltMagic, 8);
    detail::write_u32le(os, static_cast<std::uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a)
        detail::write_u32le(os, static_cast<std::uint32_t>(t.extent(a)));
    const std::uint8_t tag = detail::dtype_tag<Scalar>();
    os.write(reinterpret_cast<const char*>(&tag), 1);
    // Little-endian host assumed; extents and values are written raw.
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * static_cast<Index>(sizeof(Scalar))));
    if (!os) throw DataError("PLT: write failed");
}

template <class Scalar>
void save_plt(const std::string& path, const Tensor<Scalar>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("PLT: cannot open for writing: " + path);
    write_plt(os, t);
}

template <class Scalar>
Tensor<Scalar> read_plt(std::istream& is, const std::string& origin = "<stream>") {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, detail::kPltMagic, 8) != 0)
        throw DataError("PLT: bad magic in " + origin);
    const std::uint32_t rank = detail::read_u32le(is, "rank");
    if (rank > 8) throw DataError("PLT: implausible rank in " + origin);
    std::vector<int> shape(rank);
    for (auto& e : shape) {
        e = static_cast<int>(detail::read_u32le(is, "extent"));
        if (e < 1) throw DataError("PLT: extent < 1 in " + origin);
    }
    std::uint8_t tag = 0;
    if (!is.read(reinterpret_cast<char*>(&tag), 1)) throw DataError("PLT: missing dtype tag in " + origin);
    if (tag != detail::dtype_tag<Scalar>())
        throw DataError("PLT: dtype tag " + std::to_string(int(tag)) + " does not match requested scalar in " +
                        origin);
    Tensor<Scalar> t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * static_cast<Index>(sizeof(Scalar)))))
        throw DataError("PLT: truncated value buffer in " + origin);
    return t;
}

template <class Scalar>
Tensor<Scalar> load_plt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("PLT: cannot open: " + path);
    return read_plt<Scalar>(is, path);
}

// Reads just the dtype tag so callers can dispatch without loading values.
inline std::uint8_t plt_dtype(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("PLT: cannot open: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, detail::kPltMagic, 8) != 0)
        throw DataError("PLT: bad magic in " + path);
    const std::uint32_t rank = detail::read_u32le(is, "rank");
    is.seekg(static_cast<std::streamoff>(4) * rank, std::ios::cur);
    std::uint8_t tag = 0;
    if (!is.read(reinterpret_cast<char*>(&tag), 1)) throw DataError("PLT: missing dtype tag in " + path);
    return tag;
}

}  // namespace pattlite
