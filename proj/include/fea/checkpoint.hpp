// Self-describing binary container for named parameter blocks.
//
// Layout (little-endian): magic "FEAC", u32 version, then per block:
// u16 name length, utf-8 name, u32 rows, u32 cols, rows*cols f64 row-major.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fea/matrix.hpp"

namespace fea {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return static_cast<bool>(is);
}

} // namespace detail

using BlockMap = std::map<std::string, Matrix>;

inline void feac_write(const std::string& path, const BlockMap& blocks) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write("FEAC", 4);
    detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
    for (const auto& [name, m] : blocks) {
        if (name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: block name too long");
        detail::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
        os.write(reinterpret_cast<const char*>(m.data()),
                 static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline BlockMap feac_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FEAC", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version = 0;
    if (!detail::read_pod(is, version) || version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    BlockMap blocks;
    for (;;) {
        std::uint16_t name_len = 0;
        if (!detail::read_pod(is, name_len)) {
            if (is.eof()) break;
            throw std::runtime_error("checkpoint: truncated block header in " + path);
        }
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint32_t rows = 0, cols = 0;
        if (!is || !detail::read_pod(is, rows) || !detail::read_pod(is, cols))
            throw std::runtime_error("checkpoint: truncated block header in " + path);
        Matrix m(rows, cols);
        is.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated block data in " + path);
        blocks.emplace(std::move(name), std::move(m));
    }
    return blocks;
}

inline const Matrix& feac_get(const BlockMap& blocks, const std::string& name) {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw std::runtime_error("checkpoint: missing block " + name);
    return it->second;
}

// u64 <-> double bit transport, for RNG states inside the f64 container.
inline double bits_to_double(std::uint64_t u) { return std::bit_cast<double>(u); }
inline std::uint64_t double_to_bits(double d) { return std::bit_cast<std::uint64_t>(d); }

} // namespace fea
