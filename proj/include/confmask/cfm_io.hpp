#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "confmask/raster.hpp"

namespace confmask {

// Float-map container ("CFM1"): 4-byte magic, then width/height/channels as
// unsigned 32-bit little-endian, then width*height*channels IEEE-754 binary32
// little-endian samples, row-major with channels interleaved. Used for score
// maps, fidelity maps, and any other raster that must round-trip exactly.

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace detail

inline void save_floatmap(const PlanarImage& img, const std::string& path) {
    if (img.empty()) throw std::invalid_argument("save_floatmap: empty image");
    std::string buf;
    buf.reserve(16 + img.values().size() * 4);
    buf.append("CFM1", 4);
    detail::put_u32le(buf, static_cast<std::uint32_t>(img.width()));
    detail::put_u32le(buf, static_cast<std::uint32_t>(img.height()));
    detail::put_u32le(buf, static_cast<std::uint32_t>(img.channels()));
    for (float v : img.values()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        detail::put_u32le(buf, bits);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_floatmap: cannot open " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("save_floatmap: write failed for " + path);
}

inline PlanarImage load_floatmap(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_floatmap: cannot open " + path);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    if (raw.size() < 16 || std::memcmp(raw.data(), "CFM1", 4) != 0)
        throw std::runtime_error("load_floatmap: " + path + " is not a CFM1 file");
    const std::uint32_t w = detail::get_u32le(raw.data() + 4);
    const std::uint32_t h = detail::get_u32le(raw.data() + 8);
    const std::uint32_t c = detail::get_u32le(raw.data() + 12);
    if (w == 0 || h == 0 || (c != 1 && c != 3))
        throw std::runtime_error("load_floatmap: bad header in " + path + " (" +
                                 std::to_string(w) + "x" + std::to_string(h) + "x" +
                                 std::to_string(c) + ")");
    const std::uint64_t n = static_cast<std::uint64_t>(w) * h * c;
    if (raw.size() != 16 + n * 4)
        throw std::runtime_error("load_floatmap: " + path + " has " +
                                 std::to_string(raw.size() - 16) + " payload bytes, expected " +
                                 std::to_string(n * 4));
    std::vector<float> data(n);
    for (std::uint64_t i = 0; i < n; ++i)
        data[i] = std::bit_cast<float>(detail::get_u32le(raw.data() + 16 + i * 4));
    // from_data re-checks finiteness, so a file with NaN/inf payload is rejected.
    return PlanarImage::from_data(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c),
                                  std::move(data));
}

template <class Tag>
void save_floatmap(const ScalarRaster<Tag>& map, const std::string& path) {
    save_floatmap(map.to_planar(), path);
}

template <class Tag>
ScalarRaster<Tag> load_floatmap_as(const std::string& path) {
    return ScalarRaster<Tag>::from_planar(load_floatmap(path));
}

} // namespace confmask
