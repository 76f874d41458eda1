#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include "gazeseq/error.hpp"
#include "gazeseq/render.hpp"

namespace gazeseq {

/// Binary PGM ("P5", maxval 255).
inline std::string encode_pgm(const EyeFrame& f) {
    std::string out = "P5\n" + std::to_string(f.cols) + " " + std::to_string(f.rows) + "\n255\n";
    out.append(reinterpret_cast<const char*>(f.pixels.data()), f.pixels.size());
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw PersistenceError("cannot open '" + path.string() + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw PersistenceError("failed writing '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_pgm(const std::filesystem::path& path, const EyeFrame& f) { write_file(path, encode_pgm(f)); }

/// Reads a P5 image; `side` is not stored in the file and must be supplied.
inline EyeFrame read_pgm(const std::filesystem::path& path, Side side) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&] {
        skip_space();
        int v = 0;
        const auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
        if (ec != std::errc{}) throw DataError("malformed PGM header in '" + path.string() + "'");
        pos = static_cast<std::size_t>(ptr - bytes.data());
        return v;
    };
    if (bytes.compare(0, 2, "P5") != 0) throw DataError("'" + path.string() + "' is not a binary PGM");
    pos = 2;
    const int cols = read_int();
    const int rows = read_int();
    const int maxval = read_int();
    if (maxval != 255) throw DataError("unsupported PGM maxval in '" + path.string() + "'");
    ++pos;  // single whitespace before the raster
    const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (rows <= 0 || cols <= 0 || bytes.size() - pos != n) {
        throw DataError("PGM raster size mismatch in '" + path.string() + "'");
    }
    EyeFrame f;
    f.rows = rows;
    f.cols = cols;
    f.side = side;
    f.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return f;
}

/// Fixed-point text with six decimals.
inline std::string format_fixed6(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 6);
    if (ec != std::errc{}) throw PersistenceError("cannot format value");
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw DataError("malformed number '" + std::string(s) + "'");
    }
    return v;
}

/// Rounds to the value a six-decimal CSV field reads back as.
inline double quantize6(double v) { return parse_double(format_fixed6(v)); }

}  // namespace gazeseq
