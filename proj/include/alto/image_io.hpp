#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "alto/errors.hpp"
#include "alto/warping.hpp"

namespace alto {

namespace detail {

// Reads one whitespace/comment-delimited header token from a PNM stream.
inline std::string pnm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw DataError("truncated PNM header in " + path);
    return tok;
}

inline int64_t pnm_int(std::istream& in, const std::string& path) {
    const std::string tok = pnm_token(in, path);
    try {
        size_t pos = 0;
        const long long v = std::stoll(tok, &pos);
        if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError("malformed PNM header field '" + tok + "' in " + path);
    }
}

} // namespace detail

// Reads an 8-bit binary PGM (P5, one channel) or PPM (P6, three channels)
// into unit-range floats: byte k maps to k/255 exactly.
inline Image<float> read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path);

    char m0 = 0, m1 = 0;
    in.get(m0).get(m1);
    int64_t channels;
    if (m0 == 'P' && m1 == '5') channels = 1;
    else if (m0 == 'P' && m1 == '6') channels = 3;
    else throw DataError("unsupported image format in " + path + " (want binary PGM/PPM)");

    const int64_t w = detail::pnm_int(in, path);
    const int64_t h = detail::pnm_int(in, path);
    const int64_t maxval = detail::pnm_int(in, path);
    if (w < 1 || h < 1) throw DataError("invalid image dimensions in " + path);
    if (maxval != 255) throw DataError("only 8-bit images supported, got maxval " +
                                       std::to_string(maxval) + " in " + path);

    std::vector<unsigned char> raw(static_cast<size_t>(channels * h * w));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw DataError("truncated pixel data in " + path);

    // PNM interleaves channels per pixel; we store planes.
    Image<float> img(channels, h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < channels; ++c)
                img.at(c, y, x) =
                    static_cast<float>(raw[static_cast<size_t>((y * w + x) * channels + c)]) /
                    255.0f;
    return img;
}

// Writes a unit-range image as binary PGM (1 channel) or PPM (3 channels),
// rounding to the nearest 8-bit level.
template <typename S>
void write_image(const std::string& path, const Image<S>& img) {
    const int64_t c_n = img.channels(), h = img.height(), w = img.width();
    if (c_n != 1 && c_n != 3)
        throw DataError("can only write 1- or 3-channel images, got " + std::to_string(c_n));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image " + path);
    out << (c_n == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";

    std::vector<unsigned char> raw(static_cast<size_t>(c_n * h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < c_n; ++c) {
                const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
                raw[static_cast<size_t>((y * w + x) * c_n + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw DataError("failed writing pixel data to " + path);
}

} // namespace alto
