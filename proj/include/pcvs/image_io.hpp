#pragma once

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pcvs/common.hpp"
#include "pcvs/tensor.hpp"

namespace pcvs {

// Image files: 8-bit RGB PNG for colour (values clamped to [0,1] and rounded
// to the nearest step), float32 grayscale PFM for depth. PFM keeps the usual
// convention: rows are stored bottom-up and the sign of the scale field gives
// the payload byte order (negative = little-endian).

namespace detail {

inline float pfm_byteswap(float x) {
    auto u = std::bit_cast<std::uint32_t>(x);
    u = __builtin_bswap32(u);
    return std::bit_cast<float>(u);
}

constexpr bool host_little_endian = std::endian::native == std::endian::little;

}  // namespace detail

template <typename T>
void write_png(const std::string& path, const Tensor<T>& image) {
    if (image.rank() != 3 || image.dim(0) != 3) shape_fail("write_png", image.shape());
    const int h = image.dim(1), w = image.dim(2);
    const auto& v = image.value();
    std::vector<png_byte> rgb(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double f = static_cast<double>(v[static_cast<std::size_t>((c * h + y) * w + x)]);
                f = f < 0.0 ? 0.0 : (f > 1.0 ? 1.0 : f);
                rgb[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<png_byte>(std::lround(f * 255.0));
            }
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    im.width = static_cast<png_uint_32>(w);
    im.height = static_cast<png_uint_32>(h);
    im.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&im, path.c_str(), 0, rgb.data(), 0, nullptr))
        throw IoError("write_png: " + path + ": " + im.message);
}

template <typename T>
Tensor<T> read_png(const std::string& path) {
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.c_str()))
        throw IoError("read_png: " + path + ": " + im.message);
    im.format = PNG_FORMAT_RGB;
    std::vector<png_byte> rgb(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, rgb.data(), 0, nullptr))
        throw IoError("read_png: " + path + ": " + im.message);
    const int h = static_cast<int>(im.height), w = static_cast<int>(im.width);
    auto out = Tensor<T>::zeros({3, h, w});
    auto& v = out.value();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                v[static_cast<std::size_t>((c * h + y) * w + x)] =
                    static_cast<T>(rgb[(static_cast<std::size_t>(y) * w + x) * 3 +
                                       static_cast<std::size_t>(c)]) /
                    static_cast<T>(255);
    return out;
}

template <typename T>
void write_pfm(const std::string& path, const Tensor<T>& map) {
    if (map.rank() != 2) shape_fail("write_pfm", map.shape());
    const int h = map.dim(0), w = map.dim(1);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_pfm: cannot open " + path);
    f << "Pf\n" << w << " " << h << "\n" << (detail::host_little_endian ? "-1.0" : "1.0") << "\n";
    const auto& v = map.value();
    std::vector<float> row(static_cast<std::size_t>(w));
    for (int y = h - 1; y >= 0; --y) {  // bottom row first
        for (int x = 0; x < w; ++x)
            row[static_cast<std::size_t>(x)] =
                static_cast<float>(v[static_cast<std::size_t>(y * w + x)]);
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(w)));
    }
    if (!f) throw IoError("write_pfm: short write to " + path);
}

template <typename T>
Tensor<T> read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pfm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    f >> magic >> w >> h >> scale;
    if (!f || (magic != "Pf" && magic != "PF"))
        throw IoError("read_pfm: " + path + ": not a PFM file");
    if (magic == "PF") throw IoError("read_pfm: " + path + ": colour PFM not supported");
    if (w <= 0 || h <= 0 || scale == 0)
        throw IoError("read_pfm: " + path + ": bad header");
    f.get();  // the single whitespace byte separating header from payload
    const bool file_little = scale < 0;
    auto out = Tensor<T>::zeros({h, w});
    auto& v = out.value();
    std::vector<float> row(static_cast<std::size_t>(w));
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()),
               static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(w)));
        if (!f) throw IoError("read_pfm: " + path + ": truncated payload");
        for (int x = 0; x < w; ++x) {
            float val = row[static_cast<std::size_t>(x)];
            if (file_little != detail::host_little_endian) val = detail::pfm_byteswap(val);
            v[static_cast<std::size_t>(y * w + x)] = static_cast<T>(val);
        }
    }
    return out;
}

}  // namespace pcvs
