// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image output: binary PGM (P5) at 8 or 16 bits, label images with a fixed
// class-to-gray palette, and raw little-endian float64 dumps.
//
// Intensities in [0, 1] map to round(v * maxval) after clamping. Label k maps
// to gray kLabelGray[k]: background 0, LV pool 255, myocardium 85, RV pool 170.
// Rows are written top to bottom in the image's v order, u varying fastest.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nisf/errors.hpp"
#include "nisf/volume_io.hpp"

namespace nisf {

inline constexpr std::array<std::uint8_t, 4> kLabelGray{0, 255, 85, 170};

struct GrayImage {
    std::size_t width = 0, height = 0;
    int maxval = 255;  // 255 or 65535
    std::vector<std::uint16_t> pixels;

    bool operator==(const GrayImage&) const = default;
};

inline GrayImage intensity_image(const std::vector<double>& values, std::size_t width, std::size_t height,
                                 int maxval = 255) {
    if (values.size() != width * height) throw DimensionError("intensity_image: value count does not match size");
    if (maxval != 255 && maxval != 65535) throw ContractError("intensity_image: maxval must be 255 or 65535");
    GrayImage img{width, height, maxval, {}};
    img.pixels.reserve(values.size());
    for (double v : values) {
        const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
        img.pixels.push_back(static_cast<std::uint16_t>(std::lround(c * maxval)));
    }
    return img;
}

inline GrayImage label_image(const std::vector<std::uint8_t>& labels, std::size_t width, std::size_t height) {
    if (labels.size() != width * height) throw DimensionError("label_image: label count does not match size");
    GrayImage img{width, height, 255, {}};
    img.pixels.reserve(labels.size());
    for (auto l : labels) {
        if (l >= kLabelGray.size()) throw ContractError("label_image: label " + std::to_string(l) + " has no gray level");
        img.pixels.push_back(kLabelGray[l]);
    }
    return img;
}

/// Inverse of the label palette; throws on gray levels outside it.
inline std::vector<std::uint8_t> labels_from_gray(const GrayImage& img) {
    std::vector<std::uint8_t> out;
    out.reserve(img.pixels.size());
    for (auto g : img.pixels) {
        const auto it = std::find(kLabelGray.begin(), kLabelGray.end(), g);
        if (it == kLabelGray.end()) throw FormatError("gray level " + std::to_string(g) + " is not a label");
        out.push_back(static_cast<std::uint8_t>(it - kLabelGray.begin()));
    }
    return out;
}

inline std::string encode_pgm(const GrayImage& img) {
    if (img.pixels.size() != img.width * img.height) throw DimensionError("encode_pgm: pixel count does not match size");
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                      std::to_string(img.maxval) + "\n";
    for (auto p : img.pixels) {
        if (img.maxval > 255) out.push_back(static_cast<char>(p >> 8));  // 16-bit samples are big-endian
        out.push_back(static_cast<char>(p & 0xff));
    }
    return out;
}

inline GrayImage decode_pgm(const std::string& bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (token() != "P5") throw FormatError("not a binary PGM");
    GrayImage img;
    try {
        img.width = std::stoul(token());
        img.height = std::stoul(token());
        img.maxval = std::stoi(token());
    } catch (const std::logic_error&) {
        throw FormatError("malformed PGM header");
    }
    ++pos;  // single whitespace before the raster
    const std::size_t bpp = img.maxval > 255 ? 2 : 1;
    const std::size_t n = img.width * img.height;
    if (bytes.size() < pos + n * bpp) throw TruncatedPayloadError("PGM raster is truncated");
    img.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto b0 = static_cast<unsigned char>(bytes[pos + i * bpp]);
        img.pixels[i] = bpp == 2 ? static_cast<std::uint16_t>((b0 << 8) | static_cast<unsigned char>(bytes[pos + i * bpp + 1]))
                                 : b0;
    }
    return img;
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
    detail::write_file(path, encode_pgm(img));
}

inline GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(detail::read_file(path)); }

inline void write_raw_f64(const std::vector<double>& values, const std::filesystem::path& path) {
    std::string bytes(values.size() * 8, '\0');
    for (std::size_t i = 0; i < values.size(); ++i)
        detail::put_le64(std::bit_cast<std::uint64_t>(values[i]), bytes.data() + 8 * i);
    detail::write_file(path, bytes);
}

inline std::vector<double> read_raw_f64(const std::filesystem::path& path) {
    const std::string bytes = detail::read_file(path);
    if (bytes.size() % 8 != 0) throw TruncatedPayloadError(path.string() + " is not a whole number of float64 values");
    std::vector<double> out(bytes.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(detail::get_le64(bytes.data() + 8 * i));
    return out;
}

}  // namespace nisf
