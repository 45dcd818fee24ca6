#pragma once

// Binary PPM (P6, 8-bit RGB) and a raw little-endian float tensor format
// ("RAWT"): the two on-disk image representations the pipeline accepts.

#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "scalelab/tensor.hpp"

namespace scalelab {

namespace detail {

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                    static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes.data(), 4);
}

inline std::uint32_t read_u32_le(std::istream& in, const std::string& context) {
    std::array<unsigned char, 4> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), 4);
    if (in.gcount() != 4) throw IoError(context + ": truncated");
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

inline void write_f32_le(std::ostream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32_le(out, bits);
}

inline float read_f32_le(std::istream& in, const std::string& context) {
    const std::uint32_t bits = read_u32_le(in, context);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

// Skips PNM whitespace and '#' comments, then reads one unsigned integer.
inline int read_pnm_int(std::istream& in, const std::string& context) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw IoError(context + ": malformed PPM header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

}  // namespace detail

// Writes an (H,W,3) tensor with values in [0,1] as 8-bit binary PPM.
inline void ppm_write(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ValueError("ppm_write: expected (H,W,3) image, got " + shape_to_string(image.shape()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("ppm_write: cannot open " + path.string());
    out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<size_t>(image.size()));
    const float* p = image.data();
    for (std::int64_t i = 0; i < image.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, p[i]));
        bytes[static_cast<size_t>(i)] = static_cast<unsigned char>(v * 255.0f + 0.5f);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("ppm_write: failed writing " + path.string());
}

// Reads a binary PPM into an (H,W,3) tensor scaled to [0,1].
inline Tensor ppm_read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("ppm_read: cannot open " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (in.gcount() != 2 || magic[0] != 'P' || magic[1] != '6')
        throw IoError("ppm_read: " + path.string() + " is not a binary PPM (P6)");
    const int w = detail::read_pnm_int(in, path.string());
    const int h = detail::read_pnm_int(in, path.string());
    const int maxval = detail::read_pnm_int(in, path.string());
    if (w < 1 || h < 1 || maxval != 255)
        throw IoError("ppm_read: " + path.string() + ": unsupported dimensions or maxval");
    std::vector<unsigned char> bytes(static_cast<size_t>(h) * w * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError("ppm_read: " + path.string() + ": truncated pixel data");
    Tensor image(Shape{h, w, 3});
    float* p = image.data();
    for (size_t i = 0; i < bytes.size(); ++i) p[i] = static_cast<float>(bytes[i]) * (1.0f / 255.0f);
    return image;
}

// Raw float tensor: "RAWT", u32 H, W, C, then H*W*C little-endian float32.
// Values are stored as-is (expected to be pre-scaled to [0,1]).
inline void rawt_write(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3) throw ValueError("rawt_write: expected (H,W,C) image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("rawt_write: cannot open " + path.string());
    out.write("RAWT", 4);
    detail::write_u32_le(out, static_cast<std::uint32_t>(image.dim(0)));
    detail::write_u32_le(out, static_cast<std::uint32_t>(image.dim(1)));
    detail::write_u32_le(out, static_cast<std::uint32_t>(image.dim(2)));
    for (std::int64_t i = 0; i < image.size(); ++i) detail::write_f32_le(out, image[i]);
    if (!out) throw IoError("rawt_write: failed writing " + path.string());
}

inline Tensor rawt_read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("rawt_read: cannot open " + path.string());
    char magic[4] = {0};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::string(magic, 4) != "RAWT")
        throw IoError("rawt_read: " + path.string() + " has wrong magic");
    const int h = static_cast<int>(detail::read_u32_le(in, path.string()));
    const int w = static_cast<int>(detail::read_u32_le(in, path.string()));
    const int c = static_cast<int>(detail::read_u32_le(in, path.string()));
    if (h < 1 || w < 1 || c < 1) throw IoError("rawt_read: " + path.string() + ": bad dimensions");
    Tensor image(Shape{h, w, c});
    for (std::int64_t i = 0; i < image.size(); ++i) image[i] = detail::read_f32_le(in, path.string());
    return image;
}

// Dispatch on extension: .ppm or .rawt.
inline Tensor image_read(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".ppm") return ppm_read(path);
    if (ext == ".rawt") return rawt_read(path);
    throw IoError("image_read: unsupported image format '" + ext + "' for " + path.string());
}

}  // namespace scalelab
