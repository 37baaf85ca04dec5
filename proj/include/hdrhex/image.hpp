#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hdrhex {

/// Interleaved RGB image, row 0 at the top.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
    /// Columns [x0, x0 + w).
    Image crop_columns(int x0, int w) const;
};

struct ByteImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // RGB interleaved
};

/// round(255 * clamp(v, 0, 1)).
std::uint8_t quantize(double v);
ByteImage to_bytes(const Image& img);
/// byte / 255.
Image from_bytes(const ByteImage& img);

/// Little-endian float map ("PF", scale -1.0), rows stored bottom-to-top.
void write_pfm(const std::filesystem::path& path, const Image& img);
Image read_pfm(const std::filesystem::path& path);

/// 8-bit RGB PNG without alpha.
void write_png(const std::filesystem::path& path, const ByteImage& img);
ByteImage read_png(const std::filesystem::path& path);

}  // namespace hdrhex
