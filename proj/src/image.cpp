#include "hdrhex/image.hpp"

#include "hdrhex/error.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace hdrhex {

Image Image::crop_columns(int x0, int w) const {
    Image out(w, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = at(x0 + x, y, c);
        }
    }
    return out;
}

std::uint8_t quantize(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * c));
}

ByteImage to_bytes(const Image& img) {
    ByteImage out{img.width, img.height, std::vector<std::uint8_t>(img.data.size())};
    std::transform(img.data.begin(), img.data.end(), out.data.begin(), quantize);
    return out;
}

Image from_bytes(const ByteImage& img) {
    Image out(img.width, img.height);
    std::transform(img.data.begin(), img.data.end(), out.data.begin(),
                   [](std::uint8_t b) { return static_cast<double>(b) / 255.0; });
    return out;
}

void write_pfm(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError(path.string(), "cannot open for writing");
    os << "PF\n" << img.width << ' ' << img.height << "\n-1.0\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3 * 4);
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(img.at(x, y, c)));
                unsigned char* p = row.data() + (static_cast<std::size_t>(x) * 3 + c) * 4;
                for (int b = 0; b < 4; ++b) p[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
            }
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw ParseError(path.string(), "write failed");
}

namespace {

std::string read_token(std::istream& is) {
    std::string tok;
    is >> tok;
    return tok;
}

}  // namespace

Image read_pfm(const std::filesystem::path& path) {
    const std::string p = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(p, "cannot open PFM");
    if (read_token(is) != "PF") throw ParseError(p, "PFM header must start with 'PF' (RGB)");
    int w = 0, h = 0;
    double scale = 0.0;
    if (!(is >> w >> h >> scale) || w <= 0 || h <= 0) throw ParseError(p, "bad PFM dimensions");
    if (scale >= 0.0) throw ParseError(p, "only little-endian PFM (negative scale) is supported");
    is.get();  // single whitespace before the raster
    Image img(w, h);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3 * 4);
    for (int y = h - 1; y >= 0; --y) {
        is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (static_cast<std::size_t>(is.gcount()) != row.size()) throw ParseError(p, "truncated PFM raster");
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const unsigned char* q = row.data() + (static_cast<std::size_t>(x) * 3 + c) * 4;
                std::uint32_t bits = 0;
                for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(q[b]) << (8 * b);
                img.at(x, y, c) = std::bit_cast<float>(bits);
            }
        }
    }
    return img;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const ByteImage& img) {
    const std::string p = path.string();
    FilePtr fp(std::fopen(p.c_str(), "wb"));
    if (!fp) throw ParseError(p, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ParseError(p, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ParseError(p, "PNG encoding failed");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.data.data() + static_cast<std::size_t>(y) * img.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ByteImage read_png(const std::filesystem::path& path) {
    const std::string p = path.string();
    FilePtr fp(std::fopen(p.c_str(), "rb"));
    if (!fp) throw ParseError(p, "cannot open PNG");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw ParseError(p, "not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError(p, "libpng initialisation failed");
    }
    ByteImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError(p, "corrupt PNG data");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth != 8 || color_type != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError(p, "expected 8-bit RGB PNG without alpha");
    }
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (int y = 0; y < img.height; ++y) {
        png_read_row(png, img.data.data() + static_cast<std::size_t>(y) * img.width * 3, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace hdrhex
