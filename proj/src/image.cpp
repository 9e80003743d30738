#include "strata/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace strata {

Image::Image(int height, int width, float fill)
    : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width * 3, fill) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("image dimensions must be positive");
}

float Image::luminance(int y, int x) const {
    return 0.299f * at(y, x, 0) + 0.587f * at(y, x, 1) + 0.114f * at(y, x, 2);
}

Image Image::flipped_horizontal() const {
    Image out(height_, width_);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, width_ - 1 - x, c) = at(y, x, c);
    return out;
}

void Image::validate() const {
    if (height_ != width_) throw std::invalid_argument("image must be square");
    if (!is_power_of_two(height_)) throw std::invalid_argument("image size must be a power of two");
    for (float v : data_) {
        if (!std::isfinite(v) || v < -1.0f || v > 1.0f) {
            throw std::invalid_argument("image values must be finite and within [-1, 1]");
        }
    }
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

std::uint8_t to_byte(float v) {
    float s = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
    return static_cast<std::uint8_t>(std::clamp(s, 0.0f, 255.0f));
}

float from_byte(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

namespace {

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

struct ReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t offset = 0;
};

void read_from_span(png_structp png, png_bytep data, png_size_t length) {
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + length > cur->bytes.size()) png_error(png, "truncated PNG data");
    std::memcpy(data, cur->bytes.data() + cur->offset, length);
    cur->offset += length;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width()) * 3);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG encoding failed");
    }
    png_set_write_fn(png, &out, write_to_vector, flush_noop);
    png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = to_byte(image.at(y, x, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw std::invalid_argument("not a PNG image");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    ReadCursor cursor{bytes, 0};
    Image image;
    std::vector<std::uint8_t> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::invalid_argument("malformed PNG data");
    }
    png_set_read_fn(png, &cursor, read_from_span);
    png_read_info(png, info);
    const auto width = static_cast<int>(png_get_image_width(png, info));
    const auto height = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::invalid_argument("unsupported PNG pixel layout");
    }
    image = Image(height, width);
    row.resize(static_cast<std::size_t>(width) * 3);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) image.at(y, x, c) = from_byte(row[static_cast<std::size_t>(x) * 3 + c]);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_png(const std::string& path, const Image& image) {
    auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write image: " + path);
}

Image read_png(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read image: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

}  // namespace strata
