#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace strata {

/// Square RGB image, row-major HWC, values in [-1, 1].
class Image {
public:
    Image() = default;
    Image(int height, int width, float fill = -1.0f);

    int height() const { return height_; }
    int width() const { return width_; }
    static constexpr int channels() { return 3; }
    bool empty() const { return data_.empty(); }

    float& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    /// Rec.601 luma of pixel (y, x), same [-1, 1] scale as the channels.
    float luminance(int y, int x) const;

    Image flipped_horizontal() const;

    /// Throws unless square, power-of-two sized, and every value is finite in [-1, 1].
    void validate() const;

    friend bool operator==(const Image&, const Image&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

bool is_power_of_two(int v);

/// 8-bit RGB PNG; [-1,1] maps linearly onto [0,255].
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);

std::uint8_t to_byte(float v);
float from_byte(std::uint8_t b);

}  // namespace strata
