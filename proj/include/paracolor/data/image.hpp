#pragma once

#include <filesystem>
#include <vector>

namespace paracolor::data {

/// Planar sRGB image, channel-major (3 x H x W), values in [0,1].
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    RgbImage() = default;
    RgbImage(int height, int width, double fill = 0.0);

    double& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
};

/// Single-channel image, row-major.
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    GrayImage() = default;
    GrayImage(int height, int width, double fill = 0.0);

    double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Axis-aligned box in integer pixel coordinates.
struct BBox {
    int x = 0, y = 0, w = 0, h = 0;
    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Throws UsageError unless values are finite and in [0,1] and H, W >= min_side.
void validate(const RgbImage& img, int min_side = 16);

/// PNG or JPEG by extension; grayscale files are expanded to three equal channels.
RgbImage read_image(const std::filesystem::path& path);
/// 8-bit PNG (or JPEG when the extension says so), values rounded from [0,1].
void write_image(const std::filesystem::path& path, const RgbImage& img);
void write_gray_png(const std::filesystem::path& path, const GrayImage& img);

/// Bilinear resampling with half-pixel centers.
RgbImage resize_bilinear(const RgbImage& img, int height, int width);
GrayImage resize_bilinear(const GrayImage& img, int height, int width);

RgbImage crop(const RgbImage& img, const BBox& box);

/// Rec. 601 luma of an RGB image.
GrayImage to_gray(const RgbImage& img);

/// Rounds every value to the nearest multiple of 1/255.
RgbImage quantize8(const RgbImage& img);

}  // namespace paracolor::data
