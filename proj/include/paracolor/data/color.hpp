#pragma once

#include <array>

#include "paracolor/data/image.hpp"

namespace paracolor::data {

/// Luminance/chrominance split with both parts normalized to [-1,1].
/// `l` is H x W; `ab` is two planes (a then b), each H x W.
struct LabImage {
    int height = 0;
    int width = 0;
    std::vector<double> l;
    std::vector<double> ab;

    LabImage() = default;
    LabImage(int height, int width);

    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
    double& a(int y, int x) { return ab[static_cast<std::size_t>(y) * width + x]; }
    double& b(int y, int x) { return ab[plane() + static_cast<std::size_t>(y) * width + x]; }
    double a(int y, int x) const { return ab[static_cast<std::size_t>(y) * width + x]; }
    double b(int y, int x) const { return ab[plane() + static_cast<std::size_t>(y) * width + x]; }
};

// Physical CIELAB ranges mapped onto [-1,1].
inline constexpr double kLightnessMax = 100.0;
inline constexpr double kChromaMax = 110.0;

inline double normalize_lightness(double L) { return L / (kLightnessMax / 2.0) - 1.0; }
inline double denormalize_lightness(double l) { return (l + 1.0) * (kLightnessMax / 2.0); }
inline double normalize_chroma(double c) { return c / kChromaMax; }
inline double denormalize_chroma(double c) { return c * kChromaMax; }

/// D65 / sRGB conversion of one pixel to physical (L, a, b).
std::array<double, 3> srgb_to_lab_pixel(double r, double g, double b);
/// Physical (L, a, b) to unclamped sRGB.
std::array<double, 3> lab_to_srgb_pixel(double L, double a, double b);

/// Throws UsageError on non-finite input or values outside [0,1].
LabImage rgb_to_lab(const RgbImage& img);

struct LabToRgbResult {
    RgbImage image;
    double clamped_fraction = 0.0;  // fraction of channel values clamped to [0,1]
    bool clamped() const noexcept { return clamped_fraction > 0.0; }
};

LabToRgbResult lab_to_rgb(const LabImage& img);

/// Replaces the chrominance of `lab` by the given two planes.
LabImage with_chroma(const LabImage& lab, const std::vector<double>& ab);

LabImage resize_bilinear(const LabImage& img, int height, int width);

/// Normalized lightness as an image in [0,1], the model input.
GrayImage lightness(const LabImage& img);

}  // namespace paracolor::data
