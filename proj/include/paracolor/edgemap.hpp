#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "paracolor/data/image.hpp"
#include "paracolor/nn/autograd.hpp"

namespace paracolor::edge {

struct OtsuResult {
    int threshold = 0;        // bins <= threshold form the lower class
    bool degenerate = false;  // all mass in a single bin
};

/// Threshold maximizing between-class variance over a 256-bin histogram;
/// ties resolve to the smaller threshold.
OtsuResult otsu_threshold(std::span<const std::uint64_t> histogram);

struct CannyOptions {
    double sigma = 1.0;
    double low_ratio = 0.5;  // low threshold = low_ratio * high threshold
};

/// Binary edge mask. Thresholds are in gradient-magnitude units of the
/// smoothed [0,1] input (a unit step gives a peak near 1).
struct EdgeMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> mask;
    double high_threshold = 0.0;
    double low_threshold = 0.0;
    bool degenerate = false;  // flat magnitude histogram; mask is empty

    std::uint8_t at(int y, int x) const { return mask[static_cast<std::size_t>(y) * width + x]; }
    std::size_t edge_count() const;
    data::GrayImage to_image() const;
};

/// Gaussian smoothing, 3x3 Sobel gradients, non-maximum suppression along the
/// quantized gradient direction, and hysteresis with the high threshold taken
/// from Otsu over a 256-bin histogram of the magnitude range.
///
/// The pipeline runs on a fixed-point copy of the input, so canny(img) and
/// canny(1 - img) produce bit-identical masks. On exact ties across a
/// gradient direction the pixel on the positive side is kept.
EdgeMap canny(const data::GrayImage& gray, const CannyOptions& options = {});

/// Sobel magnitude with replicate borders, scaled to [0,1] for inputs in [0,1].
/// Works per channel of an N x C x H x W variable and is differentiable everywhere.
nn::Var soft_edge(const nn::Var& x);
data::GrayImage soft_edge(const data::GrayImage& gray);

/// Smoothing constant inside the square root of the soft magnitude.
inline constexpr double kSoftEdgeEps = 1e-6;

}  // namespace paracolor::edge
