#pragma once

#include <vector>

#include "paracolor/data/color.hpp"
#include "paracolor/nn/tensor.hpp"

namespace paracolor::data {

/// Stacks equally sized images into an N x 3 x H x W tensor.
nn::Tensor to_tensor(const std::vector<RgbImage>& images);
nn::Tensor to_tensor(const RgbImage& image);
/// Image `index` of an N x 3 x H x W tensor.
RgbImage rgb_from_tensor(const nn::Tensor& t, int index = 0);

/// 1 x 1 x H x W normalized lightness.
nn::Tensor lightness_tensor(const LabImage& lab);
/// Chroma planes of image `index` of an N x 2 x H x W tensor.
std::vector<double> chroma_from_tensor(const nn::Tensor& t, int index = 0);

}  // namespace paracolor::data
