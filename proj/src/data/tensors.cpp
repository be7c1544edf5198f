#include "paracolor/data/tensors.hpp"

#include <algorithm>

#include "paracolor/error.hpp"

namespace paracolor::data {

nn::Tensor to_tensor(const std::vector<RgbImage>& images) {
    if (images.empty()) throw UsageError("no images to stack");
    const int h = images[0].height, w = images[0].width;
    nn::Tensor t(nn::Shape{static_cast<int>(images.size()), 3, h, w});
    const std::size_t stride = 3 * images[0].plane();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].height != h || images[i].width != w) throw UsageError("stacked images must share one size");
        std::copy(images[i].pixels.begin(), images[i].pixels.end(), t.data() + i * stride);
    }
    return t;
}

nn::Tensor to_tensor(const RgbImage& image) { return to_tensor(std::vector<RgbImage>{image}); }

RgbImage rgb_from_tensor(const nn::Tensor& t, int index) {
    if (t.rank() != 4 || t.dim(1) != 3 || index < 0 || index >= t.dim(0))
        throw UsageError("expected an N x 3 x H x W tensor, got " + nn::shape_string(t.shape()));
    RgbImage img(t.dim(2), t.dim(3));
    const double* src = t.data() + static_cast<std::size_t>(index) * img.pixels.size();
    std::copy(src, src + img.pixels.size(), img.pixels.begin());
    return img;
}

nn::Tensor lightness_tensor(const LabImage& lab) { return nn::Tensor(nn::Shape{1, 1, lab.height, lab.width}, lab.l); }

std::vector<double> chroma_from_tensor(const nn::Tensor& t, int index) {
    if (t.rank() != 4 || t.dim(1) != 2 || index < 0 || index >= t.dim(0))
        throw UsageError("expected an N x 2 x H x W tensor, got " + nn::shape_string(t.shape()));
    const std::size_t n = 2 * static_cast<std::size_t>(t.dim(2)) * t.dim(3);
    const double* src = t.data() + index * n;
    return std::vector<double>(src, src + n);
}

}  // namespace paracolor::data
