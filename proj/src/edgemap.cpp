#include "paracolor/edgemap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "paracolor/error.hpp"

namespace paracolor::edge {

OtsuResult otsu_threshold(std::span<const std::uint64_t> histogram) {
    if (histogram.size() != 256) throw UsageError("otsu_threshold expects 256 bins");
    std::uint64_t total = 0, weighted = 0;
    for (std::size_t i = 0; i < 256; ++i) {
        total += histogram[i];
        weighted += i * histogram[i];
    }
    if (total == 0) throw UsageError("otsu_threshold: empty histogram");

    // Between-class variance up to the constant factor 1/total^2:
    // (total*s0 - n0*weighted)^2 / (n0 * n1), evaluated from exact integer sums.
    std::uint64_t n0 = 0, s0 = 0;
    long double best = -1.0L;
    int best_t = -1;
    for (int t = 0; t < 255; ++t) {
        n0 += histogram[t];
        s0 += static_cast<std::uint64_t>(t) * histogram[t];
        const std::uint64_t n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const __int128 diff = static_cast<__int128>(total) * s0 - static_cast<__int128>(n0) * weighted;
        const long double d = static_cast<long double>(diff);
        const long double value = d * d / (static_cast<long double>(n0) * static_cast<long double>(n1));
        if (value > best * (1.0L + 1e-15L)) {
            best = value;
            best_t = t;
        }
    }
    if (best_t < 0) {
        const auto it = std::find_if(histogram.begin(), histogram.end(), [](std::uint64_t c) { return c > 0; });
        return {static_cast<int>(it - histogram.begin()), true};
    }
    return {best_t, false};
}

std::size_t EdgeMap::edge_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

data::GrayImage EdgeMap::to_image() const {
    data::GrayImage img(height, width);
    std::transform(mask.begin(), mask.end(), img.pixels.begin(), [](std::uint8_t m) { return m ? 1.0 : 0.0; });
    return img;
}

namespace {

constexpr int kInputScale = 1024;  // fixed-point steps per unit intensity
constexpr int kKernelSum = 256;    // approximate integer sum of the 1-D Gaussian

std::vector<std::int64_t> integer_gaussian(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> g(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) g[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    const double total = std::accumulate(g.begin(), g.end(), 0.0);
    std::vector<std::int64_t> w(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) w[i] = std::llround(kKernelSum * g[i] / total);
    return w;
}

std::vector<std::int64_t> smooth(const std::vector<std::int64_t>& q, int h, int w,
                                 const std::vector<std::int64_t>& kernel) {
    const int r = static_cast<int>(kernel.size() / 2);
    std::vector<std::int64_t> tmp(q.size()), out(q.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::int64_t acc = 0;
            for (int k = -r; k <= r; ++k) acc += kernel[k + r] * q[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::int64_t acc = 0;
            for (int k = -r; k <= r; ++k) acc += kernel[k + r] * tmp[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    return out;
}

}  // namespace

EdgeMap canny(const data::GrayImage& gray, const CannyOptions& options) {
    if (!(options.sigma > 0.0)) throw UsageError("canny: sigma must be positive");
    if (!(options.low_ratio > 0.0 && options.low_ratio < 1.0)) throw UsageError("canny: low_ratio must be in (0,1)");
    const int h = gray.height, w = gray.width;
    if (h < 1 || w < 1 || gray.pixels.size() != static_cast<std::size_t>(h) * w)
        throw UsageError("canny: malformed image");
    std::vector<std::int64_t> q(gray.pixels.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double v = gray.pixels[i];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw UsageError("canny: input must lie in [0,1]");
        q[i] = std::llround(v * kInputScale);
    }
    const auto kernel = integer_gaussian(options.sigma);
    const std::int64_t kernel_total = std::accumulate(kernel.begin(), kernel.end(), std::int64_t{0});
    const auto s = smooth(q, h, w, kernel);

    auto px = [&](int y, int x) { return s[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)]; };
    const std::size_t n = q.size();
    std::vector<std::int64_t> gx(n), gy(n);
    std::vector<double> mag(n);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            gx[i] = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                    (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            gy[i] = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                    (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            mag[i] = std::sqrt(static_cast<double>(gx[i] * gx[i] + gy[i] * gy[i]));
        }

    // A unit step yields a Sobel response of 8 half-steps; report thresholds on that scale.
    const double unit = 8.0 * kInputScale * static_cast<double>(kernel_total * kernel_total) / 2.0;

    EdgeMap out;
    out.height = h;
    out.width = w;
    out.mask.assign(n, 0);
    const auto [mn_it, mx_it] = std::minmax_element(mag.begin(), mag.end());
    const double mn = *mn_it, mx = *mx_it;
    if (!(mx > mn)) {
        out.degenerate = true;
        out.high_threshold = 1.0;
        out.low_threshold = options.low_ratio;
        return out;
    }

    std::vector<std::uint64_t> histogram(256, 0);
    std::vector<int> bin(n);
    const double width_per_bin = (mx - mn) / 256.0;
    for (std::size_t i = 0; i < n; ++i) {
        bin[i] = std::min(255, static_cast<int>((mag[i] - mn) / width_per_bin));
        ++histogram[bin[i]];
    }
    const OtsuResult otsu = otsu_threshold(histogram);
    const double high = mn + (otsu.threshold + 1) * width_per_bin;
    const double low = options.low_ratio * high;
    out.high_threshold = high / unit;
    out.low_threshold = low / unit;

    constexpr double tan22 = 0.41421356237309503;
    std::vector<std::uint8_t> kept(n, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (mag[i] <= 0.0) continue;
            const double ax = std::abs(static_cast<double>(gx[i])), ay = std::abs(static_cast<double>(gy[i]));
            int dy, dx;  // step toward the lower-coordinate neighbor
            if (ay <= tan22 * ax) {
                dy = 0, dx = -1;
            } else if (ax <= tan22 * ay) {
                dy = -1, dx = 0;
            } else if ((gx[i] > 0) == (gy[i] > 0)) {
                dy = -1, dx = -1;
            } else {
                dy = -1, dx = 1;
            }
            auto m_at = [&](int yy, int xx) {
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
                return mag[static_cast<std::size_t>(yy) * w + xx];
            };
            const double before = m_at(y + dy, x + dx), after = m_at(y - dy, x - dx);
            if (mag[i] >= before && mag[i] > after) kept[i] = 1;
        }

    // Hysteresis: grow from strong pixels through weak ones, 8-connected.
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < n; ++i)
        if (kept[i] && bin[i] > otsu.threshold) {
            out.mask[i] = 1;
            stack.push_back(i);
        }
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
        for (int yy = y - 1; yy <= y + 1; ++yy)
            for (int xx = x - 1; xx <= x + 1; ++xx) {
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
                if (out.mask[j] || !kept[j] || mag[j] < low) continue;
                out.mask[j] = 1;
                stack.push_back(j);
            }
    }
    return out;
}

namespace {

const nn::Tensor& sobel_x() {
    static const nn::Tensor k(nn::Shape{3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
    return k;
}

const nn::Tensor& sobel_y() {
    static const nn::Tensor k(nn::Shape{3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
    return k;
}

}  // namespace

nn::Var soft_edge(const nn::Var& x) {
    // |gx|, |gy| <= 4 for inputs in [0,1], so the magnitude is at most 4*sqrt(2).
    static const double norm = 1.0 / (4.0 * std::sqrt(2.0));
    const nn::Var padded = nn::pad_replicate(x, 1);
    const nn::Var gx = nn::depthwise_fixed(padded, sobel_x());
    const nn::Var gy = nn::depthwise_fixed(padded, sobel_y());
    const nn::Var mag = nn::sqrt_eps(nn::add(nn::square(gx), nn::square(gy)), kSoftEdgeEps);
    return nn::scale(nn::add_scalar(mag, -std::sqrt(kSoftEdgeEps)), norm);
}

data::GrayImage soft_edge(const data::GrayImage& gray) {
    nn::NoGradGuard guard;
    const nn::Var x(nn::Tensor(nn::Shape{1, 1, gray.height, gray.width}, gray.pixels));
    const nn::Var y = soft_edge(x);
    data::GrayImage out(gray.height, gray.width);
    std::copy(y.value().values().begin(), y.value().values().end(), out.pixels.begin());
    return out;
}

}  // namespace paracolor::edge
