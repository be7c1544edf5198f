#pragma once

#include <algorithm>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

#include "paracolor/data/dataset.hpp"
#include "paracolor/data/image.hpp"
#include "paracolor/nn/autograd.hpp"
#include "paracolor/training.hpp"

namespace paracolor::fixtures {

/// Removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "paracolor") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Flat colored background with one colored rectangle, quantized to 8 bits.
inline data::RgbImage synthetic_image(std::uint64_t seed, int size) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> pos(0, size / 2);
    data::RgbImage img(size, size);
    double bg[3], fg[3];
    for (double& v : bg) v = unit(rng);
    for (double& v : fg) v = unit(rng);
    const int x0 = pos(rng), y0 = pos(rng), w = size / 4 + pos(rng) / 2, h = size / 4 + pos(rng) / 2;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const bool inside = x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = inside ? fg[c] : bg[c];
        }
    return data::quantize8(img);
}

inline std::string fixture_id(int i) {
    char name[32];
    std::snprintf(name, sizeof name, "img%03d", i);
    return name;
}

inline std::string fixture_name(int i) { return fixture_id(i) + ".png"; }

inline void write_fixture(const std::filesystem::path& dir, int count, int size, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    for (int i = 0; i < count; ++i)
        data::write_image(dir / fixture_name(i), synthetic_image(seed * 1000 + static_cast<std::uint64_t>(i), size));
}

/// Uniform random image with 8-bit values.
inline data::RgbImage random_image(std::mt19937_64& rng, int height, int width) {
    std::uniform_int_distribution<int> byte(0, 255);
    data::RgbImage img(height, width);
    for (double& v : img.pixels) v = byte(rng) / 255.0;
    return img;
}

/// Max relative error between autograd and central differences of `f` at `x`.
/// Relative error is |g_a - g_n| / max(|g_a|, |g_n|, floor). Entries for which
/// `skip(i)` holds are ignored.
inline double gradient_error(const std::function<nn::Var(const nn::Var&)>& f, const nn::Tensor& x,
                             double h = 1e-6, double floor = 1e-6,
                             const std::function<bool(std::int64_t)>& skip = nullptr) {
    nn::Var input(x, true);
    f(input).backward();
    const nn::Tensor analytic = input.grad();
    double worst = 0.0;
    nn::NoGradGuard guard;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        if (skip && skip(i)) continue;
        nn::Tensor plus = x, minus = x;
        plus[i] += h;
        minus[i] -= h;
        const double numeric = (f(nn::Var(plus)).item() - f(nn::Var(minus)).item()) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace paracolor::fixtures
