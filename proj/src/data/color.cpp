#include "paracolor/data/color.hpp"

#include <algorithm>
#include <cmath>

#include "paracolor/error.hpp"

namespace paracolor::data {

namespace {

// sRGB primaries, D65 white.
constexpr double kRgbToXyz[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};

struct Matrix3 {
    double m[3][3];
};

Matrix3 invert(const double (&a)[3][3]) {
    Matrix3 r{};
    const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                       a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                       a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
            r.m[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
        }
    return r;
}

const Matrix3& xyz_to_rgb() {
    static const Matrix3 inverse = invert(kRgbToXyz);
    return inverse;
}

// White point as the image of RGB (1,1,1) so that white maps to a = b = 0.
constexpr double kWhite[3] = {
    kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
    kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
    kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2],
};

constexpr double kEpsilon = 216.0 / 24389.0;
constexpr double kKappa = 24389.0 / 27.0;

double decode_srgb(double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); }
double encode_srgb(double v) { return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055; }

double lab_f(double t) { return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0; }
double lab_f_inv(double f) {
    const double f3 = f * f * f;
    return f3 > kEpsilon ? f3 : (116.0 * f - 16.0) / kKappa;
}

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

LabImage::LabImage(int h, int w)
    : height(h), width(w), l(static_cast<std::size_t>(h) * w, -1.0), ab(static_cast<std::size_t>(2) * h * w, 0.0) {}

std::array<double, 3> srgb_to_lab_pixel(double r, double g, double b) {
    const double lin[3] = {decode_srgb(r), decode_srgb(g), decode_srgb(b)};
    double xyz[3];
    for (int i = 0; i < 3; ++i)
        xyz[i] = (kRgbToXyz[i][0] * lin[0] + kRgbToXyz[i][1] * lin[1] + kRgbToXyz[i][2] * lin[2]) / kWhite[i];
    const double fx = lab_f(xyz[0]), fy = lab_f(xyz[1]), fz = lab_f(xyz[2]);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<double, 3> lab_to_srgb_pixel(double L, double a, double b) {
    const double fy = (L + 16.0) / 116.0;
    const double fx = fy + a / 500.0;
    const double fz = fy - b / 200.0;
    const double xyz[3] = {lab_f_inv(fx) * kWhite[0], (L > kKappa * kEpsilon ? fy * fy * fy : L / kKappa) * kWhite[1],
                           lab_f_inv(fz) * kWhite[2]};
    const auto& inv = xyz_to_rgb().m;
    std::array<double, 3> rgb{};
    for (int i = 0; i < 3; ++i) {
        const double lin = inv[i][0] * xyz[0] + inv[i][1] * xyz[1] + inv[i][2] * xyz[2];
        rgb[i] = lin < 0.0 ? 12.92 * lin : encode_srgb(lin);
    }
    return rgb;
}

LabImage rgb_to_lab(const RgbImage& img) {
    validate(img, 1);
    LabImage out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const auto lab = srgb_to_lab_pixel(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            out.l[i] = clamp_unit(normalize_lightness(lab[0]));
            out.ab[i] = clamp_unit(normalize_chroma(lab[1]));
            out.ab[out.plane() + i] = clamp_unit(normalize_chroma(lab[2]));
        }
    return out;
}

LabToRgbResult lab_to_rgb(const LabImage& img) {
    if (img.l.size() != img.plane() || img.ab.size() != 2 * img.plane())
        throw UsageError("Lab image buffers have the wrong size");
    for (double v : img.l)
        if (!std::isfinite(v) || v < -1.0 || v > 1.0) throw UsageError("Lab lightness outside [-1,1]");
    for (double v : img.ab)
        if (!std::isfinite(v) || v < -1.0 || v > 1.0) throw UsageError("Lab chroma outside [-1,1]");

    LabToRgbResult result{RgbImage(img.height, img.width), 0.0};
    std::size_t clamped = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            const auto rgb = lab_to_srgb_pixel(denormalize_lightness(img.l[i]), denormalize_chroma(img.ab[i]),
                                               denormalize_chroma(img.ab[img.plane() + i]));
            for (int c = 0; c < 3; ++c) {
                // Rounding noise just outside [0,1] does not count as clamping.
                if (rgb[c] < -1e-9 || rgb[c] > 1.0 + 1e-9) ++clamped;
                result.image.at(c, y, x) = std::clamp(rgb[c], 0.0, 1.0);
            }
        }
    result.clamped_fraction = img.plane() ? static_cast<double>(clamped) / (3.0 * img.plane()) : 0.0;
    return result;
}

LabImage with_chroma(const LabImage& lab, const std::vector<double>& ab) {
    if (ab.size() != 2 * lab.plane()) throw UsageError("chroma planes do not match image size");
    LabImage out = lab;
    std::transform(ab.begin(), ab.end(), out.ab.begin(), clamp_unit);
    return out;
}

LabImage resize_bilinear(const LabImage& img, int height, int width) {
    if (img.height == height && img.width == width) return img;
    LabImage out(height, width);
    GrayImage plane(img.height, img.width);
    auto resize_into = [&](const double* src, double* dst) {
        std::copy_n(src, img.plane(), plane.pixels.begin());
        const GrayImage r = resize_bilinear(plane, height, width);
        std::copy(r.pixels.begin(), r.pixels.end(), dst);
    };
    resize_into(img.l.data(), out.l.data());
    resize_into(img.ab.data(), out.ab.data());
    resize_into(img.ab.data() + img.plane(), out.ab.data() + out.plane());
    return out;
}

GrayImage lightness(const LabImage& img) {
    GrayImage out(img.height, img.width);
    for (std::size_t i = 0; i < img.plane(); ++i) out.pixels[i] = (img.l[i] + 1.0) / 2.0;
    return out;
}

}  // namespace paracolor::data
