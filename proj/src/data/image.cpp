#include "paracolor/data/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include "paracolor/error.hpp"

namespace paracolor::data {

namespace fs = std::filesystem;

RgbImage::RgbImage(int h, int w, double fill)
    : height(h), width(w), pixels(static_cast<std::size_t>(3) * h * w, fill) {}

GrayImage::GrayImage(int h, int w, double fill) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

void validate(const RgbImage& img, int min_side) {
    if (img.height < min_side || img.width < min_side)
        throw UsageError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is below the minimum side " + std::to_string(min_side));
    if (img.pixels.size() != 3 * img.plane()) throw UsageError("image pixel buffer has the wrong size");
    for (double v : img.pixels) {
        if (!std::isfinite(v)) throw UsageError("image contains non-finite pixel values");
        if (v < 0.0 || v > 1.0) throw UsageError("image pixel value outside [0,1]");
    }
}

namespace {

std::string lower_extension(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

bool is_jpeg(const fs::path& path) {
    const std::string ext = lower_extension(path);
    return ext == ".jpg" || ext == ".jpeg";
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

RgbImage from_interleaved(const std::vector<std::uint8_t>& buf, int h, int w, int channels) {
    RgbImage img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const int src = channels >= 3 ? c : 0;
                img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * channels + src] / 255.0;
            }
    return img;
}

RgbImage read_png(const fs::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    return from_interleaved(buf, static_cast<int>(image.height), static_cast<int>(image.width), 3);
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

RgbImage read_jpeg(const fs::path& path) {
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
    if (!file) throw DataError("cannot open " + path.string());
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    std::vector<std::uint8_t> buf;
    int h = 0, w = 0, channels = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("cannot decode JPEG " + path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    h = static_cast<int>(cinfo.output_height);
    w = static_cast<int>(cinfo.output_width);
    channels = cinfo.output_components;
    buf.resize(static_cast<std::size_t>(h) * w * channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_interleaved(buf, h, w, channels);
}

void write_jpeg(const fs::path& path, const std::vector<std::uint8_t>& buf, int h, int w) {
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
    if (!file) throw DataError("cannot open " + path.string() + " for writing");
    jpeg_compress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw DataError("cannot encode JPEG " + path.string() + ": " + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, file.get());
    cinfo.image_width = static_cast<JDIMENSION>(w);
    cinfo.image_height = static_cast<JDIMENSION>(h);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, 95, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        auto* row = const_cast<JSAMPROW>(buf.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * 3);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

void write_png_buffer(const fs::path& path, const std::vector<std::uint8_t>& buf, int h, int w, bool gray) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw DataError("cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace

RgbImage read_image(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("image file not found: " + path.string());
    return is_jpeg(path) ? read_jpeg(path) : read_png(path);
}

void write_image(const fs::path& path, const RgbImage& img) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::vector<std::uint8_t> buf(3 * img.plane());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                buf[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = to_byte(img.at(c, y, x));
    if (is_jpeg(path))
        write_jpeg(path, buf, img.height, img.width);
    else
        write_png_buffer(path, buf, img.height, img.width, false);
}

void write_gray_png(const fs::path& path, const GrayImage& img) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::vector<std::uint8_t> buf(img.pixels.size());
    std::transform(img.pixels.begin(), img.pixels.end(), buf.begin(), to_byte);
    write_png_buffer(path, buf, img.height, img.width, true);
}

namespace {

// Source coordinate and blend weight along one axis.
struct Tap {
    int i0, i1;
    double t;
};

std::vector<Tap> taps(int src, int dst) {
    std::vector<Tap> out(static_cast<std::size_t>(dst));
    const double ratio = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        double s = (i + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src - 1));
        const int i0 = static_cast<int>(std::floor(s));
        out[i] = {i0, std::min(i0 + 1, src - 1), s - i0};
    }
    return out;
}

void resize_plane(const double* src, int sh, int sw, double* dst, int dh, int dw) {
    const auto ty = taps(sh, dh), tx = taps(sw, dw);
    for (int y = 0; y < dh; ++y) {
        const double* r0 = src + static_cast<std::size_t>(ty[y].i0) * sw;
        const double* r1 = src + static_cast<std::size_t>(ty[y].i1) * sw;
        for (int x = 0; x < dw; ++x) {
            const Tap& h = tx[x];
            const double top = r0[h.i0] + (r0[h.i1] - r0[h.i0]) * h.t;
            const double bot = r1[h.i0] + (r1[h.i1] - r1[h.i0]) * h.t;
            dst[static_cast<std::size_t>(y) * dw + x] = top + (bot - top) * ty[y].t;
        }
    }
}

}  // namespace

RgbImage resize_bilinear(const RgbImage& img, int height, int width) {
    if (height < 1 || width < 1) throw UsageError("resize target must be positive");
    if (img.height == height && img.width == width) return img;
    RgbImage out(height, width);
    for (int c = 0; c < 3; ++c)
        resize_plane(img.pixels.data() + c * img.plane(), img.height, img.width, out.pixels.data() + c * out.plane(),
                     height, width);
    return out;
}

GrayImage resize_bilinear(const GrayImage& img, int height, int width) {
    if (height < 1 || width < 1) throw UsageError("resize target must be positive");
    if (img.height == height && img.width == width) return img;
    GrayImage out(height, width);
    resize_plane(img.pixels.data(), img.height, img.width, out.pixels.data(), height, width);
    return out;
}

RgbImage crop(const RgbImage& img, const BBox& box) {
    if (box.x < 0 || box.y < 0 || box.w < 1 || box.h < 1 || box.x + box.w > img.width || box.y + box.h > img.height)
        throw UsageError("crop box outside image bounds");
    RgbImage out(box.h, box.w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < box.h; ++y)
            for (int x = 0; x < box.w; ++x) out.at(c, y, x) = img.at(c, box.y + y, box.x + x);
    return out;
}

GrayImage to_gray(const RgbImage& img) {
    GrayImage out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(y, x) = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
    return out;
}

RgbImage quantize8(const RgbImage& img) {
    RgbImage out = img;
    for (double& v : out.pixels) v = to_byte(v) / 255.0;
    return out;
}

}  // namespace paracolor::data
