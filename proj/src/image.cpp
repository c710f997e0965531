#include "td/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "td/errors.hpp"

namespace td {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t to_byte(float v) {
    float c = std::min(std::max(v, 0.0f), 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open PNG: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_png(png, info,
                 PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA |
                     PNG_TRANSFORM_GRAY_TO_RGB,
                 nullptr);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    png_bytepp rows = png_get_rows(png, info);
    int rowbytes = static_cast<int>(png_get_rowbytes(png, info));
    if (rowbytes < static_cast<int>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unexpected PNG row layout: " + path.string());
    }

    Image img(3, static_cast<int>(h), static_cast<int>(w));
    for (png_uint_32 y = 0; y < h; ++y) {
        const png_byte* row = rows[y];
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, static_cast<int>(y), static_cast<int>(x)) = row[x * 3 + c] / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const Image& img, const std::filesystem::path& path) {
    if (img.channels != 1 && img.channels != 3)
        throw ValidationError("write_png: image must have 1 or 3 channels, got " +
                              std::to_string(img.channels));
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[static_cast<size_t>(x) * img.channels + c] = to_byte(img.at(c, y, x));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image to_grayscale(const Image& img) {
    if (img.channels == 1) return img;
    Image out(1, img.height, img.width);
    float inv = 1.0f / static_cast<float>(img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            float s = 0;
            for (int c = 0; c < img.channels; ++c) s += img.at(c, y, x);
            out.at(0, y, x) = s * inv;
        }
    return out;
}

Image to_rgb(const Image& img) {
    if (img.channels == 3) return img;
    if (img.channels != 1) throw ValidationError("to_rgb: expected 1 or 3 channels");
    Image out(3, img.height, img.width);
    for (int c = 0; c < 3; ++c)
        std::copy(img.data.begin(), img.data.end(),
                  out.data.begin() + static_cast<size_t>(c) * img.height * img.width);
    return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ValidationError("resize_bilinear: bad target size");
    Image out(img.channels, out_h, out_w);
    float sy = static_cast<float>(img.height) / out_h;
    float sx = static_cast<float>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        float fy = (y + 0.5f) * sy - 0.5f;
        int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
        int y1 = std::min(y0 + 1, img.height - 1);
        float wy = std::clamp(fy - y0, 0.0f, 1.0f);
        for (int x = 0; x < out_w; ++x) {
            float fx = (x + 0.5f) * sx - 0.5f;
            int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
            int x1 = std::min(x0 + 1, img.width - 1);
            float wx = std::clamp(fx - x0, 0.0f, 1.0f);
            for (int c = 0; c < img.channels; ++c) {
                float top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
                float bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
                out.at(c, y, x) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Image resize_area(const Image& img, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ValidationError("resize_area: bad target size");
    Image out(img.channels, out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        int y0 = y * img.height / out_h;
        int y1 = std::max((y + 1) * img.height / out_h, y0 + 1);
        for (int x = 0; x < out_w; ++x) {
            int x0 = x * img.width / out_w;
            int x1 = std::max((x + 1) * img.width / out_w, x0 + 1);
            for (int c = 0; c < img.channels; ++c) {
                float s = 0;
                for (int yy = y0; yy < y1; ++yy)
                    for (int xx = x0; xx < x1; ++xx) s += img.at(c, yy, xx);
                out.at(c, y, x) = s / static_cast<float>((y1 - y0) * (x1 - x0));
            }
        }
    }
    return out;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({static_cast<size_t>(img.channels), static_cast<size_t>(img.height),
              static_cast<size_t>(img.width)});
    for (size_t i = 0; i < img.data.size(); ++i) t.data()[i] = img.data[i] * 2.0f - 1.0f;
    return t;
}

double psnr(const Image& a, const Image& b) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw ShapeError("psnr: image sizes differ");
    double mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

Image tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3) throw ShapeError("tensor_to_image: expected [C,H,W], got " + shape_str(t.shape()));
    Image img(static_cast<int>(t.shape()[0]), static_cast<int>(t.shape()[1]),
              static_cast<int>(t.shape()[2]));
    for (size_t i = 0; i < img.data.size(); ++i) {
        float v = std::min(std::max(t.data()[i], -1.0f), 1.0f);
        img.data[i] = (v + 1.0f) * 0.5f;
    }
    return img;
}

}  // namespace td
