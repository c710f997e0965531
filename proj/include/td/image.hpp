#pragma once

#include <filesystem>
#include <vector>

#include "td/tensor.hpp"

namespace td {

// Planar CHW float image, values in [0,1]. 1 channel = grayscale, 3 = RGB.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w),
          data(static_cast<size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    size_t size() const { return data.size(); }
};

// 8-bit PNG, gray (1 channel) or RGB (3 channels). 16-bit/palette/alpha
// inputs are converted on read.
Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

Image to_grayscale(const Image& img);  // channel mean
Image to_rgb(const Image& img);
Image resize_bilinear(const Image& img, int out_h, int out_w);
// Area (box) average; used for the pixel feature extractor.
Image resize_area(const Image& img, int out_h, int out_w);

// [C,H,W] tensor in [-1,1] <-> image in [0,1]. tensor_to_image clamps.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

// Peak signal-to-noise ratio in dB over [0,1] images (peak = 1.0).
double psnr(const Image& a, const Image& b);

}  // namespace td
