#ifndef DATUM_CORE_IMAGE_HPP
#define DATUM_CORE_IMAGE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "datum/core/error.hpp"

namespace datum {

using MaskArray = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;  // flat, idx = y*w + x

// RGB raster in [-1, 1] with an optional aligned class-index mask.
// Pixels are stored 3 x (h*w), one column per pixel, scanline order.
struct LabeledImage {
    int height = 0;
    int width = 0;
    Eigen::Matrix3Xf pixels;
    MaskArray mask;  // empty when unlabeled
    bool labeled = false;

    LabeledImage() = default;
    LabeledImage(int h, int w) : height(h), width(w), pixels(Eigen::Matrix3Xf::Zero(3, h * w)) {}

    int pixel_count() const { return height * width; }

    void require_labeled() const {
        if (!labeled) throw Error("image has no mask");
    }
};

inline std::uint8_t quantize_channel(float v) {
    float u = (v + 1.0f) * 0.5f;
    u = u < 0.0f ? 0.0f : (u > 1.0f ? 1.0f : u);
    return static_cast<std::uint8_t>(std::lround(u * 255.0f));
}

inline float dequantize_channel(std::uint8_t b) {
    return static_cast<float>(b) / 255.0f * 2.0f - 1.0f;
}

// Contiguous crop; (x0, y0) is the top-left corner in the source image.
inline LabeledImage crop(const LabeledImage& src, int x0, int y0, int size) {
    if (x0 < 0 || y0 < 0 || x0 + size > src.width || y0 + size > src.height)
        throw Error("crop window outside image bounds");
    LabeledImage out(size, size);
    out.labeled = src.labeled;
    if (src.labeled) out.mask.resize(size * size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            int si = (y0 + y) * src.width + (x0 + x);
            int di = y * size + x;
            out.pixels.col(di) = src.pixels.col(si);
            if (src.labeled) out.mask[di] = src.mask[si];
        }
    }
    return out;
}

}  // namespace datum

#endif
