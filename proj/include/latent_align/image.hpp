#pragma once

#include <cstddef>
#include <vector>

namespace latent_align {

// Planar (3, H, W) float image. Values are nominally in [0, 1].
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(3) * h * w, 0.0f) {}

    float & at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }

    bool operator==(const RgbImage &) const = default;
};

}  // namespace latent_align
