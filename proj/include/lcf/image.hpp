#pragma once

#include <vector>

namespace lcf {

// RGB raster, values in [0,1], planar channel layout (R plane, G plane, B plane).
struct Image {
    int width = 0, height = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(3 * static_cast<std::size_t>(w) * h, 0.0) {}

    double at(int c, int v, int u) const {
        return rgb[(static_cast<std::size_t>(c) * height + v) * width + u];
    }
    double& at(int c, int v, int u) {
        return rgb[(static_cast<std::size_t>(c) * height + v) * width + u];
    }
};

} // namespace lcf
