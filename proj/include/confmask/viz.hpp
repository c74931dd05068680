#pragma once

#include <stdexcept>

#include "confmask/raster.hpp"

namespace confmask {

/// Blends a 50% red tint over the untrusted pixels of an sRGB prediction;
/// trusted pixels pass through unchanged. Expects a 3-channel image in [0,1].
inline PlanarImage render_overlay(const PlanarImage& prediction, const BinaryMask& mask) {
    if (prediction.channels() != 3)
        throw std::invalid_argument("render_overlay: prediction must have 3 channels");
    if (prediction.width() != mask.width() || prediction.height() != mask.height())
        throw std::invalid_argument("render_overlay: prediction/mask size mismatch");
    PlanarImage out = prediction;
    constexpr float kRed[3] = {1.0f, 0.0f, 0.0f};
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
            if (mask.at(x, y)) continue;
            for (int c = 0; c < 3; ++c)
                out.at(x, y, c) = 0.5f * out.at(x, y, c) + 0.5f * kRed[c];
        }
    return out;
}

} // namespace confmask
