#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "confmask/raster.hpp"

namespace confmask {

// sRGB -> normalized CIELAB. Pipeline per pixel:
//   1. undo the sRGB transfer curve (IEC 61966-2-1)
//   2. linear RGB -> XYZ with the standard D65 matrix
//   3. whiten by the matrix's own row sums, so (1,1,1) maps to the reference
//      white *exactly* instead of accumulating the rounding drift of the
//      published 7-digit matrix against the nominal D65 white
//   4. XYZ -> L*a*b*, then squash into [0,1]: L/100, (a+128)/255, (b+128)/255
// All channel math is float; accuracy is a few 1e-7, well inside the 1e-6
// budget the reference values are checked to.

namespace detail {

inline constexpr float kXyz[9] = {
    0.4124564f, 0.3575761f, 0.1804375f, // X row
    0.2126729f, 0.7151522f, 0.0721750f, // Y row
    0.0193339f, 0.1191920f, 0.9503041f, // Z row
};

// Row sums, folded with the same left-to-right float arithmetic the runtime
// matrix product uses, so white yields ratios of exactly 1.0f.
inline constexpr float kWhiteX = 0.4124564f + 0.3575761f + 0.1804375f;
inline constexpr float kWhiteY = 0.2126729f + 0.7151522f + 0.0721750f;
inline constexpr float kWhiteZ = 0.0193339f + 0.1191920f + 0.9503041f;

inline float srgb_to_linear(float v) {
    return v <= 0.04045f ? v / 12.92f : std::pow((v + 0.055f) / 1.055f, 2.4f);
}

inline float lab_f(float t) {
    constexpr float kDelta3 = 216.0f / 24389.0f; // (6/29)^3
    constexpr float kSlope = 841.0f / 108.0f;    // 1/(3*(6/29)^2)
    constexpr float kOffset = 4.0f / 29.0f;
    return t > kDelta3 ? std::cbrt(t) : kSlope * t + kOffset;
}

} // namespace detail

/// Converts a 3-channel sRGB image with samples in [0,1] to normalized Lab.
/// Throws if the image is not 3-channel or any sample falls outside [0,1].
inline LabImage srgb_to_lab_normalized(const PlanarImage& img) {
    if (img.channels() != 3)
        throw std::invalid_argument("srgb_to_lab_normalized: expected 3 channels, got " +
                                    std::to_string(img.channels()));
    for (float v : img.values())
        if (!(v >= 0.0f && v <= 1.0f))
            throw std::invalid_argument("srgb_to_lab_normalized: sample outside [0,1]");

    PlanarImage out(img.width(), img.height(), 3);
    const auto src = img.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); i += 3) {
        const float r = detail::srgb_to_linear(src[i]);
        const float g = detail::srgb_to_linear(src[i + 1]);
        const float b = detail::srgb_to_linear(src[i + 2]);

        const float x = detail::kXyz[0] * r + detail::kXyz[1] * g + detail::kXyz[2] * b;
        const float y = detail::kXyz[3] * r + detail::kXyz[4] * g + detail::kXyz[5] * b;
        const float z = detail::kXyz[6] * r + detail::kXyz[7] * g + detail::kXyz[8] * b;

        const float fx = detail::lab_f(x / detail::kWhiteX);
        const float fy = detail::lab_f(y / detail::kWhiteY);
        const float fz = detail::lab_f(z / detail::kWhiteZ);

        const float lum = 116.0f * fy - 16.0f;
        const float astar = 500.0f * (fx - fy);
        const float bstar = 200.0f * (fy - fz);

        dst[i] = std::clamp(lum / 100.0f, 0.0f, 1.0f);
        dst[i + 1] = std::clamp((astar + 128.0f) / 255.0f, 0.0f, 1.0f);
        dst[i + 2] = std::clamp((bstar + 128.0f) / 255.0f, 0.0f, 1.0f);
    }
    return LabImage(std::move(out));
}

} // namespace confmask
