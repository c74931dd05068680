#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "confmask/calibrate.hpp"
#include "confmask/fidelity.hpp"
#include "confmask/raster.hpp"

namespace confmask {

/// Per-image evaluation row. masked_psnr uses two sentinels: NaN means "no
/// trusted pixels, PSNR undefined" (rendered as NA downstream) and +inf means
/// "zero error over a nonempty trusted region".
struct EvalReport {
    double fidelity_error = 0.0;
    double masked_psnr = std::numeric_limits<double>::quiet_NaN();
    double trusted_fraction = 0.0;
    double mistrust_fraction = 1.0;
    std::size_t n_trusted_pixels = 0;
};

/// PSNR over the trusted region only, pooling all three channels of all
/// trusted pixels into one scalar population: 10*log10(s^2 / mse) with
/// s = max pooled reference value and mse = mean squared difference.
/// Empty mask -> NaN; mse == 0 with a nonempty mask -> +inf.
inline double masked_psnr(const LabImage& yhat, const LabImage& y, const BinaryMask& mask) {
    if (y.width() != yhat.width() || y.height() != yhat.height() ||
        y.width() != mask.width() || y.height() != mask.height())
        throw std::invalid_argument("masked_psnr: dimension mismatch");
    double signal = 0.0;
    double sum_sq = 0.0;
    std::size_t count = 0;
    for (int py = 0; py < y.height(); ++py)
        for (int px = 0; px < y.width(); ++px) {
            if (!mask.at(px, py)) continue;
            for (int c = 0; c < 3; ++c) {
                const double ref = y.at(px, py, c);
                const double diff = ref - static_cast<double>(yhat.at(px, py, c));
                signal = std::max(signal, ref);
                sum_sq += diff * diff;
                ++count;
            }
        }
    if (count == 0) return std::numeric_limits<double>::quiet_NaN();
    const double mse = sum_sq / static_cast<double>(count);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(signal * signal / mse);
}

struct MaskStats {
    double trusted_fraction = 0.0;
    double mistrust_fraction = 1.0;
    std::size_t n_trusted_pixels = 0;
};

/// trusted_fraction = trusted/total; mistrust_fraction is its exact
/// complement (the "mask size" number reported everywhere).
inline MaskStats mask_stats(const BinaryMask& mask) {
    MaskStats s;
    s.n_trusted_pixels = mask.count_true();
    s.trusted_fraction =
        static_cast<double>(s.n_trusted_pixels) / static_cast<double>(mask.pixel_count());
    s.mistrust_fraction = 1.0 - s.trusted_fraction;
    return s;
}

/// Everything reported for one (reference, prediction, mask) evaluation.
inline EvalReport evaluate_mask(const LabImage& y, const LabImage& yhat, const FidelityMap& d,
                                const BinaryMask& mask) {
    EvalReport r;
    r.fidelity_error = fidelity_error(d, mask);
    r.masked_psnr = masked_psnr(yhat, y, mask);
    const MaskStats s = mask_stats(mask);
    r.trusted_fraction = s.trusted_fraction;
    r.mistrust_fraction = s.mistrust_fraction;
    r.n_trusted_pixels = s.n_trusted_pixels;
    return r;
}

struct RiskPoint {
    Threshold t;
    double risk;
};

/// empirical_risk sampled over a threshold grid (useful for rendering the
/// risk staircase); nondecreasing when the grid is ascending.
inline std::vector<RiskPoint> risk_curve(std::span<const CalibrationPair> pairs,
                                         std::span<const Threshold> t_grid) {
    if (t_grid.empty()) throw std::invalid_argument("risk_curve: empty grid");
    std::vector<RiskPoint> out;
    out.reserve(t_grid.size());
    for (const Threshold& t : t_grid) out.push_back({t, empirical_risk(pairs, t)});
    return out;
}

} // namespace confmask
