#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "confmask/kernel.hpp"
#include "confmask/raster.hpp"

namespace confmask {

namespace detail {

struct ScoreTag;

template <>
struct RasterBounds<ScoreTag> {
    static constexpr float lower = 0.0f; // variances; rounding slack is clamped away
    static constexpr float upper = std::numeric_limits<float>::max();
};

} // namespace detail

/// Per-pixel model-indecision score (a variance estimate); nonnegative.
using ScoreMap = ScalarRaster<detail::ScoreTag>;

/// How a score map is produced from the stochastic model: number of draws,
/// the smoothing kernel baked into the estimator, and an optional Gaussian
/// blur applied to the finished variance map.
struct ScoreConfig {
    int num_draws = 8;
    KernelSpec kernel{KernelSpec::Kind::box, 2, 0.0};
    std::optional<double> post_blur_sigma = 2.0;

    void validate() const {
        if (num_draws < 2)
            throw std::invalid_argument("ScoreConfig: num_draws must be >= 2, got " +
                                        std::to_string(num_draws));
        if (post_blur_sigma && !(*post_blur_sigma > 0.0))
            throw std::invalid_argument("ScoreConfig: post_blur_sigma must be > 0");
    }

    bool operator==(const ScoreConfig&) const = default;
};

namespace detail {

/// First and second moments of the draw ensemble, one w*h double plane per
/// channel. Per-pixel sums run over the draw values in ascending value order,
/// so the result is exactly independent of the order the draws came in.
struct DrawMoments {
    int width = 0, height = 0;
    std::vector<std::vector<double>> mean;    // [channel][pixel]
    std::vector<std::vector<double>> mean_sq; // [channel][pixel]
};

inline DrawMoments accumulate_draw_moments(std::span<const LabImage> draws) {
    if (draws.size() < 2)
        throw std::invalid_argument("score: need at least 2 draws, got " +
                                    std::to_string(draws.size()));
    const int w = draws[0].width(), h = draws[0].height();
    for (const auto& d : draws)
        if (d.width() != w || d.height() != h)
            throw std::invalid_argument("score: draws have mismatched dimensions");

    const std::size_t npx = static_cast<std::size_t>(w) * h;
    const std::size_t m = draws.size();
    const double inv_m = 1.0 / static_cast<double>(m);
    DrawMoments out;
    out.width = w;
    out.height = h;
    out.mean.assign(3, std::vector<double>(npx));
    out.mean_sq.assign(3, std::vector<double>(npx));

    std::vector<double> vals(m), sq(m);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double v = draws[i].at(x, y, c);
                    vals[i] = v;
                    sq[i] = v * v; // exact: product of two binary32 values fits binary64
                }
                std::sort(vals.begin(), vals.end());
                std::sort(sq.begin(), sq.end());
                double s = 0.0, s2 = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    s += vals[i];
                    s2 += sq[i];
                }
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                out.mean[c][p] = s * inv_m;
                out.mean_sq[c][p] = s2 * inv_m;
            }
        }
    }
    return out;
}

/// E[f^2] - E[f]^2 per channel (optionally with both moment rasters convolved
/// first), channel-meaned. Returns the raw, unclamped doubles; genuine values
/// are >= 0 up to ~1e-15 rounding.
inline std::vector<double> variance_from_moments(const DrawMoments& mom, const Kernel* kernel) {
    const std::size_t npx = static_cast<std::size_t>(mom.width) * mom.height;
    std::vector<double> score(npx, 0.0);
    std::vector<double> m1(npx), m2(npx);
    for (int c = 0; c < 3; ++c) {
        const std::vector<double>* pm1 = &mom.mean[c];
        const std::vector<double>* pm2 = &mom.mean_sq[c];
        if (kernel) {
            convolve_plane(mom.mean[c].data(), mom.width, mom.height, *kernel, m1.data());
            convolve_plane(mom.mean_sq[c].data(), mom.width, mom.height, *kernel, m2.data());
            pm1 = &m1;
            pm2 = &m2;
        }
        for (std::size_t p = 0; p < npx; ++p)
            score[p] += (*pm2)[p] - (*pm1)[p] * (*pm1)[p];
    }
    for (double& v : score) v /= 3.0;
    return score;
}

inline ScoreMap clamp_to_score_map(int w, int h, const std::vector<double>& raw) {
    std::vector<float> vals(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        vals[i] = static_cast<float>(std::max(0.0, raw[i]));
    return ScoreMap::from_values(w, h, std::move(vals));
}

} // namespace detail

/// Per-pixel population variance over the draws (divide by M), averaged over
/// the three Lab channels. Identical draws give an all-zero map.
inline ScoreMap sigma_var(std::span<const LabImage> draws) {
    const auto mom = detail::accumulate_draw_moments(draws);
    return detail::clamp_to_score_map(mom.width, mom.height,
                                      detail::variance_from_moments(mom, nullptr));
}

/// Smoothed indecision estimator: E[draw^2 * K] - (E[draw * K])^2 per channel
/// (a variance under the kernel-weighted measure), channel-meaned. With a
/// radius-0 box kernel this reduces to sigma_var exactly.
inline ScoreMap sigma_ker(std::span<const LabImage> draws, const Kernel& kernel) {
    const auto mom = detail::accumulate_draw_moments(draws);
    return detail::clamp_to_score_map(mom.width, mom.height,
                                      detail::variance_from_moments(mom, &kernel));
}

namespace detail {

/// Unclamped sigma_ker values, for validating the nonnegativity slack.
inline std::vector<double> sigma_ker_raw(std::span<const LabImage> draws, const Kernel& kernel) {
    const auto mom = accumulate_draw_moments(draws);
    return variance_from_moments(mom, &kernel);
}

} // namespace detail

/// Optional Gaussian blur over a finished score map (none = identity).
inline ScoreMap finalize_score(const ScoreMap& map, std::optional<double> post_blur_sigma) {
    if (!post_blur_sigma) return map;
    const Kernel k = make_gaussian(*post_blur_sigma);
    std::vector<float> out(map.pixel_count());
    detail::convolve_plane(map.values().data(), map.width(), map.height(), k, out.data());
    // Nonnegative inputs and nonnegative weights keep the result nonnegative.
    return ScoreMap::from_values(map.width(), map.height(), std::move(out));
}

/// Full estimator pipeline for one ensemble of draws, as configured.
inline ScoreMap compute_score(std::span<const LabImage> draws, const ScoreConfig& config) {
    config.validate();
    if (static_cast<int>(draws.size()) != config.num_draws)
        throw std::invalid_argument("compute_score: got " + std::to_string(draws.size()) +
                                    " draws, config says " + std::to_string(config.num_draws));
    const Kernel k = config.kernel.make();
    return finalize_score(sigma_ker(draws, k), config.post_blur_sigma);
}

} // namespace confmask
