#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "confmask/kernel.hpp"
#include "confmask/raster.hpp"

namespace confmask {

namespace detail {

struct FidelityTag;

template <>
struct RasterBounds<FidelityTag> {
    static constexpr float lower = 0.0f;
    static constexpr float upper = 3.0f;
};

} // namespace detail

/// Per-pixel reconstruction-loss map, values in [0,3] (the L1 distance of
/// three [0,1] channels caps at 3).
using FidelityMap = ScalarRaster<detail::FidelityTag>;

/// Which loss fills the map: plain per-pixel L1 in normalized Lab,
/// neighborhood-averaged L1 (channels convolved before differencing), or a
/// human-supplied binary annotation of semantic differences.
struct FidelityMetricSpec {
    enum class Kind { pointwise, neighborhood, semantic };
    Kind kind = Kind::pointwise;
    std::optional<KernelSpec> kernel; // neighborhood only

    void validate() const {
        if (kind == Kind::neighborhood && !kernel)
            throw std::invalid_argument("FidelityMetricSpec: neighborhood metric needs a kernel");
        if (kind != Kind::neighborhood && kernel)
            throw std::invalid_argument("FidelityMetricSpec: kernel only applies to the "
                                        "neighborhood metric");
    }

    static const char* kind_name(Kind k) {
        switch (k) {
            case Kind::pointwise: return "pointwise";
            case Kind::neighborhood: return "neighborhood";
            case Kind::semantic: return "semantic";
        }
        return "?";
    }

    static Kind parse_kind(const std::string& name) {
        if (name == "pointwise") return Kind::pointwise;
        if (name == "neighborhood") return Kind::neighborhood;
        if (name == "semantic") return Kind::semantic;
        throw std::invalid_argument("unknown fidelity metric '" + name +
                                    "' (expected pointwise, neighborhood, or semantic)");
    }

    bool operator==(const FidelityMetricSpec&) const = default;
};

namespace detail {

inline void require_same_dims(const LabImage& y, const LabImage& yhat, const char* who) {
    if (y.width() != yhat.width() || y.height() != yhat.height())
        throw std::invalid_argument(std::string(who) + ": dimension mismatch (" +
                                    std::to_string(y.width()) + "x" + std::to_string(y.height()) +
                                    " vs " + std::to_string(yhat.width()) + "x" +
                                    std::to_string(yhat.height()) + ")");
}

inline FidelityMap l1_channel_sum(const PlanarImage& a, const PlanarImage& b) {
    const int w = a.width(), h = a.height();
    std::vector<float> vals(static_cast<std::size_t>(w) * h);
    const auto pa = a.values();
    const auto pb = b.values();
    for (std::size_t p = 0; p < vals.size(); ++p) {
        const std::size_t i = p * 3;
        const float d = std::abs(pa[i] - pb[i]) + std::abs(pa[i + 1] - pb[i + 1]) +
                        std::abs(pa[i + 2] - pb[i + 2]);
        vals[p] = std::clamp(d, 0.0f, 3.0f);
    }
    return FidelityMap::from_values(w, h, std::move(vals));
}

} // namespace detail

/// Per-pixel L1 distance over the three normalized Lab channels.
inline FidelityMap d_pointwise(const LabImage& y, const LabImage& yhat) {
    detail::require_same_dims(y, yhat, "d_pointwise");
    return detail::l1_channel_sum(y.planar(), yhat.planar());
}

/// Like d_pointwise, but both images are smoothed with K first, so isolated
/// single-pixel discrepancies are judged against their surroundings.
inline FidelityMap d_neighborhood(const LabImage& y, const LabImage& yhat, const Kernel& kernel) {
    detail::require_same_dims(y, yhat, "d_neighborhood");
    return detail::l1_channel_sum(convolve2d(y.planar(), kernel),
                                  convolve2d(yhat.planar(), kernel));
}

/// Pass-through of a human annotation raster; samples must be exactly 0 or 1.
/// A 3-channel annotation collapses by per-pixel maximum (a difference flagged
/// in any channel counts).
inline FidelityMap d_semantic(const PlanarImage& annotation) {
    for (float v : annotation.values())
        if (v != 0.0f && v != 1.0f)
            throw std::invalid_argument("d_semantic: annotation must be binary (0/1), found " +
                                        std::to_string(v));
    const int w = annotation.width(), h = annotation.height();
    std::vector<float> vals(static_cast<std::size_t>(w) * h, 0.0f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float m = 0.0f;
            for (int c = 0; c < annotation.channels(); ++c)
                m = std::max(m, annotation.at(x, y, c));
            vals[static_cast<std::size_t>(y) * w + x] = m;
        }
    return FidelityMap::from_values(w, h, std::move(vals));
}

/// Worst loss over the trusted region: max of D over mask-true pixels, or 0
/// for an empty mask (trusting nothing risks nothing).
inline double fidelity_error(const FidelityMap& d, const BinaryMask& mask) {
    if (d.width() != mask.width() || d.height() != mask.height())
        throw std::invalid_argument("fidelity_error: dimension mismatch");
    double worst = 0.0;
    for (int y = 0; y < d.height(); ++y)
        for (int x = 0; x < d.width(); ++x)
            if (mask.at(x, y)) worst = std::max(worst, static_cast<double>(d.at(x, y)));
    return worst;
}

/// Evaluates the configured metric for one (reference, prediction) pair.
/// The semantic metric cannot be computed from images alone and must go
/// through d_semantic with its annotation.
inline FidelityMap compute_fidelity(const LabImage& y, const LabImage& yhat,
                                    const FidelityMetricSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case FidelityMetricSpec::Kind::pointwise: return d_pointwise(y, yhat);
        case FidelityMetricSpec::Kind::neighborhood:
            return d_neighborhood(y, yhat, spec.kernel->make());
        case FidelityMetricSpec::Kind::semantic: break;
    }
    throw std::invalid_argument("compute_fidelity: semantic metric needs an annotation; "
                                "use d_semantic");
}

} // namespace confmask
