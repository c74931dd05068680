#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include "confmask/raster.hpp"

namespace confmask {

namespace detail {

inline constexpr std::uint64_t fnv1a64(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    while (*s) {
        h ^= static_cast<unsigned char>(*s++);
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace detail

// Purpose tags keep the random streams for different jobs disjoint even when
// seeds and indices collide.
inline constexpr std::uint64_t kStreamWorldPair = detail::fnv1a64("world-pair");
inline constexpr std::uint64_t kStreamModelDraw = detail::fnv1a64("model-draw");
inline constexpr std::uint64_t kStreamPriorTrial = detail::fnv1a64("prior-method-trial");

/// Counter-based generator: the state is derived once from (seed, purpose
/// tag, index) and then stepped splitmix64-style. Any (seed, tag, index)
/// triple names an independent, reproducible stream — no shared RNG state
/// anywhere, so trials parallelize without ordering effects.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
        state_ = scramble(seed + kGolden + tag);
        state_ = scramble(state_ + kGolden + index);
    }

    std::uint64_t next_u64() {
        state_ += kGolden;
        return scramble(state_);
    }

    /// Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi) - lo + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    /// Standard normal via Box-Muller (second value cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

    static std::uint64_t scramble(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Content hash of a raster (dims + sample bits), used to key model noise to
/// the exact input image.
inline std::uint64_t raster_hash(const PlanarImage& img) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const auto step = [&h](std::uint64_t v) {
        h ^= v;
        h *= 0x100000001b3ull;
    };
    step(static_cast<std::uint64_t>(img.width()));
    step(static_cast<std::uint64_t>(img.height()));
    step(static_cast<std::uint64_t>(img.channels()));
    for (float v : img.values()) step(std::bit_cast<std::uint32_t>(v));
    return h;
}

/// The synthetic image distribution: smooth radial bumps plus band-limited
/// sinusoid texture on a mid-gray base, clamped to [0,1]. Low-res inputs are
/// box-downsampled ground truth. Everything is a pure function of
/// (seed, index).
struct WorldConfig {
    std::uint64_t seed = 0;
    int lr_width = 16;
    int lr_height = 16;
    int upscale_factor = 2;
    int bump_count_min = 2;
    int bump_count_max = 5;
    double bump_amplitude = 0.2;
    double texture_amplitude = 0.1;
    double noise_base = 0.008;
    double noise_gradient_coupling = 0.25;

    void validate() const {
        if (lr_width < 4 || lr_height < 4)
            throw std::invalid_argument("WorldConfig: lr dims must be >= 4, got " +
                                        std::to_string(lr_width) + "x" +
                                        std::to_string(lr_height));
        if (upscale_factor != 2 && upscale_factor != 4)
            throw std::invalid_argument("WorldConfig: upscale factor must be 2 or 4");
        if (bump_count_min < 0 || bump_count_max < bump_count_min)
            throw std::invalid_argument("WorldConfig: bad bump count range");
        if (bump_amplitude < 0 || texture_amplitude < 0 || noise_base < 0 ||
            noise_gradient_coupling < 0)
            throw std::invalid_argument("WorldConfig: amplitudes must be >= 0");
    }

    int hr_width() const { return lr_width * upscale_factor; }
    int hr_height() const { return lr_height * upscale_factor; }

    bool operator==(const WorldConfig&) const = default;
};

/// One i.i.d. sample from the world: ground truth Y at high resolution and
/// its paired low-res input X.
inline std::pair<PlanarImage, PlanarImage> gen_pair(const WorldConfig& cfg, std::uint64_t index) {
    cfg.validate();
    CounterRng rng(cfg.seed, kStreamWorldPair, index);
    const int w = cfg.hr_width(), h = cfg.hr_height();

    std::vector<double> canvas(static_cast<std::size_t>(w) * h * 3, 0.5);

    // Radial bumps: position, radius, and per-channel amplitude all random.
    const int bumps = rng.uniform_int(cfg.bump_count_min, cfg.bump_count_max);
    for (int b = 0; b < bumps; ++b) {
        const double cx = rng.uniform(0.0, w);
        const double cy = rng.uniform(0.0, h);
        const double rho = rng.uniform(0.06, 0.18) * std::min(w, h);
        double amp[3];
        for (double& a : amp) a = rng.uniform(-cfg.bump_amplitude, cfg.bump_amplitude);
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - 3 * rho)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + 3 * rho)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - 3 * rho)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + 3 * rho)));
        const double inv = 1.0 / (2.0 * rho * rho);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double g = std::exp(-(dx * dx + dy * dy) * inv);
                const std::size_t p = (static_cast<std::size_t>(y) * w + x) * 3;
                for (int c = 0; c < 3; ++c) canvas[p + c] += amp[c] * g;
            }
    }

    // Four plane waves shared across channels (channel-correlated texture),
    // frequencies band-limited to [0.03, 0.12] cycles/px.
    constexpr int kWaves = 4;
    for (int wv = 0; wv < kWaves; ++wv) {
        const double fx = rng.uniform(0.03, 0.12) * (rng.uniform_int(0, 1) ? 1.0 : -1.0);
        const double fy = rng.uniform(0.03, 0.12);
        const double phase = rng.uniform(0.0, 2.0 * 3.141592653589793);
        double amp[3];
        for (double& a : amp) a = rng.uniform(-cfg.texture_amplitude, cfg.texture_amplitude);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double s =
                    std::sin(2.0 * 3.141592653589793 * (fx * x + fy * y) + phase);
                const std::size_t p = (static_cast<std::size_t>(y) * w + x) * 3;
                for (int c = 0; c < 3; ++c) canvas[p + c] += amp[c] * s;
            }
    }

    std::vector<float> data(canvas.size());
    for (std::size_t i = 0; i < canvas.size(); ++i)
        data[i] = static_cast<float>(std::clamp(canvas[i], 0.0, 1.0));
    PlanarImage y_img = PlanarImage::from_data(w, h, 3, std::move(data));
    PlanarImage x_img = downsample_box(y_img, cfg.upscale_factor);
    return {std::move(x_img), std::move(y_img)};
}

/// Bilinear upsample by an integer factor with centers-aligned sampling.
inline PlanarImage bilinear_upsample(const PlanarImage& img, int factor) {
    if (img.empty()) throw std::invalid_argument("bilinear_upsample: empty image");
    if (factor < 1) throw std::invalid_argument("bilinear_upsample: factor must be >= 1");
    const int w = img.width(), h = img.height(), c = img.channels();
    const int ow = w * factor, oh = h * factor;
    PlanarImage out(ow, oh, c);
    const double inv = 1.0 / factor;
    for (int y = 0; y < oh; ++y) {
        const double sy = std::clamp((y + 0.5) * inv - 0.5, 0.0, static_cast<double>(h - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - y0;
        for (int x = 0; x < ow; ++x) {
            const double sx = std::clamp((x + 0.5) * inv - 0.5, 0.0, static_cast<double>(w - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double top = (1.0 - fx) * img.at(x0, y0, ch) + fx * img.at(x1, y0, ch);
                const double bot = (1.0 - fx) * img.at(x0, y1, ch) + fx * img.at(x1, y1, ch);
                out.at(x, y, ch) = static_cast<float>((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

/// The stochastic mock upscaler standing in for a generative model: bilinear
/// base plus Gaussian perturbation whose amplitude grows with the local
/// gradient of the base image, so edges and texture are genuinely uncertain
/// while flat regions are nearly deterministic.
struct MockModel {
    std::uint64_t seed = 0;
    int upscale_factor = 2;
    double noise_base = 0.008;
    double noise_gradient_coupling = 0.25;

    static MockModel from_world(const WorldConfig& cfg) {
        return {cfg.seed, cfg.upscale_factor, cfg.noise_base, cfg.noise_gradient_coupling};
    }

    bool operator==(const MockModel&) const = default;
};

/// Local gradient magnitude of a 3-channel image, channel-averaged:
/// (|d/dx| + |d/dy|)/2 per channel with one-sided differences at borders.
inline std::vector<float> gradient_field(const PlanarImage& img) {
    const int w = img.width(), h = img.height(), c = img.channels();
    std::vector<float> grad(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
            const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
            const double sx = std::max(xr - xl, 1); // 2 interior, 1 at borders
            const double sy = std::max(yd - yu, 1);
            double g = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double gx = (img.at(xr, y, ch) - img.at(xl, y, ch)) / sx;
                const double gy = (img.at(x, yd, ch) - img.at(x, yu, ch)) / sy;
                g += 0.5 * (std::abs(gx) + std::abs(gy));
            }
            grad[static_cast<std::size_t>(y) * w + x] = static_cast<float>(g / c);
        }
    return grad;
}

/// One stochastic draw of the mock model. Deterministic in
/// (model seed, the exact bits of X, draw_index).
inline PlanarImage mock_upscale(const MockModel& model, const PlanarImage& x,
                                std::uint64_t draw_index) {
    const PlanarImage base = bilinear_upsample(x, model.upscale_factor);
    const std::vector<float> grad = gradient_field(base);
    CounterRng rng(model.seed ^ raster_hash(x), kStreamModelDraw, draw_index);
    const int w = base.width(), h = base.height(), c = base.channels();
    PlanarImage out(w, h, c);
    for (int y = 0; y < h; ++y)
        for (int x2 = 0; x2 < w; ++x2) {
            const double amp = model.noise_base +
                               model.noise_gradient_coupling *
                                   grad[static_cast<std::size_t>(y) * w + x2];
            for (int ch = 0; ch < c; ++ch) {
                const double v = base.at(x2, y, ch) + amp * rng.normal();
                out.at(x2, y, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    return out;
}

} // namespace confmask
