#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "confmask/raster.hpp"

namespace confmask {

/// Normalized nonnegative low-pass kernel on a (2r+1)^2 grid. Weights are
/// kept in double so normalization holds to ~1e-16; convolution accumulates
/// in double regardless of the raster sample type.
class Kernel {
public:
    /// Dense kernel from explicit weights (row-major (2r+1)^2). Weights must
    /// be nonnegative and sum to 1 within 1e-9.
    static Kernel from_weights(int radius, std::vector<double> weights) {
        Kernel k;
        k.init(radius, std::move(weights), {});
        return k;
    }

    int radius() const { return radius_; }
    int side() const { return 2 * radius_ + 1; }
    const std::vector<double>& weights() const { return weights_; }
    double weight(int dx, int dy) const {
        return weights_[static_cast<std::size_t>(dy + radius_) * side() + (dx + radius_)];
    }

    bool separable() const { return !separable_factor_.empty(); }
    const std::vector<double>& separable_factor() const { return separable_factor_; }

    /// Same weights with the separable fast path disabled (forces the dense
    /// code path; used to cross-check the two implementations).
    Kernel dense_only() const {
        Kernel k = *this;
        k.separable_factor_.clear();
        return k;
    }

private:
    friend Kernel make_box(int);
    friend Kernel make_gaussian(double, int);

    void init(int radius, std::vector<double> weights, std::vector<double> factor) {
        if (radius < 0) throw std::invalid_argument("Kernel: negative radius");
        const std::size_t n = static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1);
        if (weights.size() != n)
            throw std::invalid_argument("Kernel: got " + std::to_string(weights.size()) +
                                        " weights, expected " + std::to_string(n));
        double sum = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw std::invalid_argument("Kernel: negative or NaN weight");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("Kernel: weights sum to " + std::to_string(sum) +
                                        ", expected 1");
        radius_ = radius;
        weights_ = std::move(weights);
        separable_factor_ = std::move(factor);
    }

    int radius_ = 0;
    std::vector<double> weights_{1.0};
    std::vector<double> separable_factor_;
};

/// Uniform averaging kernel; radius 0 is the identity (single weight 1).
inline Kernel make_box(int radius) {
    if (radius < 0) throw std::invalid_argument("make_box: negative radius");
    const int side = 2 * radius + 1;
    std::vector<double> factor(side, 1.0 / side);
    std::vector<double> weights(static_cast<std::size_t>(side) * side);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
            weights[static_cast<std::size_t>(i) * side + j] = factor[i] * factor[j];
    Kernel k;
    k.init(radius, std::move(weights), std::move(factor));
    return k;
}

/// Truncated Gaussian, weights proportional to exp(-(dx^2+dy^2)/(2 sigma^2)),
/// renormalized. Default radius is ceil(3 sigma).
inline Kernel make_gaussian(double sigma, int radius = -1) {
    if (!(sigma > 0.0)) throw std::invalid_argument("make_gaussian: sigma must be > 0");
    if (radius < 0) radius = static_cast<int>(std::ceil(3.0 * sigma));
    if (radius < 1) throw std::invalid_argument("make_gaussian: radius must be >= 1");
    const int side = 2 * radius + 1;
    std::vector<double> factor(side);
    double sum = 0.0;
    for (int i = 0; i < side; ++i) {
        const double d = i - radius;
        factor[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += factor[i];
    }
    for (double& f : factor) f /= sum;
    std::vector<double> weights(static_cast<std::size_t>(side) * side);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
            weights[static_cast<std::size_t>(i) * side + j] = factor[i] * factor[j];
    Kernel k;
    k.init(radius, std::move(weights), std::move(factor));
    return k;
}

namespace detail {

/// Mirror index without repeating the edge sample (-1 -> 1, n -> n-2).
/// Single reflection only; callers guarantee radius <= n-1.
inline int reflect101(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
}

/// Correlates one contiguous w*h plane with the kernel. Accumulation is in
/// double for float and double planes alike.
template <class T>
void convolve_plane(const T* src, int w, int h, const Kernel& k, T* dst) {
    const int r = k.radius();
    if (r >= w || r >= h)
        throw std::invalid_argument("convolve: kernel radius " + std::to_string(r) +
                                    " too large for " + std::to_string(w) + "x" +
                                    std::to_string(h) + " image (reflection undefined)");
    if (k.separable()) {
        const auto& f = k.separable_factor();
        std::vector<double> tmp(static_cast<std::size_t>(w) * h);
        for (int y = 0; y < h; ++y) {
            const T* row = src + static_cast<std::size_t>(y) * w;
            double* trow = tmp.data() + static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int d = -r; d <= r; ++d)
                    acc += f[d + r] * row[reflect101(x + d, w)];
                trow[x] = acc;
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int d = -r; d <= r; ++d)
                    acc += f[d + r] * tmp[static_cast<std::size_t>(reflect101(y + d, h)) * w + x];
                dst[static_cast<std::size_t>(y) * w + x] = static_cast<T>(acc);
            }
        }
        return;
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                const int sy = reflect101(y + dy, h);
                for (int dx = -r; dx <= r; ++dx)
                    acc += k.weight(dx, dy) * src[static_cast<std::size_t>(sy) * w +
                                                  reflect101(x + dx, w)];
            }
            dst[static_cast<std::size_t>(y) * w + x] = static_cast<T>(acc);
        }
    }
}

} // namespace detail

/// Per-channel 2-D correlation with reflect-101 borders; output dims equal
/// input dims. Errors if the kernel radius reaches min(width, height).
inline PlanarImage convolve2d(const PlanarImage& img, const Kernel& k) {
    if (img.empty()) throw std::invalid_argument("convolve2d: empty image");
    const int w = img.width(), h = img.height(), c = img.channels();
    PlanarImage out(w, h, c);
    std::vector<float> plane(static_cast<std::size_t>(w) * h);
    std::vector<float> conv(plane.size());
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                plane[static_cast<std::size_t>(y) * w + x] = img.at(x, y, ch);
        detail::convolve_plane(plane.data(), w, h, k, conv.data());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(x, y, ch) = conv[static_cast<std::size_t>(y) * w + x];
    }
    return out;
}

/// How a kernel is described in configs, CLI flags, and saved records.
struct KernelSpec {
    enum class Kind { box, gaussian };
    Kind kind = Kind::box;
    int radius = 2;      // box radius, or Gaussian truncation radius (-1 = ceil(3 sigma))
    double sigma = 0.0;  // Gaussian only

    Kernel make() const {
        return kind == Kind::box ? make_box(radius) : make_gaussian(sigma, radius);
    }

    /// Effective radius once defaults are resolved.
    int resolved_radius() const {
        if (kind == Kind::box) return radius;
        return radius >= 0 ? radius : static_cast<int>(std::ceil(3.0 * sigma));
    }

    /// "box:R" or "gaussian:S" (optionally "gaussian:S:R" to pin the radius).
    static KernelSpec parse(const std::string& text) {
        const auto bad = [&] {
            return std::invalid_argument("kernel spec '" + text +
                                         "': expected box:RADIUS or gaussian:SIGMA[:RADIUS]");
        };
        const auto colon = text.find(':');
        if (colon == std::string::npos) throw bad();
        const std::string kind = text.substr(0, colon);
        const std::string rest = text.substr(colon + 1);
        try {
            if (kind == "box") {
                std::size_t used = 0;
                const int r = std::stoi(rest, &used);
                if (used != rest.size() || r < 0) throw bad();
                return KernelSpec{Kind::box, r, 0.0};
            }
            if (kind == "gaussian") {
                const auto colon2 = rest.find(':');
                const std::string sig_text =
                    colon2 == std::string::npos ? rest : rest.substr(0, colon2);
                std::size_t used = 0;
                const double s = std::stod(sig_text, &used);
                if (used != sig_text.size() || !(s > 0.0)) throw bad();
                int r = -1;
                if (colon2 != std::string::npos) {
                    const std::string rad_text = rest.substr(colon2 + 1);
                    r = std::stoi(rad_text, &used);
                    if (used != rad_text.size() || r < 1) throw bad();
                }
                return KernelSpec{Kind::gaussian, r, s};
            }
        } catch (const std::invalid_argument&) {
            throw bad();
        } catch (const std::out_of_range&) {
            throw bad();
        }
        throw bad();
    }

    std::string format() const {
        if (kind == Kind::box) return "box:" + std::to_string(radius);
        std::string s = "gaussian:" + std::to_string(sigma);
        if (radius >= 0) s += ":" + std::to_string(radius);
        return s;
    }

    bool operator==(const KernelSpec&) const = default;
};

} // namespace confmask
