#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace confmask {

namespace detail {

inline std::size_t checked_raster_size(int width, int height, int channels) {
    if (width < 1 || height < 1)
        throw std::invalid_argument("raster: width and height must be >= 1, got " +
                                    std::to_string(width) + "x" + std::to_string(height));
    if (channels != 1 && channels != 3)
        throw std::invalid_argument("raster: channels must be 1 or 3, got " +
                                    std::to_string(channels));
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(channels);
}

} // namespace detail

/// Dense float raster: row-major, channel-interleaved. The common carrier for
/// low-res inputs, high-res references, model outputs, and per-channel
/// intermediates. Values are kept finite; range conventions (e.g. [0,1] for
/// display-referred images) are enforced by the operations that need them.
class PlanarImage {
public:
    PlanarImage() = default;

    PlanarImage(int width, int height, int channels, float fill = 0.0f)
        : width_(width), height_(height), channels_(channels),
          data_(detail::checked_raster_size(width, height, channels), fill) {}

    /// Adopts `data` (length must be width*height*channels, all finite).
    static PlanarImage from_data(int width, int height, int channels, std::vector<float> data) {
        const std::size_t n = detail::checked_raster_size(width, height, channels);
        if (data.size() != n)
            throw std::invalid_argument("PlanarImage: got " + std::to_string(data.size()) +
                                        " samples, expected " + std::to_string(n));
        for (float v : data)
            if (!std::isfinite(v))
                throw std::invalid_argument("PlanarImage: non-finite sample");
        PlanarImage img;
        img.width_ = width;
        img.height_ = height;
        img.channels_ = channels;
        img.data_ = std::move(data);
        return img;
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    }
    bool empty() const { return data_.empty(); }

    float at(int x, int y, int c) const { return data_[index(x, y, c)]; }
    float& at(int x, int y, int c) { return data_[index(x, y, c)]; }

    std::span<const float> values() const { return data_; }
    std::span<float> values() { return data_; }

    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    bool same_shape(const PlanarImage& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

/// A 3-channel raster holding normalized CIELAB values, every channel in
/// [0,1] (L/100, (a+128)/255, (b+128)/255). Wrapping instead of aliasing
/// PlanarImage keeps sRGB and Lab rasters from being mixed up at call sites.
class LabImage {
public:
    LabImage() = default;

    explicit LabImage(PlanarImage planar) : planar_(std::move(planar)) {
        if (planar_.channels() != 3)
            throw std::invalid_argument("LabImage: expected 3 channels, got " +
                                        std::to_string(planar_.channels()));
        for (float v : planar_.values())
            if (v < 0.0f || v > 1.0f)
                throw std::invalid_argument("LabImage: sample outside [0,1]");
    }

    int width() const { return planar_.width(); }
    int height() const { return planar_.height(); }
    std::size_t pixel_count() const { return planar_.pixel_count(); }

    float at(int x, int y, int c) const { return planar_.at(x, y, c); }
    const PlanarImage& planar() const { return planar_; }

private:
    PlanarImage planar_;
};

/// Per-pixel boolean raster (true = pixel is in the set). Stored as bytes so
/// span views stay cheap.
class BinaryMask {
public:
    BinaryMask() = default;

    BinaryMask(int width, int height, bool fill = false)
        : width_(width), height_(height),
          data_(detail::checked_raster_size(width, height, 1), fill ? 1 : 0) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    }

    bool at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int x, int y, bool v) { data_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

    std::span<const std::uint8_t> bytes() const { return data_; }

    std::size_t count_true() const {
        std::size_t n = 0;
        for (std::uint8_t b : data_) n += (b != 0);
        return n;
    }

    bool operator==(const BinaryMask& o) const {
        return width_ == o.width_ && height_ == o.height_ && data_ == o.data_;
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

namespace detail {

template <class T>
struct RasterBounds {
    // Tags may narrow this; default accepts any finite value.
    static constexpr float lower = -std::numeric_limits<float>::max();
    static constexpr float upper = std::numeric_limits<float>::max();
};

} // namespace detail

/// Single-channel float raster with a phantom Tag so semantically different
/// maps (uncertainty scores vs. fidelity losses) are distinct types. Tags may
/// specialize detail::RasterBounds to get range validation on construction
/// from loose data.
template <class Tag>
class ScalarRaster {
public:
    ScalarRaster() = default;

    ScalarRaster(int width, int height, float fill = 0.0f)
        : width_(width), height_(height),
          data_(detail::checked_raster_size(width, height, 1), fill) {
        check_range(fill);
    }

    static ScalarRaster from_values(int width, int height, std::vector<float> values) {
        const std::size_t n = detail::checked_raster_size(width, height, 1);
        if (values.size() != n)
            throw std::invalid_argument("ScalarRaster: got " + std::to_string(values.size()) +
                                        " samples, expected " + std::to_string(n));
        for (float v : values) {
            if (!std::isfinite(v)) throw std::invalid_argument("ScalarRaster: non-finite sample");
            check_range(v);
        }
        ScalarRaster r;
        r.width_ = width;
        r.height_ = height;
        r.data_ = std::move(values);
        return r;
    }

    /// Reinterprets a 1-channel PlanarImage (e.g. fresh from file I/O).
    static ScalarRaster from_planar(const PlanarImage& img) {
        if (img.channels() != 1)
            throw std::invalid_argument("ScalarRaster: expected 1 channel, got " +
                                        std::to_string(img.channels()));
        return from_values(img.width(), img.height(),
                           std::vector<float>(img.values().begin(), img.values().end()));
    }

    PlanarImage to_planar() const {
        return PlanarImage::from_data(width_, height_, 1,
                                      std::vector<float>(data_.begin(), data_.end()));
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const {
        return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
    }

    float at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    float& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<const float> values() const { return data_; }
    std::span<float> values() { return data_; }

    bool same_shape(const ScalarRaster& o) const {
        return width_ == o.width_ && height_ == o.height_;
    }

private:
    static void check_range(float v) {
        using B = detail::RasterBounds<Tag>;
        if (v < B::lower || v > B::upper)
            throw std::invalid_argument("ScalarRaster: sample " + std::to_string(v) +
                                        " outside [" + std::to_string(B::lower) + ", " +
                                        std::to_string(B::upper) + "]");
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<float> data_;
};

/// Box-average downsampling by an integer factor; both dimensions must be
/// divisible by `factor`. Each output pixel is the plain mean of its
/// factor x factor source block (accumulated in double).
inline PlanarImage downsample_box(const PlanarImage& img, int factor) {
    if (img.empty()) throw std::invalid_argument("downsample_box: empty image");
    if (factor < 1) throw std::invalid_argument("downsample_box: factor must be >= 1");
    if (img.width() % factor != 0 || img.height() % factor != 0)
        throw std::invalid_argument("downsample_box: dimensions " + std::to_string(img.width()) +
                                    "x" + std::to_string(img.height()) +
                                    " not divisible by factor " + std::to_string(factor));
    const int ow = img.width() / factor;
    const int oh = img.height() / factor;
    const int c = img.channels();
    PlanarImage out(ow, oh, c);
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        acc += img.at(x * factor + dx, y * factor + dy, ch);
                out.at(x, y, ch) = static_cast<float>(acc * inv);
            }
        }
    }
    return out;
}

} // namespace confmask
