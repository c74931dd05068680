#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "confmask/fidelity.hpp"
#include "confmask/raster.hpp"
#include "confmask/score.hpp"

namespace confmask {

/// One calibration image, reduced to what the threshold search needs: its
/// score map and its fidelity map, same dimensions (different images may have
/// different dimensions).
struct CalibrationPair {
    ScoreMap score;
    FidelityMap fidelity;

    void validate() const {
        if (score.width() != fidelity.width() || score.height() != fidelity.height())
            throw std::invalid_argument("CalibrationPair: score is " +
                                        std::to_string(score.width()) + "x" +
                                        std::to_string(score.height()) + " but fidelity is " +
                                        std::to_string(fidelity.width()) + "x" +
                                        std::to_string(fidelity.height()));
    }
};

/// Extended-real trust threshold: -inf trusts nothing, +inf trusts everything.
struct Threshold {
    double value = -std::numeric_limits<double>::infinity();

    static Threshold negative_infinity() {
        return {-std::numeric_limits<double>::infinity()};
    }
    static Threshold positive_infinity() {
        return {std::numeric_limits<double>::infinity()};
    }
    static Threshold finite(double v) {
        if (!std::isfinite(v)) throw std::invalid_argument("Threshold::finite: non-finite value");
        return {v};
    }

    bool is_neg_inf() const { return std::isinf(value) && value < 0; }
    bool is_pos_inf() const { return std::isinf(value) && value > 0; }
    bool is_finite() const { return std::isfinite(value); }

    bool operator==(const Threshold&) const = default;
};

/// How the threshold search resolves the risk crossing. The two published
/// search routines disagree exactly at the jump where the risk first exceeds
/// alpha: `conservative` returns the last step whose risk (including its own
/// pixels) still satisfies alpha, so the calibration-set risk of the result
/// is <= alpha whenever the result is > -inf. `sup_faithful` returns the
/// literal supremum of the feasible set, i.e. the first step that breaks it.
enum class CalibrationMode { conservative, sup_faithful };

inline const char* mode_name(CalibrationMode m) {
    return m == CalibrationMode::conservative ? "conservative" : "sup_faithful";
}

inline CalibrationMode parse_mode(const std::string& name) {
    if (name == "conservative") return CalibrationMode::conservative;
    if (name == "sup_faithful") return CalibrationMode::sup_faithful;
    throw std::invalid_argument("unknown calibration mode '" + name +
                                "' (expected conservative or sup_faithful)");
}

namespace detail {

/// The one arithmetic shape of the risk estimate, shared by every code path
/// that computes it: (3 + sum of per-image sups, summed in image order)
/// divided by n+1. Keeping the expression identical everywhere is what makes
/// the two search implementations agree bit for bit.
inline double risk_from_image_sups(std::span<const double> sups) {
    double total = 0.0;
    for (double v : sups) total += v;
    return (3.0 + total) / (static_cast<double>(sups.size()) + 1.0);
}

inline void validate_calibration_inputs(std::span<const CalibrationPair> pairs) {
    if (pairs.empty()) throw std::invalid_argument("calibrate: empty pair list");
    for (const auto& p : pairs) p.validate();
}

inline void validate_alpha(double alpha, bool allow_extended) {
    const double hi = allow_extended ? 3.0 : 1.0;
    if (!(alpha > 0.0) || !(alpha <= hi))
        throw std::invalid_argument("calibrate: alpha " + std::to_string(alpha) +
                                    " outside (0," + (allow_extended ? std::string("3") :
                                    std::string("1")) + "]");
}

} // namespace detail

/// The calibration risk at trust level t: mean over images of the worst
/// fidelity among pixels scoring <= t, plus the 3/(n+1) correction — i.e.
/// (1/(n+1)) * [3 + sum_i sup{D_p : sigma_p <= t}]. Nondecreasing and
/// right-continuous in t; equals 3/(n+1) at t = -inf.
inline double empirical_risk(std::span<const CalibrationPair> pairs, Threshold t) {
    detail::validate_calibration_inputs(pairs);
    std::vector<double> sups(pairs.size(), 0.0);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto sigma = pairs[i].score.values();
        const auto d = pairs[i].fidelity.values();
        double sup = 0.0;
        for (std::size_t p = 0; p < sigma.size(); ++p)
            if (static_cast<double>(sigma[p]) <= t.value)
                sup = std::max(sup, static_cast<double>(d[p]));
        sups[i] = sup;
    }
    return detail::risk_from_image_sups(sups);
}

namespace detail {

/// Shared search state: all (sigma, D, image) triples sorted by sigma once,
/// then swept per alpha. Construction is O(N log N); each solve is a single
/// pass over the triples with a fresh risk summation per sigma group.
class CalibrationSweep {
public:
    explicit CalibrationSweep(std::span<const CalibrationPair> pairs) {
        validate_calibration_inputs(pairs);
        n_ = pairs.size();
        std::size_t total = 0;
        for (const auto& p : pairs) total += p.score.pixel_count();
        entries_.reserve(total);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto sigma = pairs[i].score.values();
            const auto d = pairs[i].fidelity.values();
            for (std::size_t p = 0; p < sigma.size(); ++p)
                entries_.push_back({sigma[p], d[p], static_cast<int>(i)});
        }
        // Sort by sigma only; within-group order cannot affect the result
        // (group members are all absorbed before any risk check, and max
        // commutes).
        std::stable_sort(entries_.begin(), entries_.end(),
                         [](const Entry& a, const Entry& b) { return a.sigma < b.sigma; });
    }

    struct Result {
        Threshold threshold;
        double risk_at_threshold; // R(t) for the returned t
    };

    /// One sweep at a given alpha. In conservative mode risk_at_threshold is
    /// <= alpha whenever threshold > -inf; in sup_faithful mode a finite
    /// threshold reports the first risk that exceeded alpha.
    Result solve(double alpha, CalibrationMode mode) const {
        std::vector<double> sups(n_, 0.0);
        double risk = risk_from_image_sups(sups); // 3/(n+1)
        if (risk > alpha) return {Threshold::negative_infinity(), risk};

        Threshold best = Threshold::negative_infinity();
        double best_risk = risk;
        std::size_t i = 0;
        while (i < entries_.size()) {
            const float sigma = entries_[i].sigma;
            do {
                sups[entries_[i].image] =
                    std::max(sups[entries_[i].image], static_cast<double>(entries_[i].d));
                ++i;
            } while (i < entries_.size() && entries_[i].sigma == sigma);
            risk = risk_from_image_sups(sups);
            if (risk > alpha) {
                if (mode == CalibrationMode::sup_faithful)
                    return {Threshold::finite(sigma), risk};
                return {best, best_risk};
            }
            best = Threshold::finite(sigma);
            best_risk = risk;
        }
        // Never crossed: the full-trust risk satisfies alpha.
        return {Threshold::positive_infinity(), best_risk};
    }

private:
    struct Entry {
        float sigma;
        float d;
        int image;
    };

    std::size_t n_ = 0;
    std::vector<Entry> entries_;
};

} // namespace detail

/// Reference threshold search: evaluates empirical_risk at every unique sigma
/// value and applies the crossing rule directly. O(m*N); the oracle the sweep
/// implementation is checked against.
inline Threshold calibrate_bruteforce(std::span<const CalibrationPair> pairs, double alpha,
                                      CalibrationMode mode, bool allow_extended_alpha = false) {
    detail::validate_calibration_inputs(pairs);
    detail::validate_alpha(alpha, allow_extended_alpha);

    if (empirical_risk(pairs, Threshold::negative_infinity()) > alpha)
        return Threshold::negative_infinity();

    std::vector<float> uniq;
    for (const auto& p : pairs)
        uniq.insert(uniq.end(), p.score.values().begin(), p.score.values().end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    if (empirical_risk(pairs, Threshold::finite(uniq.back())) <= alpha)
        return Threshold::positive_infinity();

    Threshold best = Threshold::negative_infinity();
    for (float sigma : uniq) {
        const double risk = empirical_risk(pairs, Threshold::finite(sigma));
        if (risk > alpha)
            return mode == CalibrationMode::sup_faithful ? Threshold::finite(sigma) : best;
        best = Threshold::finite(sigma);
    }
    return best; // unreachable: the crossing exists by the checks above
}

/// Sorted-sweep threshold search; same contract and same results as
/// calibrate_bruteforce, in O(N log N + m·n).
inline Threshold calibrate_dp(std::span<const CalibrationPair> pairs, double alpha,
                              CalibrationMode mode, bool allow_extended_alpha = false) {
    detail::validate_alpha(alpha, allow_extended_alpha);
    return detail::CalibrationSweep(pairs).solve(alpha, mode).threshold;
}

/// A pixel is trusted iff its score is <= t.
inline BinaryMask make_mask(const ScoreMap& score, Threshold t) {
    BinaryMask mask(score.width(), score.height());
    for (int y = 0; y < score.height(); ++y)
        for (int x = 0; x < score.width(); ++x)
            mask.set(x, y, static_cast<double>(score.at(x, y)) <= t.value);
    return mask;
}

} // namespace confmask
