#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <vector>

#include "confmask/score.hpp"
#include "confmask/synth.hpp"

using namespace confmask;
using Catch::Matchers::WithinAbs;

namespace {

LabImage random_lab(int w, int h, CounterRng& rng) {
    std::vector<float> data(static_cast<std::size_t>(w) * h * 3);
    for (float& v : data) v = static_cast<float>(rng.uniform());
    return LabImage(PlanarImage::from_data(w, h, 3, std::move(data)));
}

std::vector<LabImage> random_draws(int count, int w, int h, std::uint64_t salt) {
    CounterRng rng(salt, detail::fnv1a64("score-test"), 0);
    std::vector<LabImage> draws;
    for (int i = 0; i < count; ++i) draws.push_back(random_lab(w, h, rng));
    return draws;
}

bool bitwise_equal(const ScoreMap& a, const ScoreMap& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.values().data(), b.values().data(),
                       a.values().size() * sizeof(float)) == 0;
}

// One-pixel Lab pair where only channel 0 differs.
std::vector<LabImage> two_draws_one_channel(float lo, float hi) {
    return {LabImage(PlanarImage::from_data(1, 1, 3, {lo, 0.5f, 0.5f})),
            LabImage(PlanarImage::from_data(1, 1, 3, {hi, 0.5f, 0.5f}))};
}

} // namespace

TEST_CASE("two-draw variance matches the closed form") {
    // Population variance of {a, b} is (b-a)^2/4; only one of three channels
    // varies, so the channel mean divides by 3.
    const auto d1 = two_draws_one_channel(0.2f, 0.5f);
    CHECK_THAT(sigma_var(d1).at(0, 0), WithinAbs(0.0075, 1e-8));

    // Exactly representable endpoints pin the arithmetic tighter.
    const auto d2 = two_draws_one_channel(0.25f, 0.75f);
    CHECK_THAT(sigma_var(d2).at(0, 0), WithinAbs(0.0625 / 3.0, 1e-9));
}

TEST_CASE("identical draws score zero") {
    CounterRng rng(11, detail::fnv1a64("score-test"), 1);
    const LabImage img = random_lab(6, 5, rng);
    // Four copies: mean and mean-square scale by an exact power of two, so
    // the variance cancels bitwise.
    const std::vector<LabImage> four(4, img);
    const ScoreMap sfour = sigma_var(four);
    for (float v : sfour.values()) CHECK(v == 0.0f);
    // Three copies leave sub-1e-12 rounding residue at most.
    const std::vector<LabImage> three(3, img);
    const ScoreMap sthree = sigma_var(three);
    for (float v : sthree.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1e-12f);
    }
}

TEST_CASE("radius-0 box smoothing reduces to the plain variance bitwise") {
    const auto draws = random_draws(5, 9, 7, 21);
    CHECK(bitwise_equal(sigma_var(draws), sigma_ker(draws, make_box(0))));
}

TEST_CASE("draw order never changes the score map") {
    auto draws = random_draws(6, 8, 8, 33);
    const ScoreMap base = sigma_ker(draws, make_box(1));

    std::vector<LabImage> reversed(draws.rbegin(), draws.rend());
    CHECK(bitwise_equal(base, sigma_ker(reversed, make_box(1))));

    std::vector<LabImage> rotated(draws.begin() + 2, draws.end());
    rotated.insert(rotated.end(), draws.begin(), draws.begin() + 2);
    CHECK(bitwise_equal(base, sigma_ker(rotated, make_box(1))));
}

TEST_CASE("plain variance agrees with a naive two-pass oracle") {
    const auto draws = random_draws(7, 10, 6, 55);
    const ScoreMap got = sigma_var(draws);
    const double m = static_cast<double>(draws.size());
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 10; ++x) {
            double score = 0.0;
            for (int c = 0; c < 3; ++c) {
                double mean = 0.0;
                for (const auto& d : draws) mean += d.at(x, y, c);
                mean /= m;
                double var = 0.0;
                for (const auto& d : draws) {
                    const double dv = d.at(x, y, c) - mean;
                    var += dv * dv;
                }
                score += var / m;
            }
            // The map stores floats, so the oracle can only be matched to
            // single-precision resolution.
            CHECK_THAT(got.at(x, y), WithinAbs(score / 3.0, 1e-7));
        }
}

TEST_CASE("smoothed scores stay nonnegative before clamping") {
    // The estimator is a variance under a nonnegative weighting, so the raw
    // doubles can only dip below zero by accumulated rounding.
    for (std::uint64_t salt = 0; salt < 20; ++salt) {
        const auto draws = random_draws(3, 8, 6, 100 + salt);
        for (const Kernel& k : {make_box(2), make_gaussian(1.2, 2)}) {
            const auto raw = detail::sigma_ker_raw(draws, k);
            const ScoreMap clamped = sigma_ker(draws, k);
            for (std::size_t i = 0; i < raw.size(); ++i) {
                CHECK(raw[i] >= -1e-9);
                CHECK(clamped.values()[i] == static_cast<float>(std::max(0.0, raw[i])));
            }
        }
    }
}

TEST_CASE("post-blur spreads a point score by the gaussian weights") {
    std::vector<float> vals(81, 0.0f);
    vals[4 * 9 + 4] = 1.0f;
    const ScoreMap delta = ScoreMap::from_values(9, 9, std::move(vals));

    const ScoreMap same = finalize_score(delta, std::nullopt);
    CHECK(bitwise_equal(same, delta));

    // sigma=1 resolves to radius 3; a unit impulse reproduces the kernel.
    const ScoreMap blurred = finalize_score(delta, 1.0);
    CHECK_THAT(blurred.at(4, 4), WithinAbs(0.15924112569070245, 1e-7));
    CHECK_THAT(blurred.at(4, 3), WithinAbs(0.096584625018564138, 1e-7));
    CHECK_THAT(blurred.at(5, 4), WithinAbs(0.096584625018564138, 1e-7));
    CHECK_THAT(blurred.at(3, 3), WithinAbs(0.058581536330607026, 1e-7));
    CHECK(blurred.at(0, 0) >= 0.0f);
}

TEST_CASE("the configured pipeline is smoothing plus optional blur") {
    const auto draws = random_draws(4, 12, 10, 77);
    ScoreConfig cfg;
    cfg.num_draws = 4;
    cfg.kernel = KernelSpec::parse("box:2");
    cfg.post_blur_sigma = 1.5;
    const ScoreMap direct = finalize_score(sigma_ker(draws, make_box(2)), 1.5);
    CHECK(bitwise_equal(compute_score(draws, cfg), direct));

    cfg.post_blur_sigma = std::nullopt;
    CHECK(bitwise_equal(compute_score(draws, cfg), sigma_ker(draws, make_box(2))));
}

TEST_CASE("score computation rejects bad configurations and inputs") {
    const auto draws = random_draws(4, 4, 4, 91);

    ScoreConfig wrong_count;
    wrong_count.num_draws = 8;
    CHECK_THROWS_AS(compute_score(draws, wrong_count), std::invalid_argument);

    ScoreConfig too_few;
    too_few.num_draws = 1;
    CHECK_THROWS_AS(too_few.validate(), std::invalid_argument);

    ScoreConfig bad_blur;
    bad_blur.num_draws = 4;
    bad_blur.post_blur_sigma = 0.0;
    CHECK_THROWS_AS(bad_blur.validate(), std::invalid_argument);

    const std::vector<LabImage> one(1, draws[0]);
    CHECK_THROWS_AS(sigma_var(one), std::invalid_argument);

    std::vector<LabImage> mixed = {draws[0],
                                   LabImage(PlanarImage(5, 4, 3, 0.5f))};
    CHECK_THROWS_AS(sigma_var(mixed), std::invalid_argument);
}
