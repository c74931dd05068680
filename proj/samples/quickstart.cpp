// End-to-end library walkthrough on the synthetic world: generate paired
// data, score a stochastic model's draws, calibrate a trust threshold, and
// check what the mask delivers on a held-out image.

#include <cstdio>
#include <vector>

#include "confmask/confmask.hpp"

int main() {
    using namespace confmask;

    WorldConfig world;
    world.seed = 42;
    const MockModel model = MockModel::from_world(world);

    ScoreConfig score_cfg; // 8 draws, box:2 smoothing, 2 px post blur
    FidelityMetricSpec metric; // pointwise

    const int n = 30;
    const double alpha = 0.2;

    // One calibration pair per world draw: sigma from repeated model draws,
    // fidelity from the model's prediction against the ground truth.
    const auto make_pair = [&](std::uint64_t index, LabImage* y_out, LabImage* pred_out) {
        const auto [x, y] = gen_pair(world, index);
        std::vector<LabImage> draws;
        draws.reserve(score_cfg.num_draws);
        for (int d = 0; d < score_cfg.num_draws; ++d)
            draws.push_back(srgb_to_lab_normalized(
                mock_upscale(model, x, static_cast<std::uint64_t>(d))));
        CalibrationPair pair;
        pair.score = compute_score(draws, score_cfg);
        LabImage lab_y = srgb_to_lab_normalized(y);
        LabImage lab_pred = srgb_to_lab_normalized(
            mock_upscale(model, x, static_cast<std::uint64_t>(score_cfg.num_draws)));
        pair.fidelity = compute_fidelity(lab_y, lab_pred, metric);
        if (y_out) *y_out = std::move(lab_y);
        if (pred_out) *pred_out = std::move(lab_pred);
        return pair;
    };

    std::vector<CalibrationPair> calibration;
    for (int i = 0; i < n; ++i)
        calibration.push_back(make_pair(static_cast<std::uint64_t>(i), nullptr, nullptr));

    const Threshold t = calibrate_dp(calibration, alpha, CalibrationMode::conservative);
    std::printf("threshold t_alpha: %s (risk level %.2f, n=%d)\n",
                format_threshold(t).c_str(), alpha, n);

    // Apply to a fresh image the calibration never saw.
    LabImage test_y, test_pred;
    const CalibrationPair test =
        make_pair(static_cast<std::uint64_t>(n), &test_y, &test_pred);
    const BinaryMask mask = make_mask(test.score, t);
    const EvalReport report = evaluate_mask(test_y, test_pred, test.fidelity, mask);

    std::printf("held-out fidelity error inside the mask: %.4f (target <= %.2f)\n",
                report.fidelity_error, alpha);
    std::printf("mask size (mistrust fraction): %.3f\n", report.mistrust_fraction);
    std::printf("masked PSNR: %s dB\n", format_double(report.masked_psnr).c_str());
    return 0;
}
