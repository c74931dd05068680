#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "confmask/calibrate.hpp"
#include "confmask/cfm_io.hpp"
#include "confmask/color.hpp"
#include "confmask/experiments.hpp"
#include "confmask/fidelity.hpp"
#include "confmask/metrics.hpp"
#include "confmask/png_io.hpp"
#include "confmask/record.hpp"
#include "confmask/score.hpp"
#include "confmask/synth.hpp"
#include "confmask/viz.hpp"

namespace confmask::cli {

namespace fs = std::filesystem;
using confmask::detail::ordered_json;

inline constexpr int kManifestFormatVersion = 1;

inline std::string pair_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "pair-%04d", index);
    return buf;
}

inline std::string draw_suffix(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "draw-%02d", index);
    return buf;
}

/// Index of a generated dataset directory: what was generated and from
/// which world, enough to regenerate or extend it.
struct DatasetManifest {
    int format_version = kManifestFormatVersion;
    std::uint64_t seed = 0;
    WorldConfig world;
    int count = 0;
    int draws_per_pair = 0;
    int prediction_draw_index = 0;

    void validate() const {
        if (format_version != kManifestFormatVersion)
            throw std::runtime_error("manifest: unsupported format_version " +
                                     std::to_string(format_version));
        world.validate();
        if (count < 0) throw std::runtime_error("manifest: negative count");
        if (draws_per_pair < 0) throw std::runtime_error("manifest: negative draws_per_pair");
    }
};

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    m.validate();
    ordered_json j;
    j["format_version"] = m.format_version;
    j["seed"] = m.seed;
    j["world"] = confmask::detail::world_config_to_json(m.world);
    j["count"] = m.count;
    j["draws_per_pair"] = m.draws_per_pair;
    j["prediction_draw_index"] = m.prediction_draw_index;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
    f << j.dump(2) << '\n';
    if (!f) throw std::runtime_error("save_manifest: write failed for " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
    ordered_json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_manifest: " + path + ": " + e.what());
    }
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.world = confmask::detail::world_config_from_json(j.at("world"));
    m.count = j.at("count").get<int>();
    m.draws_per_pair = j.at("draws_per_pair").get<int>();
    m.prediction_draw_index = j.at("prediction_draw_index").get<int>();
    m.validate();
    return m;
}

namespace detail {

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " +
                                     ec.message());
}

/// Every command drops its fully resolved configuration into the output
/// directory so the run can be repeated from the artifact alone.
inline void echo_config(const fs::path& out_dir, const ordered_json& cfg) {
    std::ofstream f(out_dir / "config.json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write config echo in " + out_dir.string());
    f << cfg.dump(2) << '\n';
}

inline ordered_json load_config_echo(const fs::path& dir) {
    std::ifstream f(dir / "config.json");
    if (!f)
        throw std::runtime_error("missing config.json in " + dir.string() +
                                 " (is this a score/fidelity output directory?)");
    ordered_json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("bad config.json in " + dir.string() + ": " + e.what());
    }
    return j;
}

/// Sorted list of files under `dir` whose names end in `suffix`.
inline std::vector<std::string> list_with_suffix(const fs::path& dir,
                                                 const std::string& suffix) {
    if (!fs::is_directory(dir))
        throw std::runtime_error("not a directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    return names;
}

inline ScoreConfig score_config_from_flags(int draws, const std::string& kernel,
                                           double post_blur) {
    ScoreConfig cfg;
    cfg.num_draws = draws;
    cfg.kernel = KernelSpec::parse(kernel);
    if (post_blur > 0.0)
        cfg.post_blur_sigma = post_blur;
    else
        cfg.post_blur_sigma.reset();
    cfg.validate();
    return cfg;
}

inline FidelityMetricSpec metric_from_flags(const std::string& metric,
                                            const std::string& kernel) {
    FidelityMetricSpec spec;
    spec.kind = FidelityMetricSpec::parse_kind(metric);
    if (spec.kind == FidelityMetricSpec::Kind::neighborhood)
        spec.kernel = KernelSpec::parse(kernel);
    spec.validate();
    return spec;
}

} // namespace detail

// ---- generate-synthetic ----

struct GenerateOptions {
    std::string out;
    std::uint64_t seed = 0;
    int count = 50;
    int draws = 8;
    int lr_width = 16;
    int lr_height = 16;
    int upscale = 2;
};

inline int run_generate(const GenerateOptions& opt) {
    WorldConfig world;
    world.seed = opt.seed;
    world.lr_width = opt.lr_width;
    world.lr_height = opt.lr_height;
    world.upscale_factor = opt.upscale;
    world.validate();
    if (opt.count < 0) throw std::runtime_error("generate-synthetic: negative --count");
    if (opt.draws < 0) throw std::runtime_error("generate-synthetic: negative --draws");

    const fs::path out(opt.out);
    detail::ensure_dir(out);
    if (opt.count > 0) {
        detail::ensure_dir(out / "pairs");
        if (opt.draws > 0) detail::ensure_dir(out / "draws");
    }

    const MockModel model = MockModel::from_world(world);
    for (int i = 0; i < opt.count; ++i) {
        const auto [x, y] = gen_pair(world, static_cast<std::uint64_t>(i));
        const std::string stem = pair_stem(i);
        save_png(x, (out / "pairs" / (stem + ".x.png")).string(), 16);
        save_png(y, (out / "pairs" / (stem + ".y.png")).string(), 16);
        for (int d = 0; d < opt.draws; ++d)
            save_png(mock_upscale(model, x, static_cast<std::uint64_t>(d)),
                     (out / "draws" / (stem + "." + draw_suffix(d) + ".png")).string(), 16);
        save_png(mock_upscale(model, x, static_cast<std::uint64_t>(opt.draws)),
                 (out / "pairs" / (stem + ".pred.png")).string(), 16);
    }

    DatasetManifest m;
    m.seed = opt.seed;
    m.world = world;
    m.count = opt.count;
    m.draws_per_pair = opt.draws;
    m.prediction_draw_index = opt.draws;
    save_manifest(m, (out / "manifest.json").string());

    ordered_json echo;
    echo["command"] = "generate-synthetic";
    echo["out"] = opt.out;
    echo["seed"] = opt.seed;
    echo["count"] = opt.count;
    echo["draws"] = opt.draws;
    echo["world"] = confmask::detail::world_config_to_json(world);
    detail::echo_config(out, echo);

    std::cout << "wrote " << opt.count << " pairs (" << opt.draws
              << " draws each) to " << opt.out << "\n";
    return 0;
}

// ---- score ----

struct ScoreOptions {
    std::string dataset;
    std::string out;
    int draws = 8;
    std::string kernel = "box:2";
    double post_blur = 2.0; // 0 disables the post blur
};

inline int run_score(const ScoreOptions& opt) {
    const DatasetManifest m = load_manifest((fs::path(opt.dataset) / "manifest.json").string());
    const ScoreConfig cfg = detail::score_config_from_flags(opt.draws, opt.kernel,
                                                            opt.post_blur);
    if (cfg.num_draws > m.draws_per_pair)
        throw std::runtime_error("score: dataset has " + std::to_string(m.draws_per_pair) +
                                 " draws per pair, --draws asks for " +
                                 std::to_string(cfg.num_draws));

    const fs::path out(opt.out);
    detail::ensure_dir(out);

    std::vector<LabImage> draws(static_cast<std::size_t>(cfg.num_draws));
    for (int i = 0; i < m.count; ++i) {
        const std::string stem = pair_stem(i);
        for (int d = 0; d < cfg.num_draws; ++d) {
            const fs::path p =
                fs::path(opt.dataset) / "draws" / (stem + "." + draw_suffix(d) + ".png");
            draws[static_cast<std::size_t>(d)] = srgb_to_lab_normalized(load_png(p.string()));
        }
        const ScoreMap sigma = compute_score(draws, cfg);
        save_floatmap(sigma, (out / (stem + ".sigma.cfm")).string());
    }

    ordered_json echo;
    echo["command"] = "score";
    echo["dataset"] = opt.dataset;
    echo["out"] = opt.out;
    echo["score_config"] = confmask::detail::score_config_to_json(cfg);
    detail::echo_config(out, echo);

    std::cout << "scored " << m.count << " pairs into " << opt.out << "\n";
    return 0;
}

// ---- fidelity ----

struct FidelityOptions {
    std::string dataset;
    std::string out;
    std::string metric = "pointwise";
    std::string kernel = "box:2"; // used by --metric neighborhood
    std::string annotations;      // used by --metric semantic
};

inline int run_fidelity(const FidelityOptions& opt) {
    const DatasetManifest m = load_manifest((fs::path(opt.dataset) / "manifest.json").string());
    const FidelityMetricSpec spec = detail::metric_from_flags(opt.metric, opt.kernel);
    const bool semantic = spec.kind == FidelityMetricSpec::Kind::semantic;
    if (semantic && opt.annotations.empty())
        throw std::runtime_error("fidelity: --metric semantic requires --annotations DIR "
                                 "of binary per-pair images");

    const fs::path out(opt.out);
    detail::ensure_dir(out);

    for (int i = 0; i < m.count; ++i) {
        const std::string stem = pair_stem(i);
        FidelityMap d;
        if (semantic) {
            const fs::path p = fs::path(opt.annotations) / (stem + ".png");
            d = d_semantic(load_png(p.string()));
        } else {
            const LabImage y = srgb_to_lab_normalized(
                load_png((fs::path(opt.dataset) / "pairs" / (stem + ".y.png")).string()));
            const LabImage pred = srgb_to_lab_normalized(
                load_png((fs::path(opt.dataset) / "pairs" / (stem + ".pred.png")).string()));
            d = compute_fidelity(y, pred, spec);
        }
        save_floatmap(d, (out / (stem + ".d.cfm")).string());
    }

    ordered_json echo;
    echo["command"] = "fidelity";
    echo["dataset"] = opt.dataset;
    echo["out"] = opt.out;
    echo["metric"] = confmask::detail::metric_spec_to_json(spec);
    if (semantic) echo["annotations"] = opt.annotations;
    detail::echo_config(out, echo);

    std::cout << "computed fidelity for " << m.count << " pairs into " << opt.out << "\n";
    return 0;
}

// ---- calibrate ----

struct CalibrateOptions {
    std::string scores;
    std::string fidelity;
    std::string out;
    double alpha = 0.1;
    std::string mode = "conservative";
    bool bruteforce = false;
    bool verify = false;
    bool allow_extended_alpha = false;
    std::string timestamp; // record's created_at; wall clock when empty
};

/// Loads matched sigma/fidelity map pairs from two command output
/// directories, by shared file stem.
inline std::vector<CalibrationPair> load_calibration_pairs(const fs::path& scores_dir,
                                                           const fs::path& fidelity_dir) {
    const auto names = detail::list_with_suffix(scores_dir, ".sigma.cfm");
    if (names.empty())
        throw std::runtime_error("no .sigma.cfm files in " + scores_dir.string());
    std::vector<CalibrationPair> pairs;
    pairs.reserve(names.size());
    for (const std::string& name : names) {
        const std::string stem = name.substr(0, name.size() - std::strlen(".sigma.cfm"));
        const fs::path d_path = fidelity_dir / (stem + ".d.cfm");
        if (!fs::exists(d_path))
            throw std::runtime_error("missing fidelity map " + d_path.string() + " for " +
                                     name);
        CalibrationPair p;
        p.score = ScoreMap::from_planar(load_floatmap((scores_dir / name).string()));
        p.fidelity = FidelityMap::from_planar(load_floatmap(d_path.string()));
        p.validate();
        pairs.push_back(std::move(p));
    }
    return pairs;
}

inline int run_calibrate(const CalibrateOptions& opt) {
    const fs::path scores_dir(opt.scores), fidelity_dir(opt.fidelity);
    const auto pairs = load_calibration_pairs(scores_dir, fidelity_dir);
    const CalibrationMode mode = parse_mode(opt.mode);

    // The score and fidelity runs echoed their resolved configs; the record
    // carries them so a mask produced later can be traced to its estimator.
    const ordered_json score_echo = detail::load_config_echo(scores_dir);
    const ordered_json fidelity_echo = detail::load_config_echo(fidelity_dir);
    const ScoreConfig score_cfg =
        confmask::detail::score_config_from_json(score_echo.at("score_config"));
    const FidelityMetricSpec metric =
        confmask::detail::metric_spec_from_json(fidelity_echo.at("metric"));

    const Threshold dp = calibrate_dp(pairs, opt.alpha, mode, opt.allow_extended_alpha);
    const Threshold bf = opt.bruteforce || opt.verify
                             ? calibrate_bruteforce(pairs, opt.alpha, mode,
                                                    opt.allow_extended_alpha)
                             : dp;
    if (opt.verify && !(dp == bf)) {
        std::cerr << "verify FAILED: sweep threshold " << format_threshold(dp)
                  << " != brute-force threshold " << format_threshold(bf) << "\n";
        return 1;
    }
    const Threshold t = opt.bruteforce ? bf : dp;
    const double risk = empirical_risk(pairs, t);

    CalibrationRecord rec;
    rec.alpha = opt.alpha;
    rec.threshold = t;
    rec.n = static_cast<int>(pairs.size());
    rec.mode = mode;
    rec.metric = metric;
    rec.score_config = score_cfg;
    rec.created_at = opt.timestamp.empty() ? current_utc_timestamp() : opt.timestamp;

    const fs::path out(opt.out);
    detail::ensure_dir(out);
    save_record(rec, (out / "record.json").string());

    ordered_json echo;
    echo["command"] = "calibrate";
    echo["scores"] = opt.scores;
    echo["fidelity"] = opt.fidelity;
    echo["out"] = opt.out;
    echo["alpha"] = opt.alpha;
    echo["mode"] = mode_name(mode);
    echo["bruteforce"] = opt.bruteforce;
    echo["allow_extended_alpha"] = opt.allow_extended_alpha;
    detail::echo_config(out, echo);

    std::cout << "t_alpha = " << format_threshold(t) << "\n"
              << "n = " << rec.n << "\n"
              << "empirical risk at t_alpha = " << format_double(risk) << "\n";
    if (opt.verify) std::cout << "verify OK: sweep and brute-force thresholds agree\n";
    return 0;
}

// ---- mask ----

struct MaskOptions {
    std::string record;
    std::string sigma;
    std::string prediction;
    std::string out;
};

inline int run_mask(const MaskOptions& opt) {
    const CalibrationRecord rec = load_record(opt.record);
    const ScoreMap sigma = ScoreMap::from_planar(load_floatmap(opt.sigma));
    const PlanarImage pred = load_png(opt.prediction);
    if (pred.width() != sigma.width() || pred.height() != sigma.height())
        throw std::runtime_error("mask: prediction is " + std::to_string(pred.width()) + "x" +
                                 std::to_string(pred.height()) + " but sigma map is " +
                                 std::to_string(sigma.width()) + "x" +
                                 std::to_string(sigma.height()));

    const BinaryMask mask = make_mask(sigma, rec.threshold);
    const fs::path out(opt.out);
    detail::ensure_dir(out);
    save_mask_png(mask, (out / "mask.png").string());
    save_png(render_overlay(pred, mask), (out / "overlay.png").string(), 8);

    ordered_json echo;
    echo["command"] = "mask";
    echo["record"] = opt.record;
    echo["sigma"] = opt.sigma;
    echo["prediction"] = opt.prediction;
    echo["out"] = opt.out;
    echo["threshold"] = confmask::detail::threshold_to_json(rec.threshold);
    detail::echo_config(out, echo);

    const MaskStats stats = mask_stats(mask);
    std::cout << "mask size (mistrust fraction) = " << format_double(stats.mistrust_fraction)
              << "\n";
    return 0;
}

// ---- evaluate ----

struct EvaluateOptions {
    std::string record;
    std::string dataset;
    std::string scores;
    std::string fidelity;
    std::string out;
};

inline int run_evaluate(const EvaluateOptions& opt) {
    const CalibrationRecord rec = load_record(opt.record);
    const DatasetManifest m = load_manifest((fs::path(opt.dataset) / "manifest.json").string());
    if (m.count < 1) throw std::runtime_error("evaluate: dataset has no pairs");

    const fs::path out(opt.out);
    detail::ensure_dir(out);
    std::ofstream csv(out / "evaluation.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("evaluate: cannot write evaluation.csv");
    csv << "image_id,alpha,mode,fidelity_error,masked_psnr,trusted_fraction,"
           "mistrust_fraction\n";

    double sum_fe = 0.0, sum_trusted = 0.0, sum_mistrust = 0.0, sum_psnr = 0.0;
    int finite_psnr = 0;
    for (int i = 0; i < m.count; ++i) {
        const std::string stem = pair_stem(i);
        const ScoreMap sigma = ScoreMap::from_planar(
            load_floatmap((fs::path(opt.scores) / (stem + ".sigma.cfm")).string()));
        const FidelityMap d = FidelityMap::from_planar(
            load_floatmap((fs::path(opt.fidelity) / (stem + ".d.cfm")).string()));
        const LabImage y = srgb_to_lab_normalized(
            load_png((fs::path(opt.dataset) / "pairs" / (stem + ".y.png")).string()));
        const LabImage pred = srgb_to_lab_normalized(
            load_png((fs::path(opt.dataset) / "pairs" / (stem + ".pred.png")).string()));

        const BinaryMask mask = make_mask(sigma, rec.threshold);
        const EvalReport rep = evaluate_mask(y, pred, d, mask);
        csv << stem << ',' << format_double(rec.alpha) << ',' << mode_name(rec.mode) << ','
            << format_double(rep.fidelity_error) << ',' << format_double(rep.masked_psnr)
            << ',' << format_double(rep.trusted_fraction) << ','
            << format_double(rep.mistrust_fraction) << '\n';
        sum_fe += rep.fidelity_error;
        sum_trusted += rep.trusted_fraction;
        sum_mistrust += rep.mistrust_fraction;
        if (std::isfinite(rep.masked_psnr)) {
            sum_psnr += rep.masked_psnr;
            ++finite_psnr;
        }
    }
    const double mean_fe = sum_fe / m.count;
    const double mean_psnr = finite_psnr > 0
                                 ? sum_psnr / finite_psnr
                                 : std::numeric_limits<double>::quiet_NaN();
    const double mean_mistrust = sum_mistrust / m.count;
    csv << "aggregate," << format_double(rec.alpha) << ',' << mode_name(rec.mode) << ','
        << format_double(mean_fe) << ',' << format_double(mean_psnr) << ','
        << format_double(sum_trusted / m.count) << ',' << format_double(mean_mistrust)
        << '\n';
    if (!csv) throw std::runtime_error("evaluate: write failed for evaluation.csv");

    ordered_json echo;
    echo["command"] = "evaluate";
    echo["record"] = opt.record;
    echo["dataset"] = opt.dataset;
    echo["scores"] = opt.scores;
    echo["fidelity"] = opt.fidelity;
    echo["out"] = opt.out;
    detail::echo_config(out, echo);

    std::cout << "evaluated " << m.count << " pairs\n"
              << "mean fidelity_error = " << format_double(mean_fe) << "\n"
              << "mean mask size (mistrust fraction) = " << format_double(mean_mistrust)
              << "\n";
    return 0;
}

// ---- overlay ----

struct OverlayOptions {
    std::string mask;
    std::string prediction;
    std::string out;
};

inline int run_overlay(const OverlayOptions& opt) {
    const BinaryMask mask = load_mask_png(opt.mask);
    const PlanarImage pred = load_png(opt.prediction);
    const fs::path out(opt.out);
    detail::ensure_dir(out);
    save_png(render_overlay(pred, mask), (out / "overlay.png").string(), 8);

    ordered_json echo;
    echo["command"] = "overlay";
    echo["mask"] = opt.mask;
    echo["prediction"] = opt.prediction;
    echo["out"] = opt.out;
    detail::echo_config(out, echo);

    std::cout << "wrote overlay.png to " << opt.out << "\n";
    return 0;
}

// ---- simulate ----

struct SimulateCommonOptions {
    std::uint64_t seed = 0;
    bool seed_given = false;
    int trials = 500;
    std::string out;
    std::string mode = "conservative";
    std::string metric = "pointwise";
    int draws = 8;
    std::string kernel = "box:2";
    double post_blur = 2.0;
};

namespace detail {

inline ExperimentConfig experiment_config_from(const SimulateCommonOptions& c) {
    if (!c.seed_given)
        throw std::runtime_error("simulate: --seed is required (bound checks must be "
                                 "reproducible)");
    ExperimentConfig cfg;
    cfg.world.seed = c.seed;
    cfg.score = score_config_from_flags(c.draws, c.kernel, c.post_blur);
    cfg.metric = metric_from_flags(c.metric, c.kernel);
    cfg.mode = parse_mode(c.mode);
    if (cfg.metric.kind == FidelityMetricSpec::Kind::semantic)
        throw std::runtime_error("simulate: the synthetic world has no semantic "
                                 "annotations; use --metric pointwise or neighborhood");
    return cfg;
}

inline ordered_json simulate_params_json(const SimulateCommonOptions& c,
                                         const ExperimentConfig& cfg) {
    ordered_json p;
    p["seed"] = c.seed;
    p["trials"] = c.trials;
    p["world"] = confmask::detail::world_config_to_json(cfg.world);
    p["score_config"] = confmask::detail::score_config_to_json(cfg.score);
    p["metric"] = confmask::detail::metric_spec_to_json(cfg.metric);
    p["mode"] = mode_name(cfg.mode);
    return p;
}

inline void print_aggregate(const AggregateResult& a, const char* bound_sense) {
    std::cout << a.statistic << " @ alpha=" << format_double(a.alpha)
              << ": mean = " << format_double(a.mean) << " (SE " << format_double(a.se)
              << ", " << a.trials << " trials";
    if (a.skipped > 0) std::cout << ", " << a.skipped << " skipped";
    std::cout << "), bound " << bound_sense << " " << format_double(a.bound) << " -> "
              << verdict_name(a.verdict) << "\n";
}

inline int finish_simulate(const fs::path& out, const ordered_json& summary,
                           Verdict verdict) {
    write_summary_json((out / "summary.json").string(), summary);
    std::cout << "verdict: " << verdict_name(verdict) << "\n";
    return verdict_exit_code(verdict);
}

} // namespace detail

struct SimulateGuaranteeOptions {
    SimulateCommonOptions common;
    int n = 50;
    double alpha = 0.1;
};

inline int run_simulate_guarantee(const SimulateGuaranteeOptions& opt) {
    const ExperimentConfig cfg = detail::experiment_config_from(opt.common);
    const GuaranteeResult res = run_guarantee(cfg, opt.n, opt.alpha, opt.common.trials);

    const fs::path out(opt.common.out);
    detail::ensure_dir(out);
    write_trials_csv((out / "trials.csv").string(), res.rows);

    ordered_json params = detail::simulate_params_json(opt.common, cfg);
    params["n"] = opt.n;
    params["alpha"] = opt.alpha;
    ordered_json summary;
    summary["experiment"] = "guarantee";
    summary["params"] = params;
    summary["results"] = ordered_json::array({confmask::detail::aggregate_to_json(res.aggregate)});
    summary["degenerate_trials"] = res.degenerate_trials;
    summary["calibration_risk_ok"] = res.calibration_risk_ok;
    summary["max_calibration_risk"] = std::isnan(res.max_calibration_risk)
                                          ? ordered_json(nullptr)
                                          : ordered_json(res.max_calibration_risk);
    summary["verdict"] = verdict_name(res.verdict);
    summary["exit_code"] = verdict_exit_code(res.verdict);

    ordered_json echo;
    echo["command"] = "simulate guarantee";
    echo["params"] = params;
    detail::echo_config(out, echo);

    detail::print_aggregate(res.aggregate, "<=");
    if (res.degenerate_trials > 0)
        std::cout << "degenerate trials (constant score, nonzero fidelity): "
                  << res.degenerate_trials << "\n";
    return detail::finish_simulate(out, summary, res.verdict);
}

struct SimulatePsnrOptions {
    SimulateCommonOptions common;
    int n = 50;
    double alpha = 0.1;
};

inline int run_simulate_psnr_bound(const SimulatePsnrOptions& opt) {
    const ExperimentConfig cfg = detail::experiment_config_from(opt.common);
    const PsnrBoundResult res = run_psnr_bound(cfg, opt.n, opt.alpha, opt.common.trials);

    const fs::path out(opt.common.out);
    detail::ensure_dir(out);
    write_trials_csv((out / "trials.csv").string(), res.rows);

    ordered_json params = detail::simulate_params_json(opt.common, cfg);
    params["n"] = opt.n;
    params["alpha"] = opt.alpha;
    ordered_json summary;
    summary["experiment"] = "psnr-bound";
    summary["params"] = params;
    summary["results"] = ordered_json::array({confmask::detail::aggregate_to_json(res.aggregate)});
    summary["degenerate_trials"] = res.degenerate_trials;
    summary["verdict"] = verdict_name(res.verdict);
    summary["exit_code"] = verdict_exit_code(res.verdict);

    ordered_json echo;
    echo["command"] = "simulate psnr-bound";
    echo["params"] = params;
    detail::echo_config(out, echo);

    detail::print_aggregate(res.aggregate, ">=");
    return detail::finish_simulate(out, summary, res.verdict);
}

struct SimulateLeakageOptions {
    SimulateCommonOptions common;
    int n_new = 9;
    int n_leaked = 10;
    double alpha = 0.1;
};

inline int run_simulate_leakage(const SimulateLeakageOptions& opt) {
    const ExperimentConfig cfg = detail::experiment_config_from(opt.common);
    const LeakageResult res =
        run_leakage(cfg, opt.n_new, opt.n_leaked, opt.alpha, opt.common.trials);

    const fs::path out(opt.common.out);
    detail::ensure_dir(out);
    write_trials_csv((out / "trials.csv").string(), res.rows);

    ordered_json params = detail::simulate_params_json(opt.common, cfg);
    params["n_new"] = opt.n_new;
    params["n_leaked"] = opt.n_leaked;
    params["alpha"] = opt.alpha;
    params["bound_factor"] = res.bound_factor;
    ordered_json summary;
    summary["experiment"] = "leakage";
    summary["params"] = params;
    summary["results"] = ordered_json::array({confmask::detail::aggregate_to_json(res.aggregate)});
    summary["degenerate_trials"] = res.degenerate_trials;
    summary["verdict"] = verdict_name(res.verdict);
    summary["exit_code"] = verdict_exit_code(res.verdict);

    ordered_json echo;
    echo["command"] = "simulate leakage";
    echo["params"] = params;
    detail::echo_config(out, echo);

    std::cout << "bound = " << format_double(res.aggregate.bound) << " (alpha "
              << format_double(opt.alpha) << " x (n_new+n_leaked+1)/(n_new+1) = "
              << format_double(res.bound_factor) << ")\n";
    detail::print_aggregate(res.aggregate, "<=");
    return detail::finish_simulate(out, summary, res.verdict);
}

struct SimulateSweepOptions {
    SimulateCommonOptions common;
    int n = 50;
    std::vector<double> alphas = {0.02, 0.05, 0.1, 0.2, 0.35, 0.5};
};

inline int run_simulate_alpha_sweep(const SimulateSweepOptions& opt) {
    const ExperimentConfig cfg = detail::experiment_config_from(opt.common);
    const AlphaSweepResult res = run_alpha_sweep(cfg, opt.n, opt.alphas, opt.common.trials);

    const fs::path out(opt.common.out);
    detail::ensure_dir(out);
    write_trials_csv((out / "trials.csv").string(), res.rows);

    ordered_json params = detail::simulate_params_json(opt.common, cfg);
    params["n"] = opt.n;
    params["alphas"] = opt.alphas;
    ordered_json summary;
    summary["experiment"] = "alpha-sweep";
    summary["params"] = params;
    ordered_json points = ordered_json::array();
    for (const AlphaSweepPoint& p : res.points) {
        ordered_json jp;
        jp["alpha"] = p.alpha;
        jp["fidelity"] = confmask::detail::aggregate_to_json(p.fidelity);
        jp["mean_mistrust"] = p.mean_mistrust;
        jp["se_mistrust"] = p.se_mistrust;
        points.push_back(std::move(jp));
    }
    summary["results"] = std::move(points);
    summary["mistrust_monotone"] = res.mistrust_monotone;
    summary["degenerate_trials"] = res.degenerate_trials;
    summary["verdict"] = verdict_name(res.verdict);
    summary["exit_code"] = verdict_exit_code(res.verdict);

    ordered_json echo;
    echo["command"] = "simulate alpha-sweep";
    echo["params"] = params;
    detail::echo_config(out, echo);

    for (const AlphaSweepPoint& p : res.points) {
        detail::print_aggregate(p.fidelity, "<=");
        std::cout << "  mean mistrust_fraction = " << format_double(p.mean_mistrust)
                  << " (SE " << format_double(p.se_mistrust) << ")\n";
    }
    std::cout << "mistrust monotone nonincreasing in alpha: "
              << (res.mistrust_monotone ? "yes" : "NO") << "\n";
    return detail::finish_simulate(out, summary, res.verdict);
}

struct SimulateCounterexampleOptions {
    std::uint64_t seed = 0;
    bool seed_given = false;
    int trials = 2000;
    std::string out;
    double tau = 0.5;
    double epsilon = 0.01;
    double alpha = 0.2;
    double delta = -1.0; // tau/2 unless given
    int n = 20;
};

inline int run_simulate_counterexample(const SimulateCounterexampleOptions& opt) {
    if (!opt.seed_given)
        throw std::runtime_error("simulate: --seed is required (bound checks must be "
                                 "reproducible)");
    const double delta = opt.delta < 0.0 ? opt.tau / 2.0 : opt.delta;
    const CounterexampleResult res = run_prior_counterexample(
        opt.tau, opt.epsilon, opt.alpha, delta, opt.n, opt.trials, opt.seed);

    const fs::path out(opt.out);
    detail::ensure_dir(out);
    write_counterexample_csv((out / "trials.csv").string(), res.rows);

    ordered_json params;
    params["seed"] = opt.seed;
    params["trials"] = opt.trials;
    params["tau"] = opt.tau;
    params["epsilon"] = opt.epsilon;
    params["alpha"] = opt.alpha;
    params["delta"] = delta;
    params["n"] = opt.n;
    ordered_json summary;
    summary["experiment"] = "counterexample";
    summary["params"] = params;
    summary["results"] = ordered_json::array({confmask::detail::aggregate_to_json(res.prior),
                                              confmask::detail::aggregate_to_json(res.conformal)});
    summary["lambda_one_trials"] = res.lambda_one_trials;
    summary["verdict"] = verdict_name(res.verdict);
    summary["exit_code"] = verdict_exit_code(res.verdict);

    ordered_json echo;
    echo["command"] = "simulate counterexample";
    echo["params"] = params;
    detail::echo_config(out, echo);

    detail::print_aggregate(res.prior, "> (violation demonstrated when mean exceeds)");
    detail::print_aggregate(res.conformal, "<=");
    return detail::finish_simulate(out, summary, res.verdict);
}

// ---- argv wiring ----

inline int run(int argc, char** argv) {
    CLI::App app{"conformal confidence masks for stochastic image restoration"};
    app.require_subcommand(1);

    GenerateOptions gen;
    auto* c_gen = app.add_subcommand("generate-synthetic",
                                     "write a synthetic dataset directory");
    c_gen->add_option("--out", gen.out, "output directory")->required();
    c_gen->add_option("--seed", gen.seed, "world seed")->required();
    c_gen->add_option("--count", gen.count, "number of pairs")->capture_default_str();
    c_gen->add_option("--draws", gen.draws, "model draws per pair")->capture_default_str();
    c_gen->add_option("--lr-width", gen.lr_width, "low-res width")->capture_default_str();
    c_gen->add_option("--lr-height", gen.lr_height, "low-res height")->capture_default_str();
    c_gen->add_option("--upscale", gen.upscale, "upscale factor (2 or 4)")
        ->capture_default_str();

    ScoreOptions score;
    auto* c_score = app.add_subcommand("score", "compute sigma maps from model draws");
    c_score->add_option("--dataset", score.dataset, "dataset directory")->required();
    c_score->add_option("--out", score.out, "output directory")->required();
    c_score->add_option("--draws", score.draws, "draws per pair to use")
        ->capture_default_str();
    c_score->add_option("--kernel", score.kernel, "smoothing kernel (box:R or gaussian:S)")
        ->capture_default_str();
    c_score->add_option("--post-blur", score.post_blur,
                        "post-blur Gaussian sigma in px (0 disables)")
        ->capture_default_str();

    FidelityOptions fid;
    auto* c_fid = app.add_subcommand("fidelity", "compute fidelity maps against ground truth");
    c_fid->add_option("--dataset", fid.dataset, "dataset directory")->required();
    c_fid->add_option("--out", fid.out, "output directory")->required();
    c_fid->add_option("--metric", fid.metric, "pointwise, neighborhood, or semantic")
        ->capture_default_str();
    c_fid->add_option("--kernel", fid.kernel, "neighborhood kernel (box:R or gaussian:S)")
        ->capture_default_str();
    c_fid->add_option("--annotations", fid.annotations,
                      "binary annotation directory (semantic metric)");

    CalibrateOptions cal;
    auto* c_cal = app.add_subcommand("calibrate", "choose the trust threshold");
    c_cal->add_option("--scores", cal.scores, "score command output directory")->required();
    c_cal->add_option("--fidelity", cal.fidelity, "fidelity command output directory")
        ->required();
    c_cal->add_option("--out", cal.out, "output directory")->required();
    c_cal->add_option("--alpha", cal.alpha, "risk level")->required();
    c_cal->add_option("--mode", cal.mode, "conservative or sup_faithful")->capture_default_str();
    c_cal->add_flag("--bruteforce", cal.bruteforce,
                    "use the exhaustive threshold search instead of the sweep");
    c_cal->add_flag("--verify", cal.verify,
                    "run both searches and fail unless they agree exactly");
    c_cal->add_flag("--allow-extended-alpha", cal.allow_extended_alpha,
                    "accept alpha up to the metric's upper bound of 3");
    c_cal->add_option("--timestamp", cal.timestamp,
                      "created_at for the record (default: current UTC time)");

    MaskOptions mask;
    auto* c_mask = app.add_subcommand("mask", "apply a record to a sigma map");
    c_mask->add_option("--record", mask.record, "calibration record JSON")->required();
    c_mask->add_option("--sigma", mask.sigma, "sigma map (.cfm)")->required();
    c_mask->add_option("--prediction", mask.prediction, "prediction PNG")->required();
    c_mask->add_option("--out", mask.out, "output directory")->required();

    EvaluateOptions ev;
    auto* c_ev = app.add_subcommand("evaluate", "per-image mask metrics against ground truth");
    c_ev->add_option("--record", ev.record, "calibration record JSON")->required();
    c_ev->add_option("--dataset", ev.dataset, "dataset directory")->required();
    c_ev->add_option("--scores", ev.scores, "score command output directory")->required();
    c_ev->add_option("--fidelity", ev.fidelity, "fidelity command output directory")
        ->required();
    c_ev->add_option("--out", ev.out, "output directory")->required();

    OverlayOptions ov;
    auto* c_ov = app.add_subcommand("overlay", "render a red overlay from a mask PNG");
    c_ov->add_option("--mask", ov.mask, "mask PNG (255=trusted)")->required();
    c_ov->add_option("--prediction", ov.prediction, "prediction PNG")->required();
    c_ov->add_option("--out", ov.out, "output directory")->required();

    auto* c_sim = app.add_subcommand("simulate", "Monte Carlo bound checks");
    c_sim->require_subcommand(1);
    const auto add_common = [](CLI::App* sub, SimulateCommonOptions& c) {
        sub->add_option("--seed", c.seed, "master seed (required)")
            ->each([&c](const std::string&) { c.seed_given = true; });
        sub->add_option("--trials", c.trials, "Monte Carlo trials")->capture_default_str();
        sub->add_option("--out", c.out, "output directory")->required();
        sub->add_option("--mode", c.mode, "conservative or sup_faithful")->capture_default_str();
        sub->add_option("--metric", c.metric, "pointwise or neighborhood")
            ->capture_default_str();
        sub->add_option("--draws", c.draws, "model draws per score map")
            ->capture_default_str();
        sub->add_option("--kernel", c.kernel, "smoothing kernel (box:R or gaussian:S)")
            ->capture_default_str();
        sub->add_option("--post-blur", c.post_blur,
                        "post-blur Gaussian sigma in px (0 disables)")
            ->capture_default_str();
    };

    SimulateGuaranteeOptions sg;
    auto* c_sg = c_sim->add_subcommand("guarantee", "held-out fidelity-error bound");
    add_common(c_sg, sg.common);
    c_sg->add_option("--n", sg.n, "calibration set size")->capture_default_str();
    c_sg->add_option("--alpha", sg.alpha, "risk level")->capture_default_str();

    SimulatePsnrOptions sp;
    auto* c_sp = c_sim->add_subcommand("psnr-bound", "masked PSNR lower bound");
    add_common(c_sp, sp.common);
    c_sp->add_option("--n", sp.n, "calibration set size")->capture_default_str();
    c_sp->add_option("--alpha", sp.alpha, "risk level")->capture_default_str();

    SimulateLeakageOptions sl;
    auto* c_sl = c_sim->add_subcommand("leakage", "guarantee under calibration leakage");
    add_common(c_sl, sl.common);
    c_sl->add_option("--n-new", sl.n_new, "fresh calibration pairs")->capture_default_str();
    c_sl->add_option("--n-leaked", sl.n_leaked, "leaked (overfit) pairs")
        ->capture_default_str();
    c_sl->add_option("--alpha", sl.alpha, "risk level")->capture_default_str();

    SimulateSweepOptions ss;
    auto* c_ss = c_sim->add_subcommand("alpha-sweep", "mask size and risk across alpha");
    add_common(c_ss, ss.common);
    c_ss->add_option("--n", ss.n, "calibration set size")->capture_default_str();
    c_ss->add_option("--alphas", ss.alphas, "ascending alpha grid")
        ->capture_default_str()
        ->expected(2, 32);

    SimulateCounterexampleOptions sc;
    auto* c_sc = c_sim->add_subcommand("counterexample",
                                       "published prior method failing its guarantee");
    c_sc->add_option("--seed", sc.seed, "master seed (required)")
        ->each([&sc](const std::string&) { sc.seed_given = true; });
    c_sc->add_option("--trials", sc.trials, "Monte Carlo trials")->capture_default_str();
    c_sc->add_option("--out", sc.out, "output directory")->required();
    c_sc->add_option("--tau", sc.tau, "zero-error probability")->capture_default_str();
    c_sc->add_option("--epsilon", sc.epsilon, "mask denominator offset")
        ->capture_default_str();
    c_sc->add_option("--alpha", sc.alpha, "risk level")->capture_default_str();
    c_sc->add_option("--delta", sc.delta, "quantile level (default tau/2)");
    c_sc->add_option("--n", sc.n, "calibration samples per trial")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*c_gen) return run_generate(gen);
        if (*c_score) return run_score(score);
        if (*c_fid) return run_fidelity(fid);
        if (*c_cal) return run_calibrate(cal);
        if (*c_mask) return run_mask(mask);
        if (*c_ev) return run_evaluate(ev);
        if (*c_ov) return run_overlay(ov);
        if (*c_sim) {
            if (*c_sg) return run_simulate_guarantee(sg);
            if (*c_sp) return run_simulate_psnr_bound(sp);
            if (*c_sl) return run_simulate_leakage(sl);
            if (*c_ss) return run_simulate_alpha_sweep(ss);
            if (*c_sc) return run_simulate_counterexample(sc);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}

} // namespace confmask::cli
