#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "confmask/cli.hpp"

using namespace confmask;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::current_path() / "tmp_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

/// Runs the CLI in-process with captured stdout/stderr.
CliResult run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> storage;
    storage.reserve(args.size() + 1);
    storage.emplace_back("confmask");
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    argv.reserve(storage.size());
    for (std::string& s : storage) argv.push_back(s.data());

    std::ostringstream cap_out, cap_err;
    std::streambuf* old_out = std::cout.rdbuf(cap_out.rdbuf());
    std::streambuf* old_err = std::cerr.rdbuf(cap_err.rdbuf());
    CliResult r;
    try {
        r.code = cli::run(static_cast<int>(argv.size()), argv.data());
    } catch (...) {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
        throw;
    }
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    r.out = cap_out.str();
    r.err = cap_err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int count_regular_files(const fs::path& dir) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) ++n;
    return n;
}

} // namespace

TEST_CASE("generate-synthetic writes a reproducible dataset layout") {
    const fs::path root = fresh_dir("generate");
    const fs::path a = root / "a";
    const fs::path b = root / "b";
    const auto gen_args = [](const fs::path& out) {
        return std::vector<std::string>{"generate-synthetic", "--out",      out.string(),
                                        "--seed",             "11",        "--count",
                                        "3",                  "--draws",   "2",
                                        "--lr-width",         "8",         "--lr-height",
                                        "8"};
    };

    const CliResult ra = run_cli(gen_args(a));
    REQUIRE(ra.code == 0);
    CHECK_THAT(ra.out, ContainsSubstring("wrote 3 pairs (2 draws each)"));

    CHECK(fs::exists(a / "manifest.json"));
    CHECK(fs::exists(a / "config.json"));
    CHECK(count_regular_files(a / "pairs") == 9); // x, y, pred per pair
    CHECK(count_regular_files(a / "draws") == 6);
    CHECK(fs::exists(a / "draws" / "pair-0002.draw-01.png"));

    const cli::DatasetManifest m = cli::load_manifest((a / "manifest.json").string());
    CHECK(m.seed == 11);
    CHECK(m.count == 3);
    CHECK(m.draws_per_pair == 2);
    CHECK(m.prediction_draw_index == 2);
    CHECK(m.world.lr_width == 8);
    CHECK(m.world.lr_height == 8);
    CHECK(m.world.upscale_factor == 2);

    const PlanarImage x0 = load_png((a / "pairs" / "pair-0000.x.png").string());
    const PlanarImage y0 = load_png((a / "pairs" / "pair-0000.y.png").string());
    const PlanarImage p0 = load_png((a / "pairs" / "pair-0000.pred.png").string());
    CHECK(x0.width() == 8);
    CHECK(x0.height() == 8);
    CHECK(y0.width() == 16);
    CHECK(y0.height() == 16);
    CHECK(p0.width() == 16);
    CHECK(p0.height() == 16);

    // Same seed into a fresh directory: every artifact byte-identical.
    const CliResult rb = run_cli(gen_args(b));
    REQUIRE(rb.code == 0);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(slurp(a / "pairs" / "pair-0001.y.png") == slurp(b / "pairs" / "pair-0001.y.png"));
    CHECK(slurp(a / "pairs" / "pair-0000.pred.png") ==
          slurp(b / "pairs" / "pair-0000.pred.png"));
    CHECK(slurp(a / "draws" / "pair-0000.draw-00.png") ==
          slurp(b / "draws" / "pair-0000.draw-00.png"));
}

TEST_CASE("generate-synthetic with --count 0 writes only the manifest") {
    const fs::path root = fresh_dir("empty");
    const fs::path ds = root / "ds";
    REQUIRE(run_cli({"generate-synthetic", "--out", ds.string(), "--seed", "1", "--count",
                     "0", "--draws", "4"})
                .code == 0);
    CHECK(fs::exists(ds / "manifest.json"));
    CHECK_FALSE(fs::exists(ds / "pairs"));
    CHECK_FALSE(fs::exists(ds / "draws"));

    const fs::path s = root / "scores";
    const CliResult rs =
        run_cli({"score", "--dataset", ds.string(), "--out", s.string(), "--draws", "4"});
    REQUIRE(rs.code == 0);
    CHECK_THAT(rs.out, ContainsSubstring("scored 0 pairs"));

    const CliResult rc = run_cli({"calibrate", "--scores", s.string(), "--fidelity",
                                  s.string(), "--out", (root / "cal").string(), "--alpha",
                                  "0.5"});
    CHECK(rc.code == 1);
    CHECK_THAT(rc.err, ContainsSubstring("no .sigma.cfm files"));
}

TEST_CASE("full pipeline from dataset to evaluation") {
    const fs::path root = fresh_dir("pipeline");
    const fs::path ds = root / "ds";
    const fs::path scores = root / "scores";
    const fs::path fid = root / "fid";
    REQUIRE(run_cli({"generate-synthetic", "--out", ds.string(), "--seed", "11", "--count",
                     "6", "--draws", "4", "--lr-width", "8", "--lr-height", "8"})
                .code == 0);

    const CliResult rs = run_cli({"score", "--dataset", ds.string(), "--out",
                                  scores.string(), "--draws", "4", "--kernel", "box:1",
                                  "--post-blur", "0"});
    REQUIRE(rs.code == 0);
    CHECK_THAT(rs.out, ContainsSubstring("scored 6 pairs"));
    for (int i = 0; i < 6; ++i)
        CHECK(fs::exists(scores / (cli::pair_stem(i) + ".sigma.cfm")));

    const CliResult rf = run_cli(
        {"fidelity", "--dataset", ds.string(), "--out", fid.string(), "--metric",
         "pointwise"});
    REQUIRE(rf.code == 0);
    CHECK_THAT(rf.out, ContainsSubstring("computed fidelity for 6 pairs"));
    for (int i = 0; i < 6; ++i) CHECK(fs::exists(fid / (cli::pair_stem(i) + ".d.cfm")));

    // alpha below the 3/(n+1) floor: the threshold is -inf whatever the data.
    const fs::path cal = root / "cal";
    const auto cal_args = [&](const fs::path& out, const char* alpha) {
        return std::vector<std::string>{
            "calibrate", "--scores", scores.string(), "--fidelity",  fid.string(),
            "--out",     out.string(), "--alpha",     alpha,         "--verify",
            "--timestamp", "2024-06-01T00:00:00Z"};
    };
    const CliResult rc = run_cli(cal_args(cal, "0.4"));
    REQUIRE(rc.code == 0);
    CHECK_THAT(rc.out, ContainsSubstring("t_alpha = -inf"));
    CHECK_THAT(rc.out, ContainsSubstring("n = 6"));
    CHECK_THAT(rc.out, ContainsSubstring("verify OK: sweep and brute-force thresholds agree"));

    const std::string rec_text = slurp(cal / "record.json");
    CHECK_THAT(rec_text, ContainsSubstring("\"-inf\""));
    CHECK_THAT(rec_text, ContainsSubstring("2024-06-01T00:00:00Z"));
    const CalibrationRecord rec = load_record((cal / "record.json").string());
    CHECK(rec.alpha == 0.4);
    CHECK(rec.n == 6);
    CHECK(rec.mode == CalibrationMode::conservative);
    CHECK(rec.threshold.is_neg_inf());
    CHECK(rec.score_config.num_draws == 4);
    CHECK(rec.score_config.kernel == KernelSpec::parse("box:1"));
    CHECK_FALSE(rec.score_config.post_blur_sigma.has_value());
    CHECK(rec.metric.kind == FidelityMetricSpec::Kind::pointwise);

    // Same inputs and pinned timestamp: byte-identical record.
    const fs::path cal_repeat = root / "cal-repeat";
    REQUIRE(run_cli(cal_args(cal_repeat, "0.4")).code == 0);
    CHECK(slurp(cal / "record.json") == slurp(cal_repeat / "record.json"));

    // A -inf record masks every pixel as untrusted.
    const fs::path maskdir = root / "mask";
    const CliResult rm = run_cli({"mask", "--record", (cal / "record.json").string(),
                                  "--sigma", (scores / "pair-0000.sigma.cfm").string(),
                                  "--prediction",
                                  (ds / "pairs" / "pair-0000.pred.png").string(), "--out",
                                  maskdir.string()});
    REQUIRE(rm.code == 0);
    CHECK_THAT(rm.out, ContainsSubstring("mask size (mistrust fraction) = 1"));
    const BinaryMask empty_mask = load_mask_png((maskdir / "mask.png").string());
    CHECK(mask_stats(empty_mask).trusted_fraction == 0.0);
    CHECK(fs::exists(maskdir / "overlay.png"));

    // The standalone overlay command reproduces the mask command's render.
    const fs::path ovdir = root / "overlay";
    const CliResult ro = run_cli({"overlay", "--mask", (maskdir / "mask.png").string(),
                                  "--prediction",
                                  (ds / "pairs" / "pair-0000.pred.png").string(), "--out",
                                  ovdir.string()});
    REQUIRE(ro.code == 0);
    CHECK_THAT(ro.out, ContainsSubstring("wrote overlay.png"));
    CHECK(slurp(maskdir / "overlay.png") == slurp(ovdir / "overlay.png"));

    // Under the all-untrusted mask every evaluation number is forced, so the
    // whole CSV is pinned byte for byte.
    const fs::path ev = root / "eval";
    const CliResult re = run_cli({"evaluate", "--record", (cal / "record.json").string(),
                                  "--dataset", ds.string(), "--scores", scores.string(),
                                  "--fidelity", fid.string(), "--out", ev.string()});
    REQUIRE(re.code == 0);
    CHECK_THAT(re.out, ContainsSubstring("evaluated 6 pairs"));
    CHECK_THAT(re.out, ContainsSubstring("mean fidelity_error = 0"));
    CHECK_THAT(re.out, ContainsSubstring("mean mask size (mistrust fraction) = 1"));
    std::string expected =
        "image_id,alpha,mode,fidelity_error,masked_psnr,trusted_fraction,"
        "mistrust_fraction\n";
    for (int i = 0; i < 6; ++i)
        expected += cli::pair_stem(i) + ",0.4,conservative,0,NA,0,1\n";
    expected += "aggregate,0.4,conservative,0,NA,0,1\n";
    CHECK(slurp(ev / "evaluation.csv") == expected);

    // Extended alpha of 3 always admits full trust: pointwise errors cannot
    // exceed 1 per image, so the total risk (3 + 6 sups) / 7 stays below 3.
    const fs::path cal_wide = root / "cal-wide";
    auto wide = cal_args(cal_wide, "3");
    wide.push_back("--allow-extended-alpha");
    const CliResult rw = run_cli(wide);
    REQUIRE(rw.code == 0);
    CHECK_THAT(rw.out, ContainsSubstring("t_alpha = +inf"));
    CHECK_THAT(slurp(cal_wide / "record.json"), ContainsSubstring("\"+inf\""));

    const fs::path fulldir = root / "mask-full";
    const CliResult rm2 = run_cli({"mask", "--record", (cal_wide / "record.json").string(),
                                   "--sigma", (scores / "pair-0000.sigma.cfm").string(),
                                   "--prediction",
                                   (ds / "pairs" / "pair-0000.pred.png").string(), "--out",
                                   fulldir.string()});
    REQUIRE(rm2.code == 0);
    CHECK_THAT(rm2.out, ContainsSubstring("mask size (mistrust fraction) = 0"));
    const BinaryMask full_mask = load_mask_png((fulldir / "mask.png").string());
    CHECK(mask_stats(full_mask).trusted_fraction == 1.0);
}

TEST_CASE("commands reject inconsistent inputs") {
    const fs::path root = fresh_dir("errors");
    const fs::path ds = root / "ds";
    REQUIRE(run_cli({"generate-synthetic", "--out", ds.string(), "--seed", "3", "--count",
                     "1", "--draws", "2", "--lr-width", "4", "--lr-height", "4"})
                .code == 0);

    // More draws than the dataset holds.
    const CliResult r1 = run_cli({"score", "--dataset", ds.string(), "--out",
                                  (root / "s1").string(), "--draws", "3"});
    CHECK(r1.code == 1);
    CHECK_THAT(r1.err, ContainsSubstring("dataset has 2 draws per pair"));

    // The semantic metric needs an annotation directory.
    const CliResult r2 = run_cli({"fidelity", "--dataset", ds.string(), "--out",
                                  (root / "f1").string(), "--metric", "semantic"});
    CHECK(r2.code == 1);
    CHECK_THAT(r2.err, ContainsSubstring("--annotations"));

    // Upscale factors other than 2 and 4 are rejected.
    const CliResult r3 = run_cli({"generate-synthetic", "--out", (root / "bad").string(),
                                  "--seed", "1", "--upscale", "3"});
    CHECK(r3.code == 1);
    CHECK_THAT(r3.err, ContainsSubstring("error:"));

    const fs::path s = root / "s";
    const fs::path f = root / "f";
    REQUIRE(run_cli({"score", "--dataset", ds.string(), "--out", s.string(), "--draws",
                     "2", "--kernel", "box:1"})
                .code == 0);
    REQUIRE(run_cli({"fidelity", "--dataset", ds.string(), "--out", f.string()}).code == 0);

    // Calibrate refuses a score directory without its config echo.
    const fs::path bare = root / "bare";
    fs::create_directories(bare);
    fs::copy_file(s / "pair-0000.sigma.cfm", bare / "pair-0000.sigma.cfm");
    const CliResult r4 = run_cli({"calibrate", "--scores", bare.string(), "--fidelity",
                                  f.string(), "--out", (root / "cal").string(), "--alpha",
                                  "0.5"});
    CHECK(r4.code == 1);
    CHECK_THAT(r4.err, ContainsSubstring("config.json"));

    // The prediction raster must match the sigma map's dimensions.
    const fs::path cal = root / "cal-ok";
    REQUIRE(run_cli({"calibrate", "--scores", s.string(), "--fidelity", f.string(),
                     "--out", cal.string(), "--alpha", "0.4"})
                .code == 0);
    const CliResult r5 = run_cli({"mask", "--record", (cal / "record.json").string(),
                                  "--sigma", (s / "pair-0000.sigma.cfm").string(),
                                  "--prediction",
                                  (ds / "pairs" / "pair-0000.x.png").string(), "--out",
                                  (root / "m").string()});
    CHECK(r5.code == 1);
    CHECK_THAT(r5.err, ContainsSubstring("but sigma map is"));
}

TEST_CASE("simulate requires an explicit seed") {
    const fs::path root = fresh_dir("sim-seed");
    const CliResult r1 = run_cli({"simulate", "guarantee", "--out", (root / "g").string(),
                                  "--trials", "1"});
    CHECK(r1.code == 1);
    CHECK_THAT(r1.err, ContainsSubstring("--seed is required"));

    const CliResult r2 =
        run_cli({"simulate", "counterexample", "--out", (root / "c").string()});
    CHECK(r2.code == 1);
    CHECK_THAT(r2.err, ContainsSubstring("--seed is required"));

    // The synthetic world carries no annotations for the semantic metric.
    const CliResult r3 = run_cli({"simulate", "guarantee", "--seed", "1", "--out",
                                  (root / "g2").string(), "--metric", "semantic",
                                  "--trials", "1"});
    CHECK(r3.code == 1);
    CHECK_THAT(r3.err, ContainsSubstring("semantic"));
}

TEST_CASE("simulate guarantee reruns are byte-identical") {
    const fs::path root = fresh_dir("sim-repeat");
    const auto sim_args = [](const fs::path& out) {
        return std::vector<std::string>{
            "simulate", "guarantee", "--seed",   "0",          "--trials",    "2",
            "--out",    out.string(), "--n",     "3",          "--alpha",     "0.5",
            "--draws",  "3",          "--kernel", "box:1",     "--post-blur", "0"};
    };
    const fs::path a = root / "a";
    const fs::path b = root / "b";

    // n=3 puts the base risk at 3/4 > alpha, so every trial calibrates to
    // -inf, the held-out error is identically zero, and the verdict is a
    // deterministic pass.
    const CliResult ra = run_cli(sim_args(a));
    REQUIRE(ra.code == 0);
    CHECK_THAT(ra.out, ContainsSubstring("verdict: pass"));

    const auto summary = nlohmann::json::parse(slurp(a / "summary.json"));
    CHECK(summary.at("experiment") == "guarantee");
    CHECK(summary.at("params").at("seed") == 0);
    CHECK(summary.at("params").at("n") == 3);
    CHECK(summary.at("results").at(0).at("mean") == 0.0);
    CHECK(summary.at("degenerate_trials") == 0);
    CHECK(summary.at("max_calibration_risk").is_null());
    CHECK(summary.at("verdict") == "pass");
    CHECK(summary.at("exit_code") == 0);

    std::istringstream csv(slurp(a / "trials.csv"));
    int lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == 3); // header plus one row per trial

    const CliResult rb = run_cli(sim_args(b));
    REQUIRE(rb.code == 0);
    CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
    CHECK(slurp(a / "trials.csv") == slurp(b / "trials.csv"));
    CHECK(ra.out == rb.out);
}

TEST_CASE("malformed invocations exit nonzero") {
    CHECK(run_cli({}).code != 0);            // a subcommand is required
    CHECK(run_cli({"frobnicate"}).code != 0);
    CHECK(run_cli({"generate-synthetic", "--out", "x"}).code != 0); // missing --seed
    CHECK(run_cli({"calibrate", "--scores", "a", "--fidelity", "b", "--out", "c"}).code !=
          0); // missing --alpha
    CHECK(run_cli({"simulate", "alpha-sweep", "--seed", "1", "--out", "x", "--alphas",
                   "0.1"})
              .code != 0); // the grid needs at least two points
}
