#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "confmask/calibrate.hpp"
#include "confmask/fidelity.hpp"
#include "confmask/kernel.hpp"
#include "confmask/score.hpp"

namespace confmask {

inline constexpr int kRecordFormatVersion = 1;

/// Identifies the exact color convention score/fidelity maps were computed
/// under. A record made under one convention must never drive masks for maps
/// made under another, so the tag travels with the record.
inline constexpr const char* kLabNormalizationTag = "srgb-d65-rowsum-lab/l100-ab255/v1";

/// Everything needed to reapply a calibrated threshold later without
/// guessing: the threshold itself plus the full recipe (metric, score
/// estimator, color convention) and provenance (n, alpha, mode, timestamp).
struct CalibrationRecord {
    int format_version = kRecordFormatVersion;
    double alpha = 0.1;
    Threshold threshold;
    int n = 0;
    CalibrationMode mode = CalibrationMode::conservative;
    FidelityMetricSpec metric;
    ScoreConfig score_config;
    std::string lab_normalization = kLabNormalizationTag;
    std::string created_at; // ISO 8601 UTC

    void validate() const {
        if (n < 1) throw std::invalid_argument("CalibrationRecord: n must be >= 1");
        // The calibrator accepts alpha up to the hard risk ceiling of 3 when
        // extended budgets are explicitly enabled, so the record must too.
        if (!(alpha > 0.0 && alpha <= 3.0))
            throw std::invalid_argument("CalibrationRecord: alpha must be in (0,3]");
        // Only one color convention is implemented; a record tagged with any
        // other must never be applied here.
        if (lab_normalization != kLabNormalizationTag)
            throw std::invalid_argument("CalibrationRecord: unsupported color convention '" +
                                        lab_normalization + "'");
        metric.validate();
        score_config.validate();
    }

    bool operator==(const CalibrationRecord&) const = default;
};

inline std::string current_utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

// ---- JSON encoding ----
// Key names are part of the on-disk contract; see the README for the schema.

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json kernel_spec_to_json(const KernelSpec& k) {
    ordered_json j;
    j["kind"] = k.kind == KernelSpec::Kind::box ? "box" : "gaussian";
    j["radius"] = k.resolved_radius();
    if (k.kind == KernelSpec::Kind::gaussian) j["sigma"] = k.sigma;
    return j;
}

inline KernelSpec kernel_spec_from_json(const ordered_json& j) {
    KernelSpec k;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "box") {
        k.kind = KernelSpec::Kind::box;
    } else if (kind == "gaussian") {
        k.kind = KernelSpec::Kind::gaussian;
        k.sigma = j.at("sigma").get<double>();
        if (!(k.sigma > 0.0)) throw std::runtime_error("kernel spec: sigma must be > 0");
    } else {
        throw std::runtime_error("kernel spec: unknown kind '" + kind + "'");
    }
    k.radius = j.at("radius").get<int>();
    if (k.radius < 0 || (k.kind == KernelSpec::Kind::gaussian && k.radius < 1))
        throw std::runtime_error("kernel spec: bad radius");
    return k;
}

inline ordered_json metric_spec_to_json(const FidelityMetricSpec& m) {
    ordered_json j;
    j["kind"] = FidelityMetricSpec::kind_name(m.kind);
    if (m.kernel) j["kernel"] = kernel_spec_to_json(*m.kernel);
    return j;
}

inline FidelityMetricSpec metric_spec_from_json(const ordered_json& j) {
    FidelityMetricSpec m;
    m.kind = FidelityMetricSpec::parse_kind(j.at("kind").get<std::string>());
    if (j.contains("kernel")) m.kernel = kernel_spec_from_json(j.at("kernel"));
    m.validate();
    return m;
}

inline ordered_json score_config_to_json(const ScoreConfig& c) {
    ordered_json j;
    j["num_draws"] = c.num_draws;
    j["kernel"] = kernel_spec_to_json(c.kernel);
    if (c.post_blur_sigma)
        j["post_blur_sigma"] = *c.post_blur_sigma;
    else
        j["post_blur_sigma"] = nullptr;
    return j;
}

inline ScoreConfig score_config_from_json(const ordered_json& j) {
    ScoreConfig c;
    c.num_draws = j.at("num_draws").get<int>();
    c.kernel = kernel_spec_from_json(j.at("kernel"));
    if (j.at("post_blur_sigma").is_null())
        c.post_blur_sigma.reset();
    else
        c.post_blur_sigma = j.at("post_blur_sigma").get<double>();
    c.validate();
    return c;
}

inline ordered_json threshold_to_json(const Threshold& t) {
    if (t.is_pos_inf()) return "+inf";
    if (t.is_neg_inf()) return "-inf";
    return t.value;
}

inline Threshold threshold_from_json(const ordered_json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "+inf") return Threshold::positive_infinity();
        if (s == "-inf") return Threshold::negative_infinity();
        throw std::runtime_error("threshold: bad string '" + s + "' (expected +inf or -inf)");
    }
    if (!j.is_number()) throw std::runtime_error("threshold: expected number or +/-inf string");
    return Threshold::finite(j.get<double>());
}

} // namespace detail

inline void save_record(const CalibrationRecord& rec, const std::string& path) {
    rec.validate();
    detail::ordered_json j;
    j["format_version"] = rec.format_version;
    j["alpha"] = rec.alpha;
    j["threshold"] = detail::threshold_to_json(rec.threshold);
    j["n"] = rec.n;
    j["mode"] = mode_name(rec.mode);
    j["metric"] = detail::metric_spec_to_json(rec.metric);
    j["score_config"] = detail::score_config_to_json(rec.score_config);
    j["lab_normalization"] = rec.lab_normalization;
    j["created_at"] = rec.created_at;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_record: cannot open " + path);
    f << j.dump(2) << '\n';
    if (!f) throw std::runtime_error("save_record: write failed for " + path);
}

inline CalibrationRecord load_record(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_record: cannot open " + path);
    detail::ordered_json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("load_record: " + path + " is not valid JSON: " + e.what());
    }
    const int version = j.at("format_version").get<int>();
    if (version != kRecordFormatVersion)
        throw std::runtime_error("load_record: " + path + " has format version " +
                                 std::to_string(version) + ", this build reads version " +
                                 std::to_string(kRecordFormatVersion));
    CalibrationRecord rec;
    rec.format_version = version;
    rec.alpha = j.at("alpha").get<double>();
    rec.threshold = detail::threshold_from_json(j.at("threshold"));
    rec.n = j.at("n").get<int>();
    rec.mode = parse_mode(j.at("mode").get<std::string>());
    rec.metric = detail::metric_spec_from_json(j.at("metric"));
    rec.score_config = detail::score_config_from_json(j.at("score_config"));
    rec.lab_normalization = j.at("lab_normalization").get<std::string>();
    rec.created_at = j.at("created_at").get<std::string>();
    rec.validate();
    return rec;
}

} // namespace confmask
