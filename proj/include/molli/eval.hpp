// eval.hpp - error maps, region statistics, and the LM-vs-RNN comparison
// across corruption conditions.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "molli/errors.hpp"
#include "molli/image.hpp"
#include "molli/io.hpp"
#include "molli/lmfit.hpp"
#include "molli/motion.hpp"
#include "molli/phantom.hpp"
#include "molli/train.hpp"

namespace molli {

// Per-pixel |est - gt|; pixels with a zero/absent validity flag become NaN
// and are ignored by all statistics.
inline Grid<double> t1_error_map(const Grid<double>& est, const Grid<double>& gt,
                                 const Grid<double>* valid = nullptr) {
    if (!est.same_shape(gt.width, gt.height))
        throw DataError("t1_error_map: dimension mismatch");
    if (valid && !valid->same_shape(gt.width, gt.height))
        throw DataError("t1_error_map: validity mask dimension mismatch");
    Grid<double> err(est.width, est.height);
    for (std::size_t i = 0; i < err.data.size(); ++i) {
        if (valid && !((*valid).data[i] > 0.0)) {
            err.data[i] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        err.data[i] = std::abs(est.data[i] - gt.data[i]);
    }
    return err;
}

struct RegionStats {
    int pixels = 0;
    double mean = 0.0;
    double median = 0.0; // midpoint of the two central values for even counts
    double sd = 0.0;     // population convention
    double p95 = 0.0;    // nearest-rank
};

inline RegionStats region_stats(const Grid<double>& err, const Grid<std::uint8_t>& labels,
                                std::uint8_t region) {
    if (!err.same_shape(labels.width, labels.height))
        throw DataError("region_stats: label grid dimension mismatch");
    std::vector<double> vals;
    for (std::size_t i = 0; i < err.data.size(); ++i)
        if (labels.data[i] == region && std::isfinite(err.data[i]))
            vals.push_back(err.data[i]);
    if (vals.empty())
        throw DataError(std::string("region_stats: region '") + region_name(region) +
                        "' has no valid pixels");
    std::sort(vals.begin(), vals.end());
    RegionStats s;
    s.pixels = static_cast<int>(vals.size());
    double acc = 0.0;
    for (double v : vals) acc += v;
    s.mean = acc / static_cast<double>(vals.size());
    const std::size_t n = vals.size();
    s.median = (n % 2 == 1) ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    double var = 0.0;
    for (double v : vals) var += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(var / static_cast<double>(n));
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(n)));
    s.p95 = vals[std::min(n - 1, rank > 0 ? rank - 1 : 0)];
    return s;
}

inline Grid<double> ground_truth_t1(const ParamMaps& maps) {
    Grid<double> t1(maps.a.width, maps.a.height);
    for (std::size_t i = 0; i < t1.data.size(); ++i) {
        const ModelParams p{maps.a.data[i], maps.b.data[i], maps.t1_star.data[i]};
        t1.data[i] = apparent_to_true_t1(p);
    }
    return t1;
}

// --- the comparison pipeline -------------------------------------------------

inline const std::vector<std::string>& all_conditions() {
    static const std::vector<std::string> c = {"none",     "noise",      "motion-x",
                                               "motion-y", "motion-rot", "motion-all"};
    return c;
}

struct CompareOptions {
    std::vector<std::string> conditions = all_conditions();
    FitOptions fit;
    double noise_frac = 0.05;
    MotionSpec motion; // the full motion-all spec; partial conditions zero parts of it
    int threads = 1;
};

// One random image pair is drawn per run and shared across all motion
// conditions, so they corrupt the same frames.
inline MolliStack apply_condition(const MolliStack& base, const std::string& condition,
                                  const CompareOptions& opts,
                                  const std::vector<int>& motion_targets, const Rng& rng) {
    if (condition == "none")
        return base;
    if (condition == "noise") {
        return add_stack_noise(base, opts.noise_frac, rng.child("stack-noise"));
    }
    MotionSpec m = opts.motion;
    m.target_indices = motion_targets;
    if (condition == "motion-x") {
        m.rotation_deg = 0.0;
        m.ty_mm = 0.0;
    } else if (condition == "motion-y") {
        m.rotation_deg = 0.0;
        m.tx_mm = 0.0;
    } else if (condition == "motion-rot") {
        m.tx_mm = 0.0;
        m.ty_mm = 0.0;
    } else if (condition != "motion-all") {
        throw ConfigError("unknown condition '" + condition + "'");
    }
    Rng motion_rng = rng.child("motion");
    return apply_motion(base, m, motion_rng);
}

struct ErrorReport {
    std::string condition;
    std::string method; // "lm" or "rnn"
    std::map<std::string, RegionStats> regions;
    std::string maps_dir;
    std::string error; // empty on success
};

inline json to_report_json(const ErrorReport& r) {
    json j;
    j["condition"] = r.condition;
    j["method"] = r.method;
    j["maps_dir"] = r.maps_dir;
    if (!r.error.empty())
        j["error"] = r.error;
    json regions;
    for (const auto& [name, s] : r.regions)
        regions[name] = {{"pixels", s.pixels}, {"mean_ms", s.mean},
                         {"median_ms", s.median}, {"sd_ms", s.sd},
                         {"p95_ms", s.p95}};
    j["regions"] = regions;
    return j;
}

// Runs both reconstructions on every requested condition of the same base
// stack.  Per-condition failures are recorded in the report instead of
// aborting the remaining conditions.
inline std::vector<ErrorReport> compare_methods(const MolliStack& base,
                                                const RnnWeights& weights,
                                                const NormSpec& norm,
                                                const CompareOptions& opts,
                                                const std::filesystem::path& out_dir,
                                                const Rng& rng) {
    if (!base.ground_truth)
        throw DataError("compare_methods: base stack carries no ground truth");
    std::filesystem::create_directories(out_dir / "maps");
    const Grid<double> gt_t1 = ground_truth_t1(*base.ground_truth);
    const Grid<std::uint8_t>& labels = base.ground_truth->labels;

    // shared motion pair
    Rng pick = rng.child("motion-pair");
    const int n = static_cast<int>(base.images.size());
    const int first = static_cast<int>(pick.below(static_cast<std::uint64_t>(n)));
    int second = static_cast<int>(pick.below(static_cast<std::uint64_t>(n - 1)));
    if (second >= first)
        ++second;
    std::vector<int> motion_targets = {std::min(first, second), std::max(first, second)};

    std::vector<ErrorReport> reports;
    for (const auto& condition : opts.conditions) {
        MolliStack corrupted;
        bool have_stack = true;
        std::string stack_error;
        try {
            corrupted = apply_condition(base, condition, opts, motion_targets, rng);
        } catch (const std::exception& e) {
            have_stack = false;
            stack_error = e.what();
        }
        for (const std::string method : {"lm", "rnn"}) {
            ErrorReport rep;
            rep.condition = condition;
            rep.method = method;
            const std::string dir_name = condition + "_" + method;
            rep.maps_dir = (std::filesystem::path("maps") / dir_name).string();
            if (!have_stack) {
                rep.error = stack_error;
                reports.push_back(rep);
                continue;
            }
            try {
                MapSet maps = (method == "lm")
                                  ? fit_map(corrupted, opts.fit, opts.threads)
                                  : infer_map(weights, corrupted, norm, opts.threads);
                const Grid<double> err = t1_error_map(maps.t1, gt_t1, &maps.valid);
                rep.regions["myocardium"] = region_stats(err, labels, region_myocardium);
                rep.regions["blood"] = region_stats(err, labels, region_blood);

                const auto dir = out_dir / rep.maps_dir;
                write_maps(dir, maps);
                write_plane_f32(dir / "t1_err.f32", err);
                write_pgm(dir / "t1.pgm", maps.t1, 0.0, 2000.0);
                Grid<double> err_vis = err;
                for (auto& v : err_vis.data)
                    if (!std::isfinite(v)) v = 0.0;
                write_pgm(dir / "t1_err.pgm", err_vis, 0.0, 300.0);
            } catch (const std::exception& e) {
                rep.error = e.what();
            }
            reports.push_back(rep);
        }
    }
    return reports;
}

inline void write_summary_csv(const std::filesystem::path& path,
                              const std::vector<ErrorReport>& reports) {
    auto f = detail::open_out(path);
    f << "condition,method,region,pixels,mean_ms,median_ms,sd_ms,p95_ms\n";
    for (const auto& r : reports) {
        for (const auto& [region, s] : r.regions)
            f << r.condition << ',' << r.method << ',' << region << ',' << s.pixels << ','
              << fmt_double(s.mean) << ',' << fmt_double(s.median) << ','
              << fmt_double(s.sd) << ',' << fmt_double(s.p95) << '\n';
    }
}

} // namespace molli
