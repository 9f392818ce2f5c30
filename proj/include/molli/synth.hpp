// synth.hpp - synthetic training/test curve generation.
//
// Batches mix three perturbation classes in equal parts: clean model curves,
// curves with additive Gaussian noise (SD = 5% of A), and curves where two
// random points are scaled by a factor drawn from U[0.3, 1.5].

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "molli/errors.hpp"
#include "molli/rng.hpp"
#include "molli/schedule.hpp"
#include "molli/signal_model.hpp"

namespace molli {

enum class Perturbation { ideal = 0, noise = 1, outliers = 2 };

inline const char* to_string(Perturbation p) {
    switch (p) {
        case Perturbation::ideal: return "ideal";
        case Perturbation::noise: return "noise";
        case Perturbation::outliers: return "outliers";
    }
    return "?";
}

inline Perturbation perturbation_from_string(const std::string& s) {
    if (s == "ideal") return Perturbation::ideal;
    if (s == "noise") return Perturbation::noise;
    if (s == "outliers") return Perturbation::outliers;
    throw DataError("unknown perturbation class '" + s + "'");
}

struct ParamRanges {
    double a_min = 0.2, a_max = 1.0;         // equilibrium amplitude, a.u.
    double ratio_min = 1.3, ratio_max = 2.1; // b/a
    double t1s_min = 150.0, t1s_max = 1800.0; // apparent T1, ms

    void validate() const {
        if (!(a_min < a_max) || !(ratio_min < ratio_max) || !(t1s_min < t1s_max) ||
            a_min <= 0.0 || ratio_min <= 0.0 || t1s_min <= 0.0)
            throw ConfigError("parameter ranges: need 0 < min < max per parameter");
    }
};

// a and the ratio b/a are drawn independently so b >= a holds by range choice.
inline ModelParams sample_params(Rng& rng, const ParamRanges& r = {}) {
    ModelParams p;
    p.a = rng.uniform(r.a_min, r.a_max);
    p.b = p.a * rng.uniform(r.ratio_min, r.ratio_max);
    p.t1_star = rng.uniform(r.t1s_min, r.t1s_max);
    return p;
}

struct OutlierSpec {
    int count = 2;
    double factor_min = 0.3, factor_max = 1.5;
};

struct CurveGenOptions {
    double noise_frac = 0.05; // Gaussian SD as a fraction of A
    OutlierSpec outlier;
    bool clamp_negative = true; // magnitude data stays >= 0
};

inline SignalCurve gen_curve(const ModelParams& params, const TiSchedule& schedule,
                             Perturbation cls, Rng& rng,
                             const CurveGenOptions& opts = {}) {
    const std::size_t n = schedule.effective_tis.size();
    if (n < 4)
        throw DataError("gen_curve: schedule has fewer than 4 inversion times");

    SignalCurve c;
    c.times = schedule.effective_tis;
    c.values.resize(n);
    for (std::size_t k = 0; k < n; ++k)
        c.values[k] = molli_signal(params, c.times[k]);

    switch (cls) {
        case Perturbation::ideal:
            break;
        case Perturbation::noise: {
            const double sd = opts.noise_frac * params.a;
            for (auto& v : c.values) {
                v += rng.gaussian(0.0, sd);
                if (opts.clamp_negative && v < 0.0)
                    v = 0.0;
            }
            break;
        }
        case Perturbation::outliers: {
            // exactly `count` distinct indices get multiplied
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            shuffle(idx, rng);
            const int m = std::min<int>(opts.outlier.count, static_cast<int>(n));
            for (int i = 0; i < m; ++i)
                c.values[idx[static_cast<std::size_t>(i)]] *=
                    rng.uniform(opts.outlier.factor_min, opts.outlier.factor_max);
            break;
        }
    }
    return c;
}

struct CurveSample {
    SignalCurve curve;
    ModelParams truth;
    TiSchedule schedule;
    Perturbation cls = Perturbation::ideal;
};

struct BatchSpec {
    ParamRanges ranges;
    MolliScheme scheme = default_scheme();
    std::vector<double> base_tis = default_base_tis();
    RrModel rr;
    CurveGenOptions gen;
};

// n/3 curves of each class, one independent R-R sequence and parameter draw
// per curve, order shuffled.  Item i derives its own stream from rng, so
// generation parallelizes without changing the output.
inline std::vector<CurveSample> gen_batch(int n, const Rng& rng, const BatchSpec& spec = {}) {
    if (n <= 0 || n % 3 != 0)
        throw DataError("gen_batch: batch size must be a positive multiple of 3 "
                        "(got " + std::to_string(n) + ")");
    spec.ranges.validate();

    std::vector<CurveSample> items(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng item_rng = rng.child(static_cast<std::uint64_t>(i));
        CurveSample& s = items[static_cast<std::size_t>(i)];
        s.cls = static_cast<Perturbation>(i % 3);
        s.schedule = sample_schedule(item_rng, spec.scheme, spec.base_tis, spec.rr);
        s.truth = sample_params(item_rng, spec.ranges);
        s.curve = gen_curve(s.truth, s.schedule, s.cls, item_rng, spec.gen);
    }
    Rng shuffle_rng = rng.child("shuffle");
    shuffle(items, shuffle_rng);
    return items;
}

} // namespace molli
