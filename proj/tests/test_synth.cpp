#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>

#include "molli/synth.hpp"

using namespace molli;

namespace {

// Kolmogorov-Smirnov distance against U[0,1]; critical value at 1% is
// 1.63/sqrt(n) for large n.
double ks_uniform(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double lo = static_cast<double>(i) / n;
        const double hi = static_cast<double>(i + 1) / n;
        d = std::max({d, std::abs(v[i] - lo), std::abs(v[i] - hi)});
    }
    return d;
}

TiSchedule constant_rr_schedule() {
    return make_ti_schedule(default_scheme(), default_base_tis(),
                            std::vector<double>(10, 1000.0));
}

} // namespace

TEST_CASE("degenerate ranges give back exactly those values") {
    ParamRanges r;
    r.a_min = 0.5;
    r.a_max = 0.5 + 1e-300;
    r.ratio_min = 2.0;
    r.ratio_max = 2.0 + 1e-300;
    r.t1s_min = 900.0;
    r.t1s_max = 900.0 + 1e-300;
    Rng rng(1);
    const ModelParams p = sample_params(rng, r);
    CHECK(p.a == Catch::Approx(0.5).margin(1e-12));
    CHECK(p.b == Catch::Approx(1.0).margin(1e-12));
    CHECK(p.t1_star == Catch::Approx(900.0).margin(1e-9));
}

TEST_CASE("default ranges imply T1 in [45, 1980] ms and pass a uniformity test") {
    Rng rng(42);
    const int n = 100000;
    std::vector<double> ua, ur, ut;
    ua.reserve(n);
    const ParamRanges r;
    double t1_min = 1e30, t1_max = -1e30;
    for (int i = 0; i < n; ++i) {
        const ModelParams p = sample_params(rng, r);
        REQUIRE(p.a >= r.a_min);
        REQUIRE(p.a <= r.a_max);
        const double ratio = p.b / p.a;
        REQUIRE(ratio >= r.ratio_min - 1e-12);
        REQUIRE(ratio <= r.ratio_max + 1e-12);
        REQUIRE(p.t1_star >= r.t1s_min);
        REQUIRE(p.t1_star <= r.t1s_max);
        const double t1 = apparent_to_true_t1(p);
        t1_min = std::min(t1_min, t1);
        t1_max = std::max(t1_max, t1);
        ua.push_back((p.a - r.a_min) / (r.a_max - r.a_min));
        ur.push_back((ratio - r.ratio_min) / (r.ratio_max - r.ratio_min));
        ut.push_back((p.t1_star - r.t1s_min) / (r.t1s_max - r.t1s_min));
    }
    CHECK(t1_min >= 45.0);
    CHECK(t1_max <= 1980.0);
    const double crit = 1.63 / std::sqrt(static_cast<double>(n));
    CHECK(ks_uniform(ua) < crit);
    CHECK(ks_uniform(ur) < crit);
    CHECK(ks_uniform(ut) < crit);
}

TEST_CASE("ideal curves reproduce the model exactly") {
    const auto sched = constant_rr_schedule();
    const ModelParams p{1.0, 2.0, 1000.0};
    Rng rng(5);
    const SignalCurve c = gen_curve(p, sched, Perturbation::ideal, rng);
    REQUIRE(c.values.size() == 8);
    for (std::size_t k = 0; k < c.values.size(); ++k)
        CHECK(c.values[k] == molli_signal(p, c.times[k]));
    // first TI is 100 ms here; a curve sampled at t=0 would start at |a-b|=1
    CHECK(molli_signal(p, 0.0) == 1.0);
}

TEST_CASE("noise with zero amplitude and outliers with unit factors are no-ops") {
    const auto sched = constant_rr_schedule();
    const ModelParams p{0.7, 1.2, 700.0};
    Rng rng(6);
    const SignalCurve ideal = gen_curve(p, sched, Perturbation::ideal, rng);

    CurveGenOptions zero_noise;
    zero_noise.noise_frac = 0.0;
    Rng rng2(7);
    const SignalCurve noisy = gen_curve(p, sched, Perturbation::noise, rng2, zero_noise);
    CHECK(noisy.values == ideal.values);

    CurveGenOptions unit_factor;
    unit_factor.outlier.factor_min = unit_factor.outlier.factor_max = 1.0;
    Rng rng3(8);
    const SignalCurve out = gen_curve(p, sched, Perturbation::outliers, rng3, unit_factor);
    for (std::size_t k = 0; k < out.values.size(); ++k)
        CHECK(out.values[k] == Catch::Approx(ideal.values[k]).epsilon(1e-15));
}

TEST_CASE("outlier curves differ from ideal in exactly two points") {
    const auto sched = constant_rr_schedule();
    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        Rng item = rng.child(static_cast<std::uint64_t>(i));
        const ModelParams p = sample_params(item);
        Rng gen_rng = item.child("gen");
        const SignalCurve ideal = gen_curve(p, sched, Perturbation::ideal, gen_rng);
        Rng gen_rng2 = item.child("gen"); // same stream: same outlier draws
        CurveGenOptions opts;
        opts.outlier.factor_max = 0.99; // keep factors away from exactly 1
        const SignalCurve out = gen_curve(p, sched, Perturbation::outliers, gen_rng2, opts);
        int n_diff = 0;
        for (std::size_t k = 0; k < out.values.size(); ++k)
            if (out.values[k] != ideal.values[k])
                ++n_diff;
        CHECK(n_diff == 2);
    }
}

TEST_CASE("noise statistics match the 5% of A recipe") {
    // clamping disabled so the raw Gaussian statistics are visible
    const auto sched = constant_rr_schedule();
    const ModelParams p{0.8, 1.5, 900.0};
    CurveGenOptions opts;
    opts.clamp_negative = false;
    Rng rng(10);
    const int n_curves = 10000;
    std::vector<double> residuals;
    residuals.reserve(n_curves * 8);
    const SignalCurve ideal = gen_curve(p, sched, Perturbation::ideal, rng);
    for (int i = 0; i < n_curves; ++i) {
        Rng item = rng.child(static_cast<std::uint64_t>(i));
        const SignalCurve noisy = gen_curve(p, sched, Perturbation::noise, item, opts);
        for (std::size_t k = 0; k < noisy.values.size(); ++k)
            residuals.push_back(noisy.values[k] - ideal.values[k]);
    }
    const double sd_expect = 0.05 * p.a;
    double mean = 0.0;
    for (double r : residuals) mean += r;
    mean /= static_cast<double>(residuals.size());
    double var = 0.0;
    for (double r : residuals) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / static_cast<double>(residuals.size()));
    CHECK(std::abs(mean) < 3.0 * sd_expect / std::sqrt(static_cast<double>(residuals.size())));
    CHECK(sd == Catch::Approx(sd_expect).epsilon(0.02));
}

TEST_CASE("noise clamping keeps magnitudes non-negative") {
    const auto sched = constant_rr_schedule();
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        Rng item = rng.child(static_cast<std::uint64_t>(i));
        const ModelParams p = sample_params(item);
        const SignalCurve c = gen_curve(p, sched, Perturbation::noise, item);
        for (double v : c.values)
            CHECK(v >= 0.0);
    }
}

TEST_CASE("short schedules are rejected") {
    const TiSchedule sched = make_ti_schedule(MolliScheme::parse("3"), {100.0},
                                              std::vector<double>(2, 1000.0));
    Rng rng(12);
    CHECK_THROWS_AS(gen_curve({1.0, 2.0, 1000.0}, sched, Perturbation::ideal, rng),
                    DataError);
}

TEST_CASE("batches are balanced, shuffled, and size-checked") {
    CHECK_THROWS_AS(gen_batch(65536, Rng(1)), DataError); // 2^16 not divisible by 3
    CHECK_THROWS_AS(gen_batch(2, Rng(1)), DataError);

    const auto tiny = gen_batch(3, Rng(2));
    std::map<Perturbation, int> tiny_counts;
    for (const auto& s : tiny) tiny_counts[s.cls]++;
    CHECK(tiny_counts[Perturbation::ideal] == 1);
    CHECK(tiny_counts[Perturbation::noise] == 1);
    CHECK(tiny_counts[Perturbation::outliers] == 1);

    const auto batch = gen_batch(999, Rng(3));
    std::map<Perturbation, int> counts;
    for (const auto& s : batch) counts[s.cls]++;
    CHECK(counts[Perturbation::ideal] == 333);
    CHECK(counts[Perturbation::noise] == 333);
    CHECK(counts[Perturbation::outliers] == 333);
}

TEST_CASE("batch generation is reproducible") {
    const auto a = gen_batch(99, Rng(77));
    const auto b = gen_batch(99, Rng(77));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].cls == b[i].cls);
        CHECK(a[i].curve.times == b[i].curve.times);
        CHECK(a[i].curve.values == b[i].curve.values);
        CHECK(a[i].truth.a == b[i].truth.a);
    }
    const auto c = gen_batch(99, Rng(78));
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size() && !any_diff; ++i)
        any_diff = a[i].curve.values != c[i].curve.values;
    CHECK(any_diff);
}
