// selftest.hpp - fast invariant suite behind the `selftest` subcommand:
// model identities, Jacobian and BPTT gradient checks against central finite
// differences, and a small oracle-recovery sweep.  The mutation switches
// deliberately corrupt one side of a check so tests can confirm the checks
// actually bite.

#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "molli/io.hpp"
#include "molli/lmfit.hpp"
#include "molli/rnn.hpp"
#include "molli/synth.hpp"

namespace molli {

struct SelftestCheck {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

struct SelftestOptions {
    std::uint64_t seed = 20240915;
    bool flip_jacobian_sign = false; // mutation: negate the analytic dT1* column
    GradCheckMutation bptt_mutation = GradCheckMutation::none;
};

namespace selftest_detail {

// Long-form loss terms, evaluated from full model expressions instead of the
// simplified right-hand sides; the identity check compares the two routes.
struct LongLoss {
    double a, b, t1s;
};
inline LongLoss long_form(const ModelParams& pred, const ModelParams& truth, double t) {
    const double ref = truth.a - truth.b * std::exp(-t / truth.t1_star);
    LongLoss l;
    l.a = (pred.a - truth.b * std::exp(-t / truth.t1_star)) - ref;
    l.b = (truth.a - pred.b * std::exp(-t / truth.t1_star)) - ref;
    l.t1s = (truth.a - truth.b * std::exp(-t / pred.t1_star)) - ref;
    return l;
}

template <class Fn>
SelftestCheck timed(const std::string& name, Fn&& fn) {
    SelftestCheck c;
    c.name = name;
    const auto start = std::chrono::steady_clock::now();
    fn(c);
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return c;
}

} // namespace selftest_detail

inline std::vector<SelftestCheck> run_selftest(const SelftestOptions& opts = {}) {
    using selftest_detail::timed;
    std::vector<SelftestCheck> checks;
    const ParamRanges ranges;

    checks.push_back(timed("model magnitude/signed consistency", [&](SelftestCheck& c) {
        Rng rng = Rng(opts.seed).child("identity");
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            const ModelParams p = sample_params(rng, ranges);
            const double t = rng.uniform(0.0, 8000.0);
            worst = std::max(worst,
                             std::abs(molli_signal(p, t) - std::abs(signed_signal(p, t))));
        }
        c.pass = worst == 0.0;
        c.detail = "max |y - |s|| = " + fmt_double(worst);
    }));

    checks.push_back(timed("loss-term algebraic identities", [&](SelftestCheck& c) {
        Rng rng = Rng(opts.seed).child("loss-identity");
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            const ModelParams pred = sample_params(rng, ranges);
            const ModelParams truth = sample_params(rng, ranges);
            std::vector<double> times(8);
            for (auto& t : times) t = rng.uniform(0.0, 8000.0);
            std::sort(times.begin(), times.end());
            const LossSeries s = loss_series(pred, truth, times);
            for (std::size_t k = 0; k < times.size(); ++k) {
                const auto l = selftest_detail::long_form(pred, truth, times[k]);
                worst = std::max({worst, std::abs(l.a - s.loss_a),
                                  std::abs(l.b - s.loss_b[k]),
                                  std::abs(l.t1s - s.loss_t1s[k])});
            }
        }
        c.pass = worst < 1e-12;
        c.detail = "max |long - simplified| = " + fmt_double(worst) + " (< 1e-12)";
    }));

    checks.push_back(timed("LM Jacobian vs central differences", [&](SelftestCheck& c) {
        Rng rng = Rng(opts.seed).child("jacobian");
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            const ModelParams p = sample_params(rng, ranges);
            const double t = rng.uniform(0.0, 8000.0);
            auto analytic = model_jacobian_row(p, t);
            if (opts.flip_jacobian_sign)
                analytic[2] = -analytic[2];
            const double steps[3] = {1e-6 * std::max(1.0, std::abs(p.a)),
                                     1e-6 * std::max(1.0, std::abs(p.b)),
                                     1e-6 * std::max(1.0, std::abs(p.t1_star))};
            for (int u = 0; u < 3; ++u) {
                ModelParams hi = p, lo = p;
                (u == 0 ? hi.a : u == 1 ? hi.b : hi.t1_star) += steps[u];
                (u == 0 ? lo.a : u == 1 ? lo.b : lo.t1_star) -= steps[u];
                const double fd =
                    (signed_signal(hi, t) - signed_signal(lo, t)) / (2.0 * steps[u]);
                const double denom = std::max({std::abs(analytic[u]), std::abs(fd), 1e-9});
                worst = std::max(worst, std::abs(analytic[u] - fd) / denom);
            }
        }
        c.pass = worst < 1e-6;
        c.detail = "max relative error = " + fmt_double(worst) + " (< 1e-6)";
    }));

    checks.push_back(timed("BPTT gradient vs central differences", [&](SelftestCheck& c) {
        RnnConfig cfg;
        cfg.hidden_units = 16;
        const NormSpec norm;
        const double worst =
            grad_check(cfg, norm, Rng(opts.seed).child("gradcheck"), 5, opts.bptt_mutation);
        c.pass = worst < 1e-5;
        c.detail = "max relative error = " + fmt_double(worst) + " (< 1e-5)";
    }));

    checks.push_back(timed("oracle parameter recovery (100 curves)", [&](SelftestCheck& c) {
        Rng rng = Rng(opts.seed).child("oracle");
        const BatchSpec spec;
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            Rng item = rng.child(static_cast<std::uint64_t>(i));
            const TiSchedule sched = sample_schedule(item, spec.scheme, spec.base_tis, spec.rr);
            const ModelParams truth = sample_params(item, spec.ranges);
            SignalCurve curve;
            curve.times = sched.effective_tis;
            for (double t : curve.times)
                curve.values.push_back(molli_signal(truth, t));
            std::vector<double> signed_vals;
            for (double t : curve.times)
                signed_vals.push_back(signed_signal(truth, t));
            const FitResult r =
                lm_fit_signed(curve.times, signed_vals, init_guess(curve), FitOptions{});
            worst = std::max({worst, std::abs(r.params.a - truth.a) / truth.a,
                              std::abs(r.params.b - truth.b) / truth.b,
                              std::abs(r.params.t1_star - truth.t1_star) / truth.t1_star});
        }
        c.pass = worst < 1e-4;
        c.detail = "max relative parameter error = " + fmt_double(worst) + " (< 1e-4)";
    }));

    return checks;
}

} // namespace molli
