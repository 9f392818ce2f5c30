// lmfit.hpp - Levenberg-Marquardt fitting of the recovery model with
// magnitude polarity restoration, plus the per-pixel map driver.
//
// The signed model a - b exp(-t/T1*) is linear in (a, b) and benign in T1*,
// so a damped Gauss-Newton with an analytic Jacobian converges in a handful
// of iterations.  Magnitude data lose the sign of early samples; the fitter
// re-runs with the first k samples negated (k = 0..n-2) and keeps the
// hypothesis with the smallest residual.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "molli/errors.hpp"
#include "molli/image.hpp"
#include "molli/signal_model.hpp"
#include "molli/threading.hpp"

namespace molli {

struct FitOptions {
    int max_iterations = 100;
    double cost_tolerance = 1e-12;  // relative cost decrease on accepted steps
    double param_tolerance = 1e-10; // relative step size on accepted steps
    double initial_damping = 1e-3;
    double damping_up = 10.0;
    double damping_down = 0.1;
    bool polarity_search = true;

    void validate() const {
        if (max_iterations < 1 || !(cost_tolerance > 0.0) || !(param_tolerance > 0.0) ||
            !(initial_damping > 0.0) || !(damping_up > 1.0) ||
            !(damping_down > 0.0) || !(damping_down < 1.0))
            throw ConfigError("fit options: need damping_up > 1 > damping_down > 0 "
                              "and positive tolerances");
    }
};

struct FitResult {
    ModelParams params;
    double t1 = 0.0;
    double residual_norm = std::numeric_limits<double>::infinity();
    int polarity_index = 0; // sign-restored leading points
    int iterations = 0;
    bool converged = false;
    bool plausible = false; // b >= a and t1 > 0
};

// d(signed_signal)/d(a, b, t1_star).
inline std::array<double, 3> model_jacobian_row(const ModelParams& p, double t) {
    const double e = std::exp(-t / p.t1_star);
    return {1.0, -e, -(p.b * t / (p.t1_star * p.t1_star)) * e};
}

namespace detail {

// 3x3 solve, Gaussian elimination with partial pivoting.
inline bool solve3(std::array<std::array<double, 3>, 3> m, std::array<double, 3> rhs,
                   std::array<double, 3>& x) {
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(m[r][col]) > std::abs(m[piv][col]))
                piv = r;
        if (std::abs(m[piv][col]) < 1e-300)
            return false;
        std::swap(m[col], m[piv]);
        std::swap(rhs[col], rhs[piv]);
        for (int r = col + 1; r < 3; ++r) {
            const double f = m[r][col] / m[col][col];
            for (int c = col; c < 3; ++c)
                m[r][c] -= f * m[col][c];
            rhs[r] -= f * rhs[col];
        }
    }
    for (int r = 2; r >= 0; --r) {
        double s = rhs[r];
        for (int c = r + 1; c < 3; ++c)
            s -= m[r][c] * x[c];
        x[r] = s / m[r][r];
    }
    return std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2]);
}

inline double sum_sq_residual(const std::vector<double>& t, const std::vector<double>& y,
                              const ModelParams& p) {
    double s = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const double r = y[k] - signed_signal(p, t[k]);
        s += r * r;
    }
    return s;
}

} // namespace detail

// Starting point from the curve itself: the latest sample approximates A,
// A plus the earliest sample approximates B, and the null-crossing location
// (interpolated around the magnitude minimum) pins T1* via
// t_null = T1* ln(B/A).
inline ModelParams init_guess(const SignalCurve& curve) {
    const auto& y = curve.values;
    const auto& t = curve.times;
    const std::size_t n = y.size();
    double maxy = 0.0;
    for (double v : y) maxy = std::max(maxy, v);
    if (!(maxy > 0.0))
        return {1e-3, 2e-3, 1000.0};

    const double a0 = y.back();
    if (a0 <= 1e-12)
        return {maxy, 2.0 * maxy, 1000.0};
    const double b0 = a0 + y.front();

    std::size_t m = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (y[i] < y[m]) m = i;
    double t_null_est = t[m];
    if (m > 0 && m + 1 < n && (y[m - 1] + y[m + 1]) > 0.0) {
        // chord through (t[m-1], -y[m-1]) and (t[m+1], +y[m+1])
        t_null_est = t[m - 1] + y[m - 1] * (t[m + 1] - t[m - 1]) / (y[m - 1] + y[m + 1]);
    }

    double t1s0 = 1000.0;
    const double ratio = b0 / a0;
    if (ratio > 1.0 + 1e-6)
        t1s0 = std::clamp(t_null_est / std::log(ratio), 100.0, 3000.0);
    return {a0, b0, t1s0};
}

// Damped Gauss-Newton on the signed model.  Rejected steps raise the
// damping, accepted steps lower it; positivity is kept by halving the step
// until all three parameters stay positive.
inline FitResult lm_fit_signed(const std::vector<double>& times,
                               const std::vector<double>& signed_values,
                               const ModelParams& init, const FitOptions& opts = {},
                               std::vector<double>* accepted_costs = nullptr) {
    opts.validate();
    if (times.size() != signed_values.size())
        throw DataError("lm_fit_signed: times/values length mismatch");
    if (times.size() < 4)
        throw DataError("lm_fit_signed: need at least 4 samples for a 3-parameter fit");
    if (!params_valid(init))
        throw DataError("lm_fit_signed: initial guess must be finite and positive");

    FitResult res;
    ModelParams p = init;
    double cost = detail::sum_sq_residual(times, signed_values, p);
    double lambda = opts.initial_damping;
    bool converged = false;
    if (accepted_costs)
        accepted_costs->push_back(cost);

    int iter = 0;
    while (iter < opts.max_iterations) {
        ++iter;
        std::array<std::array<double, 3>, 3> hess{};
        std::array<double, 3> grad{};
        for (std::size_t k = 0; k < times.size(); ++k) {
            const auto j = model_jacobian_row(p, times[k]);
            const double r = signed_values[k] - signed_signal(p, times[k]);
            for (int u = 0; u < 3; ++u) {
                grad[u] += j[u] * r;
                for (int v = 0; v < 3; ++v)
                    hess[u][v] += j[u] * j[v];
            }
        }

        auto damped = hess;
        for (int u = 0; u < 3; ++u)
            damped[u][u] += lambda * hess[u][u];
        std::array<double, 3> step{};
        bool ok = detail::solve3(damped, grad, step);

        if (ok) {
            // keep parameters positive by halving the step
            auto applied = [&](double scale) {
                return ModelParams{p.a + scale * step[0], p.b + scale * step[1],
                                   p.t1_star + scale * step[2]};
            };
            double scale = 1.0;
            int halvings = 0;
            while (halvings < 60) {
                const ModelParams q = applied(scale);
                if (q.a > 0.0 && q.b > 0.0 && q.t1_star > 0.0)
                    break;
                scale *= 0.5;
                ++halvings;
            }
            if (halvings >= 60)
                ok = false;
            else {
                const ModelParams q = applied(scale);
                const double new_cost = detail::sum_sq_residual(times, signed_values, q);
                if (std::isfinite(new_cost) && new_cost <= cost) {
                    const double rel_dec = (cost - new_cost) /
                                           std::max(cost, std::numeric_limits<double>::min());
                    const std::array<double, 3> cur{p.a, p.b, p.t1_star};
                    double rel_step = 0.0;
                    for (int u = 0; u < 3; ++u) {
                        const double base = std::max(std::abs(cur[u]), 1e-300);
                        rel_step = std::max(rel_step, std::abs(scale * step[u]) / base);
                    }
                    p = q;
                    cost = new_cost;
                    if (accepted_costs)
                        accepted_costs->push_back(cost);
                    lambda = std::max(lambda * opts.damping_down, 1e-12);
                    if (rel_dec < opts.cost_tolerance || rel_step < opts.param_tolerance) {
                        converged = true;
                        break;
                    }
                    continue;
                }
                ok = false;
            }
        }

        // rejected step (or singular normal equations): raise damping
        lambda *= opts.damping_up;
        if (lambda > 1e13)
            break;
    }

    res.params = p;
    res.t1 = apparent_to_true_t1(p);
    res.residual_norm = cost;
    res.iterations = iter;
    res.converged = converged;
    res.plausible = (p.b >= p.a) && (res.t1 > 0.0);
    return res;
}

// Polarity restoration: try every hypothesis "the first k magnitudes were
// inverted", fit each, keep the smallest residual (ties go to smaller k).
// Flipping all n points is excluded: it is sign-degenerate with flipping
// none under (a,b) -> (-a,-b), which positivity already rules out.
inline FitResult fit_with_polarity(const SignalCurve& curve, const FitOptions& opts = {}) {
    validate_curve(curve);
    const std::size_t n = curve.values.size();

    double maxy = 0.0;
    for (double v : curve.values) maxy = std::max(maxy, v);
    if (!(maxy > 0.0)) {
        FitResult dead;
        dead.params = init_guess(curve);
        dead.t1 = apparent_to_true_t1(dead.params);
        dead.residual_norm = 0.0;
        dead.converged = false;
        dead.plausible = false;
        return dead;
    }

    const ModelParams init = init_guess(curve);
    const std::size_t k_max = opts.polarity_search ? n - 2 : 0;

    FitResult best;
    std::vector<double> signed_vals = curve.values;
    for (std::size_t k = 0; k <= k_max; ++k) {
        if (k > 0)
            signed_vals[k - 1] = -curve.values[k - 1];
        FitResult r = lm_fit_signed(curve.times, signed_vals, init, opts);
        r.polarity_index = static_cast<int>(k);
        if (r.residual_norm < best.residual_norm)
            best = r;
    }
    best.plausible = (best.params.b >= best.params.a) && (best.t1 > 0.0);
    return best;
}

// Named planes produced by the map-level drivers.
struct MapSet {
    int width = 0, height = 0;
    Grid<double> t1, a, b, t1_star;
    Grid<double> residual;       // final sum of squared residuals (LM only)
    Grid<double> converged;      // 0/1
    Grid<double> polarity_index; // -1 where not applicable
    Grid<double> valid;          // 0/1, usable estimate produced
};

// Independent per-pixel fits; background pixels are skipped when ground
// truth labels are present.  Pure per pixel, so the result is identical for
// any worker count.
inline MapSet fit_map(const MolliStack& stack, const FitOptions& opts = {},
                      int threads = 1, bool skip_background = true) {
    stack.validate();
    if (stack.tis.size() < 4)
        throw DataError("fit_map: stack has fewer than 4 inversion times");
    const int w = stack.width(), h = stack.height();

    MapSet maps;
    maps.width = w;
    maps.height = h;
    maps.t1 = Grid<double>(w, h);
    maps.a = Grid<double>(w, h);
    maps.b = Grid<double>(w, h);
    maps.t1_star = Grid<double>(w, h);
    maps.residual = Grid<double>(w, h);
    maps.converged = Grid<double>(w, h);
    maps.polarity_index = Grid<double>(w, h, -1.0);
    maps.valid = Grid<double>(w, h);

    const std::uint8_t* labels = nullptr;
    if (skip_background && stack.ground_truth)
        labels = stack.ground_truth->labels.data.data();

    parallel_for(maps.t1.size(), threads, [&](std::size_t i) {
        if (labels && labels[i] == region_background)
            return;
        SignalCurve curve;
        curve.times = stack.tis;
        curve.values.resize(stack.tis.size());
        for (std::size_t k = 0; k < stack.tis.size(); ++k)
            curve.values[k] = stack.images[k].data[i];
        FitResult r;
        try {
            r = fit_with_polarity(curve, opts);
        } catch (const std::exception&) {
            return; // leaves valid = 0
        }
        maps.t1.data[i] = r.t1;
        maps.a.data[i] = r.params.a;
        maps.b.data[i] = r.params.b;
        maps.t1_star.data[i] = r.params.t1_star;
        maps.residual.data[i] = r.residual_norm;
        maps.converged.data[i] = r.converged ? 1.0 : 0.0;
        maps.polarity_index.data[i] = r.polarity_index;
        maps.valid.data[i] = std::isfinite(r.t1) ? 1.0 : 0.0;
    });
    return maps;
}

} // namespace molli
