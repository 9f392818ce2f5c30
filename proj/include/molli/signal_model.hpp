// signal_model.hpp - MOLLI inversion-recovery signal model.
//
// Magnitude signal  y(t) = |A - B exp(-t/T1*)|  with the Look-Locker
// correction  T1 = T1* (B/A - 1).  All times are milliseconds, all model
// math is double precision.

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "molli/errors.hpp"

namespace molli {

struct ModelParams {
    double a = 0.0;       // apparent equilibrium amplitude, a.u.
    double b = 0.0;       // recovery span, a.u. (ideally ~2a)
    double t1_star = 0.0; // apparent relaxation time, ms
};

inline bool params_valid(const ModelParams& p) {
    return std::isfinite(p.a) && std::isfinite(p.b) && std::isfinite(p.t1_star) &&
           p.a > 0.0 && p.b > 0.0 && p.t1_star > 0.0;
}

// One pixel's sampled recovery: inversion times (sorted ascending, distinct)
// and the matching magnitude values.
struct SignalCurve {
    std::vector<double> times;  // ms
    std::vector<double> values; // magnitudes, >= 0
};

inline void validate_curve(const SignalCurve& c) {
    if (c.times.size() != c.values.size())
        throw DataError("signal curve: times/values length mismatch");
    if (c.times.size() < 4)
        throw DataError("signal curve: need at least 4 samples");
    for (std::size_t i = 0; i < c.times.size(); ++i) {
        if (!(c.times[i] >= 0.0))
            throw DataError("signal curve: negative inversion time");
        if (i > 0 && !(c.times[i] > c.times[i - 1]))
            throw DataError("signal curve: inversion times not strictly increasing");
        if (!(c.values[i] >= 0.0))
            throw DataError("signal curve: negative magnitude value");
    }
}

// Pre-magnitude model, used by the fitter once polarity is restored.
inline double signed_signal(const ModelParams& p, double t) {
    return p.a - p.b * std::exp(-t / p.t1_star);
}

inline double molli_signal(const ModelParams& p, double t) {
    return std::abs(signed_signal(p, t));
}

inline double apparent_to_true_t1(const ModelParams& p) {
    return p.t1_star * (p.b / p.a - 1.0);
}

// Zero crossing of the signed recovery; none when b < a (the curve never
// changes sign).
inline std::optional<double> null_time(const ModelParams& p) {
    if (p.b < p.a)
        return std::nullopt;
    return p.t1_star * std::log(p.b / p.a);
}

} // namespace molli
