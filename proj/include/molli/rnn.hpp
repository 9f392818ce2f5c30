// rnn.hpp - LSTM regressor mapping a sampled recovery curve to the model
// parameters, with from-scratch backpropagation through time.
//
// Input per timestep: (TI / time_scale, magnitude / curve max), in sorted-TI
// order.  The final hidden state feeds an affine head; softplus on the three
// outputs keeps the decoded parameters strictly positive.  The training loss
// decomposes the curve mismatch into one signed series per parameter and
// aggregates them by mean absolute error over the inversion times; an
// alternative mode takes the MAE between the reconstructed curves instead.
// Everything runs in double precision so the finite-difference gradient
// checks are meaningful.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "molli/errors.hpp"
#include "molli/image.hpp"
#include "molli/lmfit.hpp"
#include "molli/rng.hpp"
#include "molli/synth.hpp"
#include "molli/threading.hpp"

namespace molli {

struct NormSpec {
    double time_scale = 5000.0; // ms; also scales the predicted T1*

    void validate() const {
        if (!(time_scale > 0.0))
            throw ConfigError("normalization: time_scale must be positive");
    }
};

enum class LossMode {
    decomposed, // per-parameter signed series, MAE-aggregated (default)
    curve_mae,  // MAE between reconstructed magnitude curves
};

struct RnnConfig {
    int hidden_units = 64;
    int input_features = 2;
    int output_units = 3;
    int epochs = 48;
    int curves_per_epoch = 65535; // closest multiple of 3 to 2^16
    int batch_size = 192;         // multiple of 3 keeps minibatches balanced
    double learning_rate = 1e-3;
    double lr_decay = 0.97; // per-epoch multiplicative
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LossMode loss_mode = LossMode::decomposed;

    void validate() const {
        if (hidden_units < 1)
            throw ConfigError("rnn: hidden_units must be >= 1");
        if (input_features != 2 || output_units != 3)
            throw ConfigError("rnn: expects 2 input features and 3 outputs");
        if (epochs < 0 || curves_per_epoch < 3 || batch_size < 3)
            throw ConfigError("rnn: non-positive training sizes");
        if (curves_per_epoch % 3 != 0 || batch_size % 3 != 0)
            throw ConfigError("rnn: curves_per_epoch and batch_size must be "
                              "multiples of 3 to keep classes balanced");
        if (!(learning_rate > 0.0) || !(lr_decay > 0.0) || lr_decay > 1.0)
            throw ConfigError("rnn: bad learning-rate schedule");
    }
};

// All trainable tensors, flattened.  lstm_w is [4H x (I+H)] row-major with
// gate rows ordered i, f, g, o; head_w is [3 x H].
struct RnnTensors {
    std::vector<double> lstm_w, lstm_b, head_w, head_b;

    static RnnTensors zeros(const RnnConfig& cfg) {
        RnnTensors t;
        const std::size_t H = static_cast<std::size_t>(cfg.hidden_units);
        const std::size_t cols = static_cast<std::size_t>(cfg.input_features) + H;
        t.lstm_w.assign(4 * H * cols, 0.0);
        t.lstm_b.assign(4 * H, 0.0);
        t.head_w.assign(3 * H, 0.0);
        t.head_b.assign(3, 0.0);
        return t;
    }

    void accumulate(const RnnTensors& g) {
        for (std::size_t i = 0; i < lstm_w.size(); ++i) lstm_w[i] += g.lstm_w[i];
        for (std::size_t i = 0; i < lstm_b.size(); ++i) lstm_b[i] += g.lstm_b[i];
        for (std::size_t i = 0; i < head_w.size(); ++i) head_w[i] += g.head_w[i];
        for (std::size_t i = 0; i < head_b.size(); ++i) head_b[i] += g.head_b[i];
    }
    void scale(double s) {
        for (auto& v : lstm_w) v *= s;
        for (auto& v : lstm_b) v *= s;
        for (auto& v : head_w) v *= s;
        for (auto& v : head_b) v *= s;
    }
    std::size_t total_size() const {
        return lstm_w.size() + lstm_b.size() + head_w.size() + head_b.size();
    }
    // declared tensor order used by checkpoints and flat iteration
    std::array<std::vector<double>*, 4> blocks() {
        return {&lstm_w, &lstm_b, &head_w, &head_b};
    }
    std::array<const std::vector<double>*, 4> blocks() const {
        return {&lstm_w, &lstm_b, &head_w, &head_b};
    }
};

struct RnnWeights {
    RnnConfig config;
    RnnTensors tensors;
};

// Uniform +-1/sqrt(fan-in), forget-gate bias +1, everything else zero.
inline RnnWeights init_weights(const RnnConfig& cfg, Rng rng) {
    cfg.validate();
    RnnWeights w;
    w.config = cfg;
    w.tensors = RnnTensors::zeros(cfg);
    const std::size_t H = static_cast<std::size_t>(cfg.hidden_units);
    const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(cfg.input_features) + H);
    for (auto& v : w.tensors.lstm_w) v = rng.uniform(-lstm_bound, lstm_bound);
    const double head_bound = 1.0 / std::sqrt(static_cast<double>(H));
    for (auto& v : w.tensors.head_w) v = rng.uniform(-head_bound, head_bound);
    for (std::size_t j = 0; j < H; ++j)
        w.tensors.lstm_b[H + j] = 1.0; // forget gate
    return w;
}

namespace nn {

inline double sigmoid(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double softplus(double z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

} // namespace nn

struct ForwardCache {
    int steps = 0;
    double y_max = 0.0;
    std::vector<double> x;      // steps * 2
    std::vector<double> gates;  // steps * 4H, post-activation, order i,f,g,o
    std::vector<double> c;      // steps * H
    std::vector<double> tanh_c; // steps * H
    std::vector<double> h;      // steps * H
    std::array<double, 3> z{};  // head pre-activation
    std::array<double, 3> pred_norm{};
};

struct Prediction {
    ModelParams params;                  // decoded to physical units
    std::array<double, 3> normalized{};  // (a/y_max, b/y_max, t1*/time_scale)
    double y_max = 0.0;
};

inline Prediction forward(const RnnWeights& w, const SignalCurve& curve,
                          const NormSpec& norm, ForwardCache* cache = nullptr) {
    norm.validate();
    const int H = w.config.hidden_units;
    const int I = w.config.input_features;
    const int T = static_cast<int>(curve.times.size());
    if (curve.values.size() != curve.times.size() || T < 1)
        throw DataError("rnn forward: malformed curve");

    double y_max = 0.0;
    for (double v : curve.values) y_max = std::max(y_max, v);
    if (!(y_max > 0.0))
        throw DataError("rnn forward: degenerate all-zero curve");

    const std::size_t cols = static_cast<std::size_t>(I + H);
    const double* W = w.tensors.lstm_w.data();
    const double* B = w.tensors.lstm_b.data();

    std::vector<double> h_prev(static_cast<std::size_t>(H), 0.0);
    std::vector<double> c_prev(static_cast<std::size_t>(H), 0.0);
    std::vector<double> gate(static_cast<std::size_t>(4 * H));

    if (cache) {
        cache->steps = T;
        cache->y_max = y_max;
        cache->x.resize(static_cast<std::size_t>(T) * 2);
        cache->gates.resize(static_cast<std::size_t>(T) * 4 * H);
        cache->c.resize(static_cast<std::size_t>(T) * H);
        cache->tanh_c.resize(static_cast<std::size_t>(T) * H);
        cache->h.resize(static_cast<std::size_t>(T) * H);
    }

    for (int t = 0; t < T; ++t) {
        const double x0 = curve.times[static_cast<std::size_t>(t)] / norm.time_scale;
        const double x1 = curve.values[static_cast<std::size_t>(t)] / y_max;
        for (int r = 0; r < 4 * H; ++r) {
            const double* row = W + static_cast<std::size_t>(r) * cols;
            double acc = B[r] + row[0] * x0 + row[1] * x1;
            for (int j = 0; j < H; ++j)
                acc += row[2 + j] * h_prev[static_cast<std::size_t>(j)];
            gate[static_cast<std::size_t>(r)] = acc;
        }
        for (int j = 0; j < H; ++j) {
            const double gi = nn::sigmoid(gate[static_cast<std::size_t>(j)]);
            const double gf = nn::sigmoid(gate[static_cast<std::size_t>(H + j)]);
            const double gg = std::tanh(gate[static_cast<std::size_t>(2 * H + j)]);
            const double go = nn::sigmoid(gate[static_cast<std::size_t>(3 * H + j)]);
            const double cc = gf * c_prev[static_cast<std::size_t>(j)] + gi * gg;
            const double tc = std::tanh(cc);
            c_prev[static_cast<std::size_t>(j)] = cc;
            h_prev[static_cast<std::size_t>(j)] = go * tc;
            if (cache) {
                const std::size_t tb = static_cast<std::size_t>(t);
                cache->gates[tb * 4 * H + static_cast<std::size_t>(j)] = gi;
                cache->gates[tb * 4 * H + static_cast<std::size_t>(H + j)] = gf;
                cache->gates[tb * 4 * H + static_cast<std::size_t>(2 * H + j)] = gg;
                cache->gates[tb * 4 * H + static_cast<std::size_t>(3 * H + j)] = go;
                cache->c[tb * H + static_cast<std::size_t>(j)] = cc;
                cache->tanh_c[tb * H + static_cast<std::size_t>(j)] = tc;
                cache->h[tb * H + static_cast<std::size_t>(j)] = h_prev[static_cast<std::size_t>(j)];
            }
        }
        if (cache) {
            cache->x[static_cast<std::size_t>(t) * 2] = x0;
            cache->x[static_cast<std::size_t>(t) * 2 + 1] = x1;
        }
    }

    Prediction out;
    out.y_max = y_max;
    for (int k = 0; k < 3; ++k) {
        double z = w.tensors.head_b[static_cast<std::size_t>(k)];
        const double* row = w.tensors.head_w.data() + static_cast<std::size_t>(k) * H;
        for (int j = 0; j < H; ++j)
            z += row[j] * h_prev[static_cast<std::size_t>(j)];
        out.normalized[static_cast<std::size_t>(k)] = nn::softplus(z);
        if (cache) {
            cache->z[static_cast<std::size_t>(k)] = z;
            cache->pred_norm[static_cast<std::size_t>(k)] =
                out.normalized[static_cast<std::size_t>(k)];
        }
    }
    out.params.a = out.normalized[0] * y_max;
    out.params.b = out.normalized[1] * y_max;
    out.params.t1_star = out.normalized[2] * norm.time_scale;
    return out;
}

// --- decomposed loss -------------------------------------------------------
//
// loss_a   = a_p - a_t                              (constant over t)
// loss_b_k = exp(-t_k/s_t) (b_p - b_t)
// loss_s_k = b_t (exp(-t_k/s_p) - exp(-t_k/s_t))
//
// Units are whatever the caller passes; training evaluates these in
// normalized parameter space.

struct LossSeries {
    double loss_a = 0.0;
    std::vector<double> loss_b, loss_t1s;
};

inline LossSeries loss_series(const ModelParams& pred, const ModelParams& truth,
                              const std::vector<double>& times) {
    LossSeries s;
    s.loss_a = pred.a - truth.a;
    s.loss_b.resize(times.size());
    s.loss_t1s.resize(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double et = std::exp(-times[k] / truth.t1_star);
        const double ep = std::exp(-times[k] / pred.t1_star);
        s.loss_b[k] = et * (pred.b - truth.b);
        s.loss_t1s[k] = truth.b * (ep - et);
    }
    return s;
}

inline double total_loss_decomposed(const ModelParams& pred, const ModelParams& truth,
                                    const std::vector<double>& times) {
    const LossSeries s = loss_series(pred, truth, times);
    double acc = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k)
        acc += std::abs(s.loss_a) + std::abs(s.loss_b[k]) + std::abs(s.loss_t1s[k]);
    return acc / static_cast<double>(times.size());
}

inline double total_loss_curve_mae(const ModelParams& pred, const ModelParams& truth,
                                   const std::vector<double>& times) {
    double acc = 0.0;
    for (double t : times)
        acc += std::abs(molli_signal(pred, t) - molli_signal(truth, t));
    return acc / static_cast<double>(times.size());
}

inline double total_loss(const ModelParams& pred, const ModelParams& truth,
                         const std::vector<double>& times,
                         LossMode mode = LossMode::decomposed) {
    return mode == LossMode::decomposed ? total_loss_decomposed(pred, truth, times)
                                        : total_loss_curve_mae(pred, truth, times);
}

namespace detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// dL/d(pred in normalized space); subgradient 0 at |.| kinks.
inline std::array<double, 3> loss_grad_wrt_pred(const std::array<double, 3>& pred,
                                                const std::array<double, 3>& truth,
                                                const std::vector<double>& times,
                                                LossMode mode) {
    const std::size_t n = times.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    std::array<double, 3> g{0.0, 0.0, 0.0};
    if (mode == LossMode::decomposed) {
        g[0] = sgn(pred[0] - truth[0]);
        for (std::size_t k = 0; k < n; ++k) {
            const double et = std::exp(-times[k] / truth[2]);
            const double ep = std::exp(-times[k] / pred[2]);
            g[1] += inv_n * sgn(et * (pred[1] - truth[1])) * et;
            g[2] += inv_n * sgn(truth[1] * (ep - et)) * truth[1] * ep *
                    (times[k] / (pred[2] * pred[2]));
        }
    } else {
        for (std::size_t k = 0; k < n; ++k) {
            const double ep = std::exp(-times[k] / pred[2]);
            const double et = std::exp(-times[k] / truth[2]);
            const double sp = pred[0] - pred[1] * ep;   // signed prediction
            const double st = truth[0] - truth[1] * et;
            const double outer = sgn(std::abs(sp) - std::abs(st)) * sgn(sp);
            g[0] += inv_n * outer;
            g[1] += inv_n * outer * (-ep);
            g[2] += inv_n * outer * (-pred[1] * ep * times[k] / (pred[2] * pred[2]));
        }
    }
    return g;
}

} // namespace detail

// Backpropagation through time.  `truth_norm` and `times_norm` must be in
// the same normalized units the forward pass produced.
inline RnnTensors backward(const RnnWeights& w, const ForwardCache& cache,
                           const std::array<double, 3>& truth_norm,
                           const std::vector<double>& times_norm,
                           LossMode mode = LossMode::decomposed) {
    const int H = w.config.hidden_units;
    const int T = cache.steps;
    const std::size_t cols = static_cast<std::size_t>(w.config.input_features + H);
    RnnTensors grad = RnnTensors::zeros(w.config);

    const auto dpred = detail::loss_grad_wrt_pred(cache.pred_norm, truth_norm,
                                                  times_norm, mode);

    // through softplus and the affine head
    std::vector<double> dh(static_cast<std::size_t>(H), 0.0);
    const std::size_t last = static_cast<std::size_t>(T - 1) * H;
    for (int k = 0; k < 3; ++k) {
        const double dz = dpred[static_cast<std::size_t>(k)] *
                          nn::sigmoid(cache.z[static_cast<std::size_t>(k)]);
        grad.head_b[static_cast<std::size_t>(k)] += dz;
        const double* row = w.tensors.head_w.data() + static_cast<std::size_t>(k) * H;
        double* grow = grad.head_w.data() + static_cast<std::size_t>(k) * H;
        for (int j = 0; j < H; ++j) {
            grow[j] += dz * cache.h[last + static_cast<std::size_t>(j)];
            dh[static_cast<std::size_t>(j)] += dz * row[j];
        }
    }

    std::vector<double> dc(static_cast<std::size_t>(H), 0.0);
    std::vector<double> dz4(static_cast<std::size_t>(4 * H));
    std::vector<double> dh_prev(static_cast<std::size_t>(H));
    for (int t = T - 1; t >= 0; --t) {
        const std::size_t tb = static_cast<std::size_t>(t);
        const double* g = cache.gates.data() + tb * 4 * H;
        const double* cvec = cache.c.data() + tb * H;
        const double* tc = cache.tanh_c.data() + tb * H;
        (void)cvec;
        for (int j = 0; j < H; ++j) {
            const double gi = g[j], gf = g[H + j], gg = g[2 * H + j], go = g[3 * H + j];
            const double c_prev = t > 0 ? cache.c[(tb - 1) * H + static_cast<std::size_t>(j)] : 0.0;
            const double dho = dh[static_cast<std::size_t>(j)];
            const double dout = dho * tc[j];
            double dcj = dc[static_cast<std::size_t>(j)] + dho * go * (1.0 - tc[j] * tc[j]);
            const double di = dcj * gg;
            const double dg = dcj * gi;
            const double df = dcj * c_prev;
            dc[static_cast<std::size_t>(j)] = dcj * gf; // becomes dc for t-1
            dz4[static_cast<std::size_t>(j)] = di * gi * (1.0 - gi);
            dz4[static_cast<std::size_t>(H + j)] = df * gf * (1.0 - gf);
            dz4[static_cast<std::size_t>(2 * H + j)] = dg * (1.0 - gg * gg);
            dz4[static_cast<std::size_t>(3 * H + j)] = dout * go * (1.0 - go);
        }
        const double x0 = cache.x[tb * 2];
        const double x1 = cache.x[tb * 2 + 1];
        const double* h_prev = t > 0 ? cache.h.data() + (tb - 1) * H : nullptr;
        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        for (int r = 0; r < 4 * H; ++r) {
            const double dzr = dz4[static_cast<std::size_t>(r)];
            const std::size_t base = static_cast<std::size_t>(r) * cols;
            grad.lstm_b[static_cast<std::size_t>(r)] += dzr;
            grad.lstm_w[base] += dzr * x0;
            grad.lstm_w[base + 1] += dzr * x1;
            const double* wrow = w.tensors.lstm_w.data() + base + 2;
            double* growp = grad.lstm_w.data() + base + 2;
            if (h_prev) {
                for (int j = 0; j < H; ++j) {
                    growp[j] += dzr * h_prev[j];
                    dh_prev[static_cast<std::size_t>(j)] += dzr * wrow[j];
                }
            } else {
                for (int j = 0; j < H; ++j)
                    dh_prev[static_cast<std::size_t>(j)] += dzr * wrow[j];
            }
        }
        dh.swap(dh_prev);
    }
    return grad;
}

// Normalized truth triple for a sample, matching the forward encoding.
inline std::array<double, 3> normalize_truth(const ModelParams& truth, double y_max,
                                             const NormSpec& norm) {
    return {truth.a / y_max, truth.b / y_max, truth.t1_star / norm.time_scale};
}

inline std::vector<double> normalize_times(const std::vector<double>& times,
                                           const NormSpec& norm) {
    std::vector<double> out(times.size());
    for (std::size_t i = 0; i < times.size(); ++i)
        out[i] = times[i] / norm.time_scale;
    return out;
}

// Loss of one sample as a function of the weights alone; used by training
// and by the finite-difference checks.
inline double sample_loss(const RnnWeights& w, const CurveSample& s,
                          const NormSpec& norm, ForwardCache* cache = nullptr) {
    const Prediction pred = forward(w, s.curve, norm, cache);
    const auto truth_n = normalize_truth(s.truth, pred.y_max, norm);
    const auto times_n = normalize_times(s.curve.times, norm);
    const ModelParams pn{pred.normalized[0], pred.normalized[1], pred.normalized[2]};
    const ModelParams tn{truth_n[0], truth_n[1], truth_n[2]};
    return total_loss(pn, tn, times_n, w.config.loss_mode);
}

// --- finite-difference gradient verification -------------------------------

enum class GradCheckMutation {
    none,
    flip_forget_bias_sign, // deliberately corrupts the analytic gradient
};

// Worst relative disagreement between backpropagated and central-difference
// gradients over every weight, across `n_samples` random curves.  Samples
// whose loss series sit within 1e-8 of an |.| kink are redrawn.
inline double grad_check(const RnnConfig& config, const NormSpec& norm, Rng rng,
                         int n_samples = 25,
                         GradCheckMutation mutation = GradCheckMutation::none) {
    RnnConfig cfg = config;
    cfg.validate();
    RnnWeights w = init_weights(cfg, rng.child("weights"));
    BatchSpec spec;

    double worst = 0.0;
    int accepted = 0;
    std::uint64_t draw = 0;
    while (accepted < n_samples && draw < static_cast<std::uint64_t>(n_samples) * 40) {
        Rng item = rng.child(draw++);
        CurveSample s;
        s.cls = static_cast<Perturbation>(draw % 3);
        s.schedule = sample_schedule(item, spec.scheme, spec.base_tis, spec.rr);
        s.truth = sample_params(item, spec.ranges);
        s.curve = gen_curve(s.truth, s.schedule, s.cls, item, spec.gen);

        ForwardCache cache;
        const double base_loss = sample_loss(w, s, norm, &cache);
        (void)base_loss;

        // stay away from the non-differentiable kinks
        const auto truth_n = normalize_truth(s.truth, cache.y_max, norm);
        const auto times_n = normalize_times(s.curve.times, norm);
        const ModelParams pn{cache.pred_norm[0], cache.pred_norm[1], cache.pred_norm[2]};
        const ModelParams tn{truth_n[0], truth_n[1], truth_n[2]};
        const LossSeries series = loss_series(pn, tn, times_n);
        bool near_kink = std::abs(series.loss_a) < 1e-8;
        for (std::size_t k = 0; k < times_n.size() && !near_kink; ++k)
            near_kink = std::abs(series.loss_b[k]) < 1e-8 ||
                        std::abs(series.loss_t1s[k]) < 1e-8;
        if (near_kink)
            continue;
        ++accepted;

        RnnTensors analytic = backward(w, cache, truth_n, times_n, cfg.loss_mode);
        if (mutation == GradCheckMutation::flip_forget_bias_sign) {
            const std::size_t H = static_cast<std::size_t>(cfg.hidden_units);
            for (std::size_t j = 0; j < H; ++j)
                analytic.lstm_b[H + j] = -analytic.lstm_b[H + j];
        }

        auto wblocks = w.tensors.blocks();
        auto ablocks = analytic.blocks();
        for (std::size_t bi = 0; bi < wblocks.size(); ++bi) {
            std::vector<double>& tensor = *wblocks[bi];
            const std::vector<double>& an = *ablocks[bi];
            for (std::size_t i = 0; i < tensor.size(); ++i) {
                const double orig = tensor[i];
                const double step = 1e-6 * std::max(1.0, std::abs(orig));
                tensor[i] = orig + step;
                const double lp = sample_loss(w, s, norm);
                tensor[i] = orig - step;
                const double lm = sample_loss(w, s, norm);
                tensor[i] = orig;
                const double fd = (lp - lm) / (2.0 * step);
                const double denom = std::max({std::abs(an[i]), std::abs(fd), 1e-4});
                worst = std::max(worst, std::abs(an[i] - fd) / denom);
            }
        }
    }
    if (accepted < n_samples)
        throw DataError("grad_check: could not draw enough kink-free samples");
    return worst;
}

} // namespace molli
