// train.hpp - streaming trainer for the LSTM regressor and the map-level
// inference driver.
//
// Each epoch streams freshly generated balanced batches; every batch derives
// its curves from (seed, epoch, batch) substreams, so a run is reproducible
// and resumable.  Gradient accumulation uses fixed-size chunks merged in
// index order, which keeps training bit-identical for any worker count.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "molli/errors.hpp"
#include "molli/rnn.hpp"

namespace molli {

struct HistoryRow {
    int epoch = 0;            // 1-based
    double loss = 0.0;        // mean training loss of the epoch
    double val_t1_rel_err = 0.0; // mean relative T1 error on held-out ideal curves
};

struct AdamState {
    RnnTensors m, v;
    std::int64_t step = 0;
};

struct TrainState {
    RnnWeights weights;
    AdamState adam;
    int epochs_done = 0;
};

struct TrainResult {
    TrainState state;
    std::vector<HistoryRow> history;
};

namespace detail {

inline void adam_update(RnnTensors& w, const RnnTensors& g, AdamState& st,
                        const RnnConfig& cfg, double lr) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
    auto wb = w.blocks();
    auto gb = g.blocks();
    auto mb = st.m.blocks();
    auto vb = st.v.blocks();
    for (std::size_t bi = 0; bi < wb.size(); ++bi) {
        std::vector<double>& wv = *wb[bi];
        const std::vector<double>& gv = *gb[bi];
        std::vector<double>& mv = *mb[bi];
        std::vector<double>& vv = *vb[bi];
        for (std::size_t i = 0; i < wv.size(); ++i) {
            mv[i] = cfg.adam_beta1 * mv[i] + (1.0 - cfg.adam_beta1) * gv[i];
            vv[i] = cfg.adam_beta2 * vv[i] + (1.0 - cfg.adam_beta2) * gv[i] * gv[i];
            const double mhat = mv[i] / bc1;
            const double vhat = vv[i] / bc2;
            wv[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

} // namespace detail

// Held-out ideal curves used for the per-epoch validation metric.
inline std::vector<CurveSample> make_validation_set(const Rng& stream, int n,
                                                    const BatchSpec& data) {
    std::vector<CurveSample> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng item = stream.child(static_cast<std::uint64_t>(i));
        CurveSample& s = out[static_cast<std::size_t>(i)];
        s.cls = Perturbation::ideal;
        s.schedule = sample_schedule(item, data.scheme, data.base_tis, data.rr);
        s.truth = sample_params(item, data.ranges);
        s.curve = gen_curve(s.truth, s.schedule, s.cls, item, data.gen);
    }
    return out;
}

inline double mean_t1_rel_error(const RnnWeights& w, const std::vector<CurveSample>& set,
                                const NormSpec& norm, int threads = 1) {
    std::vector<double> err(set.size(), 0.0);
    parallel_for(set.size(), threads, [&](std::size_t i) {
        const Prediction p = forward(w, set[i].curve, norm);
        const double t1_true = apparent_to_true_t1(set[i].truth);
        err[i] = std::abs(apparent_to_true_t1(p.params) - t1_true) / t1_true;
    });
    double acc = 0.0;
    for (double e : err) acc += e;
    return acc / static_cast<double>(set.size());
}

inline TrainResult train(const RnnConfig& cfg, const NormSpec& norm, const BatchSpec& data,
                         std::uint64_t seed, int threads = 1,
                         const TrainState* resume = nullptr,
                         const std::function<void(const HistoryRow&)>& on_epoch = {}) {
    cfg.validate();
    norm.validate();
    const Rng root(seed);
    const Rng curve_stream = root.child("curves");
    const Rng val_stream = root.child("validation");

    TrainResult result;
    if (resume) {
        if (resume->weights.config.hidden_units != cfg.hidden_units)
            throw ConfigError("train: resume checkpoint has a different hidden size");
        result.state = *resume;
        result.state.weights.config = cfg;
    } else {
        result.state.weights = init_weights(cfg, root.child("weights"));
        result.state.adam.m = RnnTensors::zeros(cfg);
        result.state.adam.v = RnnTensors::zeros(cfg);
    }

    const int n_val = 2048;
    const auto val_set = make_validation_set(val_stream, n_val, data);

    constexpr int chunk_size = 16; // fixed: reduction order never depends on threads
    for (int epoch = result.state.epochs_done; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
        double epoch_loss = 0.0;
        int remaining = cfg.curves_per_epoch;
        std::uint64_t batch_idx = 0;
        while (remaining > 0) {
            const int bs = std::min(cfg.batch_size, remaining);
            const std::uint64_t key = (static_cast<std::uint64_t>(epoch) << 32) | batch_idx;
            const auto samples = gen_batch(bs, curve_stream.child(key), data);

            const int n_chunks = (bs + chunk_size - 1) / chunk_size;
            std::vector<RnnTensors> chunk_grad(static_cast<std::size_t>(n_chunks));
            std::vector<double> chunk_loss(static_cast<std::size_t>(n_chunks), 0.0);
            parallel_for(static_cast<std::size_t>(n_chunks), threads, [&](std::size_t c) {
                RnnTensors acc = RnnTensors::zeros(cfg);
                double loss_acc = 0.0;
                const int lo = static_cast<int>(c) * chunk_size;
                const int hi = std::min(bs, lo + chunk_size);
                for (int i = lo; i < hi; ++i) {
                    const CurveSample& s = samples[static_cast<std::size_t>(i)];
                    ForwardCache cache;
                    const Prediction pred = forward(result.state.weights, s.curve, norm, &cache);
                    const auto truth_n = normalize_truth(s.truth, pred.y_max, norm);
                    const auto times_n = normalize_times(s.curve.times, norm);
                    const ModelParams pn{pred.normalized[0], pred.normalized[1],
                                         pred.normalized[2]};
                    const ModelParams tn{truth_n[0], truth_n[1], truth_n[2]};
                    loss_acc += total_loss(pn, tn, times_n, cfg.loss_mode);
                    acc.accumulate(backward(result.state.weights, cache, truth_n, times_n,
                                            cfg.loss_mode));
                }
                chunk_grad[c] = std::move(acc);
                chunk_loss[c] = loss_acc;
            });

            RnnTensors grad = RnnTensors::zeros(cfg);
            double batch_loss = 0.0;
            for (int c = 0; c < n_chunks; ++c) {
                grad.accumulate(chunk_grad[static_cast<std::size_t>(c)]);
                batch_loss += chunk_loss[static_cast<std::size_t>(c)];
            }
            grad.scale(1.0 / static_cast<double>(bs));
            detail::adam_update(result.state.weights.tensors, grad, result.state.adam, cfg, lr);

            epoch_loss += batch_loss;
            remaining -= bs;
            ++batch_idx;
        }
        epoch_loss /= static_cast<double>(cfg.curves_per_epoch);
        if (!std::isfinite(epoch_loss))
            throw DataError("train: loss became non-finite (diverged) at epoch " +
                            std::to_string(epoch + 1));

        HistoryRow row;
        row.epoch = epoch + 1;
        row.loss = epoch_loss;
        row.val_t1_rel_err = mean_t1_rel_error(result.state.weights, val_set, norm, threads);
        result.history.push_back(row);
        result.state.epochs_done = epoch + 1;
        if (on_epoch)
            on_epoch(row);
    }
    return result;
}

// Per-pixel forward pass over a stack.  Degenerate (all-zero) pixels are
// marked invalid instead of aborting the map.
inline MapSet infer_map(const RnnWeights& w, const MolliStack& stack, const NormSpec& norm,
                        int threads = 1, bool skip_background = true) {
    stack.validate();
    const int width = stack.width(), height = stack.height();
    MapSet maps;
    maps.width = width;
    maps.height = height;
    maps.t1 = Grid<double>(width, height);
    maps.a = Grid<double>(width, height);
    maps.b = Grid<double>(width, height);
    maps.t1_star = Grid<double>(width, height);
    maps.residual = Grid<double>(width, height);
    maps.converged = Grid<double>(width, height);
    maps.polarity_index = Grid<double>(width, height, -1.0);
    maps.valid = Grid<double>(width, height);

    const std::uint8_t* labels = nullptr;
    if (skip_background && stack.ground_truth)
        labels = stack.ground_truth->labels.data.data();

    parallel_for(maps.t1.size(), threads, [&](std::size_t i) {
        if (labels && labels[i] == region_background)
            return;
        SignalCurve curve;
        curve.times = stack.tis;
        curve.values.resize(stack.tis.size());
        double y_max = 0.0;
        for (std::size_t k = 0; k < stack.tis.size(); ++k) {
            curve.values[k] = stack.images[k].data[i];
            y_max = std::max(y_max, curve.values[k]);
        }
        if (!(y_max > 0.0))
            return; // degenerate pixel, leaves valid = 0
        const Prediction p = forward(w, curve, norm);
        maps.t1.data[i] = apparent_to_true_t1(p.params);
        maps.a.data[i] = p.params.a;
        maps.b.data[i] = p.params.b;
        maps.t1_star.data[i] = p.params.t1_star;
        maps.converged.data[i] = 1.0;
        maps.valid.data[i] = 1.0;
    });
    return maps;
}

} // namespace molli
