// schedule.hpp - MOLLI beat patterns and heartbeat-locked inversion times.
//
// A scheme like 5(3)3 means: one inversion, 5 acquisitions on consecutive
// beats, 3 recovery beats, a second inversion, 3 more acquisitions.  The
// effective inversion time of acquisition k within a block is the block's
// initial TI plus the R-R intervals elapsed since the block's first readout,
// so heart-rate variability jitters the time axis.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "molli/errors.hpp"
#include "molli/rng.hpp"

namespace molli {

struct MolliScheme {
    struct Block {
        int n_acq = 0;   // acquisition beats
        int n_pause = 0; // recovery beats before the next block
    };
    std::vector<Block> blocks;

    int total_acquisitions() const {
        int n = 0;
        for (const auto& b : blocks) n += b.n_acq;
        return n;
    }
    int total_beats() const {
        int n = 0;
        for (const auto& b : blocks) n += b.n_acq + b.n_pause;
        return n;
    }

    // Parse the usual "5(3)3" notation: acquisition counts outside
    // parentheses, pause beats inside.
    static MolliScheme parse(const std::string& pattern) {
        MolliScheme s;
        std::size_t i = 0;
        auto read_int = [&](const char* what) {
            std::size_t start = i;
            while (i < pattern.size() && pattern[i] >= '0' && pattern[i] <= '9') ++i;
            if (i == start)
                throw ConfigError(std::string("scheme '") + pattern + "': expected " + what);
            return std::stoi(pattern.substr(start, i - start));
        };
        while (i < pattern.size()) {
            Block b;
            b.n_acq = read_int("acquisition count");
            if (b.n_acq < 1)
                throw ConfigError("scheme '" + pattern + "': empty acquisition block");
            if (i < pattern.size() && pattern[i] == '(') {
                ++i;
                b.n_pause = read_int("pause count");
                if (i >= pattern.size() || pattern[i] != ')')
                    throw ConfigError("scheme '" + pattern + "': missing ')'");
                ++i;
            }
            s.blocks.push_back(b);
        }
        if (s.blocks.empty())
            throw ConfigError("scheme '" + pattern + "': no blocks");
        return s;
    }

    std::string pattern() const {
        std::string out;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            out += std::to_string(blocks[i].n_acq);
            if (blocks[i].n_pause > 0)
                out += "(" + std::to_string(blocks[i].n_pause) + ")";
        }
        return out;
    }
};

inline MolliScheme default_scheme() { return MolliScheme::parse("5(3)3"); }
inline std::vector<double> default_base_tis() { return {100.0, 180.0}; }

struct RrModel {
    double hr_min_bpm = 30.0;
    double hr_max_bpm = 120.0;
    double jitter_sd_ms = 200.0;
    double min_rr_ms = 300.0; // clamp, keeps intervals physical
};

// One base heart rate per sequence, Gaussian beat-to-beat jitter on top.
inline std::vector<double> sample_rr_sequence(Rng& rng, int n_beats, const RrModel& model = {}) {
    if (n_beats < 1)
        throw DataError("sample_rr_sequence: n_beats must be >= 1");
    const double hr = rng.uniform(model.hr_min_bpm, model.hr_max_bpm);
    const double base = 60000.0 / hr;
    std::vector<double> rr(static_cast<std::size_t>(n_beats));
    for (auto& v : rr)
        v = std::max(model.min_rr_ms, base + rng.gaussian(0.0, model.jitter_sd_ms));
    return rr;
}

struct TiSchedule {
    std::vector<double> effective_tis; // ms, sorted ascending
    std::vector<int> acq_order;        // acq_order[sorted_idx] = acquisition index (block-major)
    std::vector<double> rr_intervals;  // the intervals consumed
};

// Effective TI of acquisition k of a block = block base TI + time elapsed
// since the block's first acquisition beat.  Beat i happens one R-R interval
// after beat i-1; pause beats consume intervals without producing images.
inline TiSchedule make_ti_schedule(const MolliScheme& scheme,
                                   const std::vector<double>& base_tis,
                                   const std::vector<double>& rr_intervals) {
    if (base_tis.size() != scheme.blocks.size())
        throw ConfigError("make_ti_schedule: one base TI per block required");
    const int beats = scheme.total_beats();
    if (static_cast<int>(rr_intervals.size()) < beats - 1)
        throw DataError("make_ti_schedule: R-R sequence shorter than the scheme's beats");
    for (double rr : rr_intervals)
        if (!(rr > 0.0))
            throw DataError("make_ti_schedule: non-positive R-R interval");

    std::vector<double> tis;
    tis.reserve(static_cast<std::size_t>(scheme.total_acquisitions()));
    int beat = 0;
    double beat_time = 0.0;
    for (std::size_t blk = 0; blk < scheme.blocks.size(); ++blk) {
        double block_start = 0.0;
        for (int k = 0; k < scheme.blocks[blk].n_acq; ++k) {
            if (beat > 0)
                beat_time += rr_intervals[static_cast<std::size_t>(beat - 1)];
            if (k == 0)
                block_start = beat_time;
            tis.push_back(base_tis[blk] + (beat_time - block_start));
            ++beat;
        }
        for (int p = 0; p < scheme.blocks[blk].n_pause; ++p) {
            beat_time += rr_intervals[static_cast<std::size_t>(beat - 1)];
            ++beat;
        }
    }

    TiSchedule out;
    out.rr_intervals.assign(rr_intervals.begin(),
                            rr_intervals.begin() + (beats - 1));
    std::vector<int> order(tis.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int l, int r) { return tis[static_cast<std::size_t>(l)] <
                                                tis[static_cast<std::size_t>(r)]; });
    out.effective_tis.reserve(tis.size());
    out.acq_order = order;
    for (int idx : order)
        out.effective_tis.push_back(tis[static_cast<std::size_t>(idx)]);
    for (std::size_t i = 1; i < out.effective_tis.size(); ++i)
        if (!(out.effective_tis[i] > out.effective_tis[i - 1]))
            throw DataError("make_ti_schedule: duplicate effective inversion time");
    return out;
}

// Convenience: jittered schedule straight from the R-R model.
inline TiSchedule sample_schedule(Rng& rng, const MolliScheme& scheme,
                                  const std::vector<double>& base_tis,
                                  const RrModel& model = {}) {
    const int beats = scheme.total_beats();
    auto rr = sample_rr_sequence(rng, beats > 1 ? beats - 1 : 1, model);
    return make_ti_schedule(scheme, base_tis, rr);
}

} // namespace molli
