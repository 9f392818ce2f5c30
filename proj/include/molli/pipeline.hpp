// pipeline.hpp - command-level drivers shared by the CLI, the tests, and the
// acceptance suite.  Each run echoes its resolved config into the output
// directory; all randomness flows from config.seed through named substreams.

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "molli/config.hpp"
#include "molli/eval.hpp"
#include "molli/io.hpp"
#include "molli/motion.hpp"
#include "molli/phantom.hpp"
#include "molli/train.hpp"

namespace molli {

inline MolliStack make_phantom_stack(const RunConfig& cfg) {
    const Rng root(cfg.seed);
    const int threads = resolve_threads(cfg.threads);
    const ParamMaps maps = gen_phantom(cfg.phantom, root.child("phantom"));
    Rng rr_rng = root.child("phantom-rr");
    const TiSchedule schedule = sample_schedule(rr_rng, cfg.scheme, cfg.base_tis, cfg.rr);
    return render_molli_stack(maps, schedule, cfg.phantom.pixel_spacing, threads);
}

inline void run_gen_curves(const RunConfig& cfg, const std::filesystem::path& out) {
    cfg.validate();
    std::filesystem::create_directories(out);
    const Rng root(cfg.seed);
    const auto batch = gen_batch(cfg.gen_count, root.child("curves"), cfg.batch_spec());
    write_curves_csv(out / "curves.csv", batch);
    write_curves_mcrv(out / "curves.mcrv", batch);
    echo_config(out, cfg);
}

inline void run_gen_phantom(const RunConfig& cfg, const std::filesystem::path& out) {
    cfg.validate();
    const Rng root(cfg.seed);
    MolliStack stack = make_phantom_stack(cfg);
    if (cfg.phantom_apply_noise)
        stack = add_stack_noise(stack, cfg.curve_gen.noise_frac, root.child("noise"));
    if (cfg.phantom_apply_motion) {
        Rng motion_rng = root.child("motion");
        stack = apply_motion(stack, cfg.motion, motion_rng);
    }
    write_stack(out, stack);
    echo_config(out, cfg);
}

inline void write_map_summary(const std::filesystem::path& path, const MapSet& maps,
                              const MolliStack& stack) {
    auto f = detail::open_out(path);
    f << "region,pixels,mean_t1_ms,mean_err_ms,median_err_ms,sd_err_ms,p95_err_ms\n";
    auto fitted_mean = [&](std::uint8_t region, bool use_labels) {
        double acc = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < maps.t1.data.size(); ++i) {
            if (!(maps.valid.data[i] > 0.0))
                continue;
            if (use_labels &&
                stack.ground_truth->labels.data[i] != region)
                continue;
            acc += maps.t1.data[i];
            ++n;
        }
        return std::pair<double, int>(n > 0 ? acc / n : 0.0, n);
    };
    if (stack.ground_truth) {
        const Grid<double> gt_t1 = ground_truth_t1(*stack.ground_truth);
        const Grid<double> err = t1_error_map(maps.t1, gt_t1, &maps.valid);
        for (std::uint8_t region : {region_myocardium, region_blood}) {
            const auto [mean_t1, n] = fitted_mean(region, true);
            (void)n;
            const RegionStats s = region_stats(err, stack.ground_truth->labels, region);
            f << region_name(region) << ',' << s.pixels << ',' << fmt_double(mean_t1)
              << ',' << fmt_double(s.mean) << ',' << fmt_double(s.median) << ','
              << fmt_double(s.sd) << ',' << fmt_double(s.p95) << '\n';
        }
    } else {
        const auto [mean_t1, n] = fitted_mean(0, false);
        f << "all," << n << ',' << fmt_double(mean_t1) << ",,,,\n";
    }
}

inline void run_fit(const RunConfig& cfg, const std::filesystem::path& stack_dir,
                    const std::filesystem::path& out) {
    cfg.validate();
    const MolliStack stack = read_stack(stack_dir);
    const MapSet maps = fit_map(stack, cfg.fit, resolve_threads(cfg.threads));
    write_maps(out / "maps", maps);
    write_map_summary(out / "summary.csv", maps, stack);
    echo_config(out, cfg);
}

inline void run_train(const RunConfig& cfg, const std::filesystem::path& out,
                      const std::filesystem::path& resume_path = {},
                      const std::function<void(const HistoryRow&)>& on_epoch = {}) {
    cfg.validate();
    std::filesystem::create_directories(out);
    TrainState resume_state;
    const TrainState* resume = nullptr;
    if (!resume_path.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_path);
        if (ckpt.seed != cfg.seed)
            throw ConfigError("train: checkpoint seed differs from config seed; "
                              "resuming would break reproducibility");
        if (ckpt.norm.time_scale != cfg.norm.time_scale)
            throw ConfigError("train: checkpoint normalization differs from config");
        resume_state = std::move(ckpt.state);
        resume = &resume_state;
    }
    const TrainResult result = train(cfg.rnn, cfg.norm, cfg.batch_spec(), cfg.seed,
                                     resolve_threads(cfg.threads), resume, on_epoch);
    save_checkpoint(out / "checkpoint.mrck", result.state, cfg.norm, cfg.seed);
    write_history_csv(out / "history.csv", result.history);
    echo_config(out, cfg);
}

inline void run_infer(const RunConfig& cfg, const std::filesystem::path& stack_dir,
                      const std::filesystem::path& checkpoint_path,
                      const std::filesystem::path& out) {
    cfg.validate();
    const MolliStack stack = read_stack(stack_dir);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (static_cast<int>(stack.tis.size()) != cfg.scheme.total_acquisitions())
        throw DataError("infer: stack has " + std::to_string(stack.tis.size()) +
                        " TIs but the configured scheme acquires " +
                        std::to_string(cfg.scheme.total_acquisitions()));
    if (ckpt.norm.time_scale != cfg.norm.time_scale)
        throw DataError("infer: checkpoint normalization differs from config");
    const MapSet maps =
        infer_map(ckpt.state.weights, stack, ckpt.norm, resolve_threads(cfg.threads));
    write_maps(out / "maps", maps);
    write_map_summary(out / "summary.csv", maps, stack);
    echo_config(out, cfg);
}

// Returns the number of failed conditions (0 = clean run).
inline int run_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint_path,
                    const std::filesystem::path& out,
                    std::vector<ErrorReport>* reports_out = nullptr) {
    cfg.validate();
    std::filesystem::create_directories(out);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const MolliStack base = make_phantom_stack(cfg);

    CompareOptions opts;
    opts.conditions = cfg.eval_conditions;
    opts.fit = cfg.fit;
    opts.noise_frac = cfg.curve_gen.noise_frac;
    opts.motion = cfg.motion;
    opts.threads = resolve_threads(cfg.threads);

    const Rng root(cfg.seed);
    const auto reports =
        compare_methods(base, ckpt.state.weights, ckpt.norm, opts, out, root);

    json report;
    report["seed"] = cfg.seed;
    report["results"] = json::array();
    int failures = 0;
    for (const auto& r : reports) {
        report["results"].push_back(to_report_json(r));
        if (!r.error.empty())
            ++failures;
    }
    auto rf = detail::open_out(out / "report.json");
    rf << report.dump(2) << '\n';
    write_summary_csv(out / "summary.csv", reports);
    echo_config(out, cfg);
    if (reports_out)
        *reports_out = reports;
    return failures;
}

} // namespace molli
