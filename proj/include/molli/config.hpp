// config.hpp - one serializable configuration drives every command.
//
// Defaults live in the structs; a JSON config file overrides defaults and
// command-line flags override the file.  Every command echoes its fully
// resolved configuration to the output directory, and re-running with the
// echoed file reproduces the outputs byte for byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "molli/eval.hpp"
#include "molli/io.hpp"
#include "molli/lmfit.hpp"
#include "molli/motion.hpp"
#include "molli/phantom.hpp"
#include "molli/rnn.hpp"
#include "molli/schedule.hpp"
#include "molli/synth.hpp"

namespace molli {

struct RunConfig {
    std::uint64_t seed = 42;
    int threads = 0; // 0: use all hardware threads
    MolliScheme scheme = default_scheme();
    std::vector<double> base_tis = default_base_tis();
    RrModel rr;
    ParamRanges ranges;
    CurveGenOptions curve_gen;
    PhantomSpec phantom;
    MotionSpec motion;
    FitOptions fit;
    RnnConfig rnn;
    NormSpec norm;
    int gen_count = 65535;           // gen-curves batch size
    bool phantom_apply_motion = false;
    bool phantom_apply_noise = false;
    std::vector<std::string> eval_conditions = all_conditions();

    BatchSpec batch_spec() const {
        BatchSpec s;
        s.ranges = ranges;
        s.scheme = scheme;
        s.base_tis = base_tis;
        s.rr = rr;
        s.gen = curve_gen;
        return s;
    }

    void validate() const {
        ranges.validate();
        phantom.validate();
        fit.validate();
        rnn.validate();
        norm.validate();
        if (base_tis.size() != scheme.blocks.size())
            throw ConfigError("config: base_tis_ms must list one TI per scheme block");
        if (gen_count <= 0 || gen_count % 3 != 0)
            throw ConfigError("config: gen_count must be a positive multiple of 3");
        for (const auto& c : eval_conditions)
            if (std::find(all_conditions().begin(), all_conditions().end(), c) ==
                all_conditions().end())
                throw ConfigError("config: unknown eval condition '" + c + "'");
    }
};

// --- json bindings ----------------------------------------------------------

inline void to_json(json& j, const RrModel& m) {
    j = json{{"hr_min_bpm", m.hr_min_bpm},
             {"hr_max_bpm", m.hr_max_bpm},
             {"jitter_sd_ms", m.jitter_sd_ms},
             {"min_rr_ms", m.min_rr_ms}};
}
inline void from_json(const json& j, RrModel& m) {
    j.at("hr_min_bpm").get_to(m.hr_min_bpm);
    j.at("hr_max_bpm").get_to(m.hr_max_bpm);
    j.at("jitter_sd_ms").get_to(m.jitter_sd_ms);
    j.at("min_rr_ms").get_to(m.min_rr_ms);
}

inline void to_json(json& j, const ParamRanges& r) {
    j = json{{"a", {r.a_min, r.a_max}},
             {"ratio", {r.ratio_min, r.ratio_max}},
             {"t1_star_ms", {r.t1s_min, r.t1s_max}}};
}
inline void from_json(const json& j, ParamRanges& r) {
    r.a_min = j.at("a").at(0);
    r.a_max = j.at("a").at(1);
    r.ratio_min = j.at("ratio").at(0);
    r.ratio_max = j.at("ratio").at(1);
    r.t1s_min = j.at("t1_star_ms").at(0);
    r.t1s_max = j.at("t1_star_ms").at(1);
}

inline void to_json(json& j, const CurveGenOptions& o) {
    j = json{{"noise_frac", o.noise_frac},
             {"outlier_count", o.outlier.count},
             {"outlier_factor", {o.outlier.factor_min, o.outlier.factor_max}},
             {"clamp_negative", o.clamp_negative}};
}
inline void from_json(const json& j, CurveGenOptions& o) {
    j.at("noise_frac").get_to(o.noise_frac);
    j.at("outlier_count").get_to(o.outlier.count);
    o.outlier.factor_min = j.at("outlier_factor").at(0);
    o.outlier.factor_max = j.at("outlier_factor").at(1);
    j.at("clamp_negative").get_to(o.clamp_negative);
}

inline void to_json(json& j, const RegionDist& d) {
    j = json{{"a_mean", d.a_mean},         {"a_sd", d.a_sd},
             {"ratio_mean", d.ratio_mean}, {"ratio_sd", d.ratio_sd},
             {"t1_mean_ms", d.t1_mean},    {"t1_sd_ms", d.t1_sd}};
}
inline void from_json(const json& j, RegionDist& d) {
    j.at("a_mean").get_to(d.a_mean);
    j.at("a_sd").get_to(d.a_sd);
    j.at("ratio_mean").get_to(d.ratio_mean);
    j.at("ratio_sd").get_to(d.ratio_sd);
    j.at("t1_mean_ms").get_to(d.t1_mean);
    j.at("t1_sd_ms").get_to(d.t1_sd);
}

inline void to_json(json& j, const PhantomSpec& p) {
    j = json{{"width", p.width},
             {"height", p.height},
             {"pixel_spacing_mm", p.pixel_spacing},
             {"ring_outer_px", p.ring_outer_px},
             {"ring_inner_px", p.ring_inner_px},
             {"myocardium", p.myocardium},
             {"blood", p.blood},
             {"background_amplitude", p.background_amplitude}};
}
inline void from_json(const json& j, PhantomSpec& p) {
    j.at("width").get_to(p.width);
    j.at("height").get_to(p.height);
    j.at("pixel_spacing_mm").get_to(p.pixel_spacing);
    j.at("ring_outer_px").get_to(p.ring_outer_px);
    j.at("ring_inner_px").get_to(p.ring_inner_px);
    j.at("myocardium").get_to(p.myocardium);
    j.at("blood").get_to(p.blood);
    j.at("background_amplitude").get_to(p.background_amplitude);
}

inline void to_json(json& j, const MotionSpec& m) {
    j = json{{"rotation_deg", m.rotation_deg},
             {"tx_mm", m.tx_mm},
             {"ty_mm", m.ty_mm},
             {"targets", m.target_indices},
             {"mode", m.mode == MotionSpec::Mode::compose_all ? "compose-all" : "split-pair"},
             {"fill", m.fill}};
}
inline void from_json(const json& j, MotionSpec& m) {
    j.at("rotation_deg").get_to(m.rotation_deg);
    j.at("tx_mm").get_to(m.tx_mm);
    j.at("ty_mm").get_to(m.ty_mm);
    j.at("targets").get_to(m.target_indices);
    j.at("fill").get_to(m.fill);
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "compose-all")
        m.mode = MotionSpec::Mode::compose_all;
    else if (mode == "split-pair")
        m.mode = MotionSpec::Mode::split_pair;
    else
        throw ConfigError("motion: unknown mode '" + mode + "'");
}

inline void to_json(json& j, const FitOptions& f) {
    j = json{{"max_iterations", f.max_iterations},
             {"cost_tolerance", f.cost_tolerance},
             {"param_tolerance", f.param_tolerance},
             {"initial_damping", f.initial_damping},
             {"damping_up", f.damping_up},
             {"damping_down", f.damping_down},
             {"polarity_search", f.polarity_search}};
}
inline void from_json(const json& j, FitOptions& f) {
    j.at("max_iterations").get_to(f.max_iterations);
    j.at("cost_tolerance").get_to(f.cost_tolerance);
    j.at("param_tolerance").get_to(f.param_tolerance);
    j.at("initial_damping").get_to(f.initial_damping);
    j.at("damping_up").get_to(f.damping_up);
    j.at("damping_down").get_to(f.damping_down);
    j.at("polarity_search").get_to(f.polarity_search);
}

inline void to_json(json& j, const RunConfig& c) {
    j = json{{"seed", c.seed},
             {"threads", c.threads},
             {"scheme", {{"pattern", c.scheme.pattern()}, {"base_tis_ms", c.base_tis}}},
             {"rr", c.rr},
             {"ranges", c.ranges},
             {"curve_gen", c.curve_gen},
             {"phantom", c.phantom},
             {"motion", c.motion},
             {"fit", c.fit},
             {"rnn", c.rnn},
             {"norm", c.norm},
             {"gen_count", c.gen_count},
             {"phantom_apply_motion", c.phantom_apply_motion},
             {"phantom_apply_noise", c.phantom_apply_noise},
             {"eval_conditions", c.eval_conditions}};
}
inline void from_json(const json& j, RunConfig& c) {
    j.at("seed").get_to(c.seed);
    j.at("threads").get_to(c.threads);
    c.scheme = MolliScheme::parse(j.at("scheme").at("pattern").get<std::string>());
    j.at("scheme").at("base_tis_ms").get_to(c.base_tis);
    j.at("rr").get_to(c.rr);
    j.at("ranges").get_to(c.ranges);
    j.at("curve_gen").get_to(c.curve_gen);
    j.at("phantom").get_to(c.phantom);
    j.at("motion").get_to(c.motion);
    j.at("fit").get_to(c.fit);
    j.at("rnn").get_to(c.rnn);
    j.at("norm").get_to(c.norm);
    j.at("gen_count").get_to(c.gen_count);
    j.at("phantom_apply_motion").get_to(c.phantom_apply_motion);
    j.at("phantom_apply_noise").get_to(c.phantom_apply_noise);
    j.at("eval_conditions").get_to(c.eval_conditions);
}

// Partial configs are allowed in files: unknown keys are rejected, missing
// keys keep their defaults.
inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
        throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    json merged = json(RunConfig{});
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!merged.contains(it.key()))
            throw ConfigError("config " + path.string() + ": unknown key '" + it.key() + "'");
        if (merged[it.key()].is_object() && it.value().is_object()) {
            for (auto sub = it.value().begin(); sub != it.value().end(); ++sub) {
                if (!merged[it.key()].contains(sub.key()))
                    throw ConfigError("config " + path.string() + ": unknown key '" +
                                      it.key() + "." + sub.key() + "'");
                merged[it.key()][sub.key()] = sub.value();
            }
        } else {
            merged[it.key()] = it.value();
        }
    }
    RunConfig cfg;
    try {
        merged.get_to(cfg);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

inline void echo_config(const std::filesystem::path& out_dir, const RunConfig& cfg) {
    std::filesystem::create_directories(out_dir);
    auto f = detail::open_out(out_dir / "config.json");
    f << json(cfg).dump(2) << '\n';
}

} // namespace molli
