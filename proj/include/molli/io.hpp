// io.hpp - on-disk formats: curve batches (CSV + packed binary), stack and
// map directories (JSON manifest + raw little-endian float32 planes),
// weight checkpoints, history CSV, and PGM previews.
//
// All text output formats doubles with %.17g so reruns are byte-identical
// and values round-trip exactly.

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "molli/errors.hpp"
#include "molli/image.hpp"
#include "molli/lmfit.hpp"
#include "molli/synth.hpp"
#include "molli/train.hpp"

namespace molli {

static_assert(std::endian::native == std::endian::little,
              "raw plane formats assume a little-endian host");

using json = nlohmann::json;

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
    std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
    if (!f)
        throw DataError("cannot open for writing: " + path.string());
    return f;
}

inline std::ifstream open_in(const std::filesystem::path& path, bool binary = false) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f)
        throw DataError("cannot open for reading: " + path.string());
    return f;
}

template <class T>
void write_raw(std::ostream& os, const T* data, std::size_t count) {
    os.write(reinterpret_cast<const char*>(data),
             static_cast<std::streamsize>(count * sizeof(T)));
}

template <class T>
void read_raw(std::istream& is, T* data, std::size_t count) {
    is.read(reinterpret_cast<char*>(data),
            static_cast<std::streamsize>(count * sizeof(T)));
    if (!is)
        throw DataError("unexpected end of file in raw block");
}

} // namespace detail

// --- curve batches ----------------------------------------------------------

inline void write_curves_csv(const std::filesystem::path& path,
                             const std::vector<CurveSample>& samples) {
    auto f = detail::open_out(path);
    const std::size_t n = samples.empty() ? 0 : samples.front().curve.times.size();
    f << "id,class,n";
    for (std::size_t k = 1; k <= n; ++k) f << ",t_" << k;
    for (std::size_t k = 1; k <= n; ++k) f << ",y_" << k;
    f << ",a,b,t1_star\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const CurveSample& s = samples[i];
        if (s.curve.times.size() != n)
            throw DataError("write_curves_csv: curves differ in length");
        f << i << ',' << to_string(s.cls) << ',' << n;
        for (double t : s.curve.times) f << ',' << fmt_double(t);
        for (double y : s.curve.values) f << ',' << fmt_double(y);
        f << ',' << fmt_double(s.truth.a) << ',' << fmt_double(s.truth.b) << ','
          << fmt_double(s.truth.t1_star) << '\n';
    }
}

inline std::vector<CurveSample> read_curves_csv(const std::filesystem::path& path) {
    auto f = detail::open_in(path);
    std::string line;
    if (!std::getline(f, line))
        throw DataError("curves csv: empty file " + path.string());
    std::vector<CurveSample> out;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                cells.push_back(line.substr(pos));
                break;
            }
            cells.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (cells.size() < 4)
            throw DataError("curves csv: short row at line " + std::to_string(lineno));
        CurveSample s;
        s.cls = perturbation_from_string(cells[1]);
        const std::size_t n = std::stoul(cells[2]);
        if (cells.size() != 3 + 2 * n + 3)
            throw DataError("curves csv: wrong cell count at line " + std::to_string(lineno));
        s.curve.times.resize(n);
        s.curve.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) s.curve.times[k] = std::stod(cells[3 + k]);
        for (std::size_t k = 0; k < n; ++k) s.curve.values[k] = std::stod(cells[3 + n + k]);
        s.truth.a = std::stod(cells[3 + 2 * n]);
        s.truth.b = std::stod(cells[3 + 2 * n + 1]);
        s.truth.t1_star = std::stod(cells[3 + 2 * n + 2]);
        s.schedule.effective_tis = s.curve.times;
        out.push_back(std::move(s));
    }
    return out;
}

// Packed binary batch: magic "MCRV", u32 version, u32 count, then per record
// u32 id, u32 class, u32 n, f64 t[n], f64 y[n], f64 a, f64 b, f64 t1_star.
inline void write_curves_mcrv(const std::filesystem::path& path,
                              const std::vector<CurveSample>& samples) {
    auto f = detail::open_out(path, true);
    f.write("MCRV", 4);
    const std::uint32_t version = 1;
    const std::uint32_t count = static_cast<std::uint32_t>(samples.size());
    detail::write_raw(f, &version, 1);
    detail::write_raw(f, &count, 1);
    for (std::uint32_t i = 0; i < count; ++i) {
        const CurveSample& s = samples[i];
        const std::uint32_t cls = static_cast<std::uint32_t>(s.cls);
        const std::uint32_t n = static_cast<std::uint32_t>(s.curve.times.size());
        detail::write_raw(f, &i, 1);
        detail::write_raw(f, &cls, 1);
        detail::write_raw(f, &n, 1);
        detail::write_raw(f, s.curve.times.data(), n);
        detail::write_raw(f, s.curve.values.data(), n);
        const double p[3] = {s.truth.a, s.truth.b, s.truth.t1_star};
        detail::write_raw(f, p, 3);
    }
}

inline std::vector<CurveSample> read_curves_mcrv(const std::filesystem::path& path) {
    auto f = detail::open_in(path, true);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MCRV", 4) != 0)
        throw DataError("curves binary: bad magic in " + path.string());
    std::uint32_t version = 0, count = 0;
    detail::read_raw(f, &version, 1);
    if (version != 1)
        throw DataError("curves binary: unsupported version");
    detail::read_raw(f, &count, 1);
    std::vector<CurveSample> out(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t id = 0, cls = 0, n = 0;
        detail::read_raw(f, &id, 1);
        detail::read_raw(f, &cls, 1);
        detail::read_raw(f, &n, 1);
        if (cls > 2 || n > 4096)
            throw DataError("curves binary: corrupt record");
        CurveSample& s = out[i];
        s.cls = static_cast<Perturbation>(cls);
        s.curve.times.resize(n);
        s.curve.values.resize(n);
        detail::read_raw(f, s.curve.times.data(), n);
        detail::read_raw(f, s.curve.values.data(), n);
        double p[3];
        detail::read_raw(f, p, 3);
        s.truth = {p[0], p[1], p[2]};
        s.schedule.effective_tis = s.curve.times;
    }
    return out;
}

// --- float planes -----------------------------------------------------------

inline void write_plane_f32(const std::filesystem::path& path, const Grid<float>& g) {
    auto f = detail::open_out(path, true);
    detail::write_raw(f, g.data.data(), g.data.size());
}

inline void write_plane_f32(const std::filesystem::path& path, const Grid<double>& g) {
    std::vector<float> tmp(g.data.size());
    for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = static_cast<float>(g.data[i]);
    auto f = detail::open_out(path, true);
    detail::write_raw(f, tmp.data(), tmp.size());
}

inline Grid<float> read_plane_f32(const std::filesystem::path& path, int w, int h) {
    auto f = detail::open_in(path, true);
    Grid<float> g(w, h);
    detail::read_raw(f, g.data.data(), g.data.size());
    return g;
}

// 8-bit preview with a fixed display window.
inline void write_pgm(const std::filesystem::path& path, const Grid<double>& g,
                      double lo, double hi) {
    auto f = detail::open_out(path, true);
    f << "P5\n" << g.width << " " << g.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(g.width));
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            double v = (g.at(x, y) - lo) / (hi - lo);
            v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(v * 255.0 + 0.5);
        }
        detail::write_raw(f, row.data(), row.size());
    }
}

// --- stack directories ------------------------------------------------------

inline void write_stack(const std::filesystem::path& dir, const MolliStack& stack) {
    stack.validate();
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "molli-stack";
    manifest["version"] = 1;
    manifest["width"] = stack.width();
    manifest["height"] = stack.height();
    manifest["pixel_spacing_mm"] = stack.pixel_spacing;
    manifest["tis_ms"] = stack.tis;
    manifest["corrupted_indices"] = stack.corrupted;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < stack.images.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "image_%03zu.f32", k);
        names.emplace_back(name);
        write_plane_f32(dir / name, stack.images[k]);
    }
    manifest["images"] = names;
    if (stack.ground_truth) {
        const ParamMaps& gt = *stack.ground_truth;
        manifest["ground_truth"] = {{"a", "gt_a.f32"},
                                    {"b", "gt_b.f32"},
                                    {"t1_star", "gt_t1_star.f32"},
                                    {"labels", "labels.u8"}};
        write_plane_f32(dir / "gt_a.f32", gt.a);
        write_plane_f32(dir / "gt_b.f32", gt.b);
        write_plane_f32(dir / "gt_t1_star.f32", gt.t1_star);
        auto lf = detail::open_out(dir / "labels.u8", true);
        detail::write_raw(lf, gt.labels.data.data(), gt.labels.data.size());
    }
    auto mf = detail::open_out(dir / "manifest.json");
    mf << manifest.dump(2) << '\n';
}

inline MolliStack read_stack(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    auto mf = detail::open_in(manifest_path);
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw DataError("stack manifest " + manifest_path.string() + ": " + e.what());
    }
    try {
        if (manifest.at("format") != "molli-stack")
            throw DataError("stack manifest: not a stack directory");
        MolliStack stack;
        const int w = manifest.at("width").get<int>();
        const int h = manifest.at("height").get<int>();
        stack.pixel_spacing = manifest.at("pixel_spacing_mm").get<double>();
        stack.tis = manifest.at("tis_ms").get<std::vector<double>>();
        stack.corrupted = manifest.at("corrupted_indices").get<std::vector<int>>();
        for (const auto& name : manifest.at("images"))
            stack.images.push_back(read_plane_f32(dir / name.get<std::string>(), w, h));
        if (manifest.contains("ground_truth")) {
            const auto& gt_names = manifest.at("ground_truth");
            ParamMaps gt;
            auto load_double = [&](const char* key) {
                const Grid<float> g =
                    read_plane_f32(dir / gt_names.at(key).get<std::string>(), w, h);
                Grid<double> d(w, h);
                for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] = g.data[i];
                return d;
            };
            gt.a = load_double("a");
            gt.b = load_double("b");
            gt.t1_star = load_double("t1_star");
            gt.labels = Grid<std::uint8_t>(w, h);
            auto lf = detail::open_in(dir / gt_names.at("labels").get<std::string>(), true);
            detail::read_raw(lf, gt.labels.data.data(), gt.labels.data.size());
            stack.ground_truth = std::move(gt);
        }
        stack.validate();
        return stack;
    } catch (const json::exception& e) {
        throw DataError("stack manifest " + manifest_path.string() + ": " + e.what());
    }
}

// --- map directories --------------------------------------------------------

inline void write_maps(const std::filesystem::path& dir, const MapSet& maps) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "molli-maps";
    manifest["version"] = 1;
    manifest["width"] = maps.width;
    manifest["height"] = maps.height;
    const std::pair<const char*, const Grid<double>*> planes[] = {
        {"t1", &maps.t1},         {"a", &maps.a},
        {"b", &maps.b},           {"t1_star", &maps.t1_star},
        {"residual", &maps.residual}, {"converged", &maps.converged},
        {"polarity_index", &maps.polarity_index}, {"valid", &maps.valid},
    };
    json names;
    for (const auto& [key, grid] : planes) {
        const std::string file = std::string(key) + ".f32";
        write_plane_f32(dir / file, *grid);
        names[key] = file;
    }
    manifest["planes"] = names;
    auto mf = detail::open_out(dir / "manifest.json");
    mf << manifest.dump(2) << '\n';
}

inline MapSet read_maps(const std::filesystem::path& dir) {
    auto mf = detail::open_in(dir / "manifest.json");
    json manifest;
    try {
        manifest = json::parse(mf);
        MapSet maps;
        maps.width = manifest.at("width").get<int>();
        maps.height = manifest.at("height").get<int>();
        auto load = [&](const char* key) {
            const Grid<float> g = read_plane_f32(
                dir / manifest.at("planes").at(key).get<std::string>(), maps.width,
                maps.height);
            Grid<double> d(maps.width, maps.height);
            for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] = g.data[i];
            return d;
        };
        maps.t1 = load("t1");
        maps.a = load("a");
        maps.b = load("b");
        maps.t1_star = load("t1_star");
        maps.residual = load("residual");
        maps.converged = load("converged");
        maps.polarity_index = load("polarity_index");
        maps.valid = load("valid");
        return maps;
    } catch (const json::exception& e) {
        throw DataError("maps manifest in " + dir.string() + ": " + e.what());
    }
}

// --- RNN checkpoints --------------------------------------------------------

inline void to_json(json& j, const NormSpec& n) { j = json{{"time_scale_ms", n.time_scale}}; }
inline void from_json(const json& j, NormSpec& n) { j.at("time_scale_ms").get_to(n.time_scale); }

inline void to_json(json& j, const RnnConfig& c) {
    j = json{{"hidden_units", c.hidden_units},
             {"input_features", c.input_features},
             {"output_units", c.output_units},
             {"epochs", c.epochs},
             {"curves_per_epoch", c.curves_per_epoch},
             {"batch_size", c.batch_size},
             {"learning_rate", c.learning_rate},
             {"lr_decay", c.lr_decay},
             {"adam_beta1", c.adam_beta1},
             {"adam_beta2", c.adam_beta2},
             {"adam_eps", c.adam_eps},
             {"loss_mode", c.loss_mode == LossMode::decomposed ? "decomposed" : "curve_mae"}};
}

inline void from_json(const json& j, RnnConfig& c) {
    j.at("hidden_units").get_to(c.hidden_units);
    j.at("input_features").get_to(c.input_features);
    j.at("output_units").get_to(c.output_units);
    j.at("epochs").get_to(c.epochs);
    j.at("curves_per_epoch").get_to(c.curves_per_epoch);
    j.at("batch_size").get_to(c.batch_size);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("lr_decay").get_to(c.lr_decay);
    j.at("adam_beta1").get_to(c.adam_beta1);
    j.at("adam_beta2").get_to(c.adam_beta2);
    j.at("adam_eps").get_to(c.adam_eps);
    const std::string mode = j.at("loss_mode").get<std::string>();
    if (mode == "decomposed")
        c.loss_mode = LossMode::decomposed;
    else if (mode == "curve_mae")
        c.loss_mode = LossMode::curve_mae;
    else
        throw ConfigError("unknown loss_mode '" + mode + "'");
}

// Checkpoint: magic "MRCK", u32 version, u64 header length, JSON header,
// then float64 tensor blobs in the declared order (weights, then the two
// Adam moment sets so training can resume exactly).
inline void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                            const NormSpec& norm, std::uint64_t seed) {
    auto f = detail::open_out(path, true);
    json header;
    header["format"] = "molli-rnn-checkpoint";
    header["version"] = 1;
    header["config"] = state.weights.config;
    header["norm"] = norm;
    header["seed"] = seed;
    header["epoch"] = state.epochs_done;
    header["adam_step"] = state.adam.step;
    json tensors = json::array();
    const char* names[] = {"lstm_w", "lstm_b", "head_w", "head_b"};
    auto blocks = state.weights.tensors.blocks();
    for (std::size_t i = 0; i < blocks.size(); ++i)
        tensors.push_back({{"name", names[i]}, {"size", blocks[i]->size()}});
    header["tensors"] = tensors;
    header["optimizer"] = true;

    const std::string head = header.dump();
    f.write("MRCK", 4);
    const std::uint32_t version = 1;
    detail::write_raw(f, &version, 1);
    const std::uint64_t head_len = head.size();
    detail::write_raw(f, &head_len, 1);
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto* b : state.weights.tensors.blocks())
        detail::write_raw(f, b->data(), b->size());
    for (const auto* b : state.adam.m.blocks())
        detail::write_raw(f, b->data(), b->size());
    for (const auto* b : state.adam.v.blocks())
        detail::write_raw(f, b->data(), b->size());
}

struct Checkpoint {
    TrainState state;
    NormSpec norm;
    std::uint64_t seed = 0;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto f = detail::open_in(path, true);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MRCK", 4) != 0)
        throw DataError("checkpoint " + path.string() + ": bad magic");
    std::uint32_t version = 0;
    detail::read_raw(f, &version, 1);
    if (version != 1)
        throw DataError("checkpoint: unsupported version");
    std::uint64_t head_len = 0;
    detail::read_raw(f, &head_len, 1);
    std::string head(head_len, '\0');
    f.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!f)
        throw DataError("checkpoint: truncated header");

    Checkpoint out;
    try {
        const json header = json::parse(head);
        if (header.at("format") != "molli-rnn-checkpoint")
            throw DataError("checkpoint: wrong format tag");
        header.at("config").get_to(out.state.weights.config);
        header.at("norm").get_to(out.norm);
        header.at("seed").get_to(out.seed);
        header.at("epoch").get_to(out.state.epochs_done);
        header.at("adam_step").get_to(out.state.adam.step);
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    out.state.weights.tensors = RnnTensors::zeros(out.state.weights.config);
    out.state.adam.m = RnnTensors::zeros(out.state.weights.config);
    out.state.adam.v = RnnTensors::zeros(out.state.weights.config);
    for (auto* b : out.state.weights.tensors.blocks())
        detail::read_raw(f, b->data(), b->size());
    for (auto* b : out.state.adam.m.blocks())
        detail::read_raw(f, b->data(), b->size());
    for (auto* b : out.state.adam.v.blocks())
        detail::read_raw(f, b->data(), b->size());
    return out;
}

inline void write_history_csv(const std::filesystem::path& path,
                              const std::vector<HistoryRow>& rows) {
    auto f = detail::open_out(path);
    f << "epoch,loss,val_t1_rel_err\n";
    for (const auto& r : rows)
        f << r.epoch << ',' << fmt_double(r.loss) << ',' << fmt_double(r.val_t1_rel_err)
          << '\n';
}

inline std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path) {
    auto f = detail::open_in(path);
    std::string line;
    std::getline(f, line);
    std::vector<HistoryRow> rows;
    while (std::getline(f, line)) {
        if (line.empty())
            continue;
        HistoryRow r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf", &r.epoch, &r.loss, &r.val_t1_rel_err) != 3)
            throw DataError("history csv: bad row '" + line + "'");
        rows.push_back(r);
    }
    return rows;
}

} // namespace molli
