// phantom.hpp - procedural cardiac phantom: a blood-pool disc inside a
// myocardial ring on a zero-signal background, with per-pixel parameter
// draws, rendered into a synthetic MOLLI stack.

#pragma once

#include <cmath>
#include <cstdint>

#include "molli/errors.hpp"
#include "molli/image.hpp"
#include "molli/rng.hpp"
#include "molli/schedule.hpp"
#include "molli/signal_model.hpp"
#include "molli/threading.hpp"

namespace molli {

// Normal parameter distribution of one tissue region.  T1 is drawn directly
// and converted to T1* through the ratio, so a region's T1 statistics are
// exactly what is configured.
struct RegionDist {
    double a_mean = 0.6, a_sd = 0.05;
    double ratio_mean = 1.9, ratio_sd = 0.05;
    double t1_mean = 1100.0, t1_sd = 50.0;
};

struct PhantomSpec {
    int width = 192, height = 192;
    double pixel_spacing = 1.5; // mm
    double ring_outer_px = 45.0;
    double ring_inner_px = 30.0; // also the blood-pool radius
    RegionDist myocardium{0.6, 0.05, 1.9, 0.05, 1100.0, 50.0};
    RegionDist blood{0.85, 0.05, 1.9, 0.05, 1900.0, 60.0};
    double background_amplitude = 1e-6;

    void validate() const {
        if (width < 1 || height < 1)
            throw ConfigError("phantom: empty grid");
        if (!(pixel_spacing > 0.0))
            throw ConfigError("phantom: pixel spacing must be positive");
        if (!(ring_inner_px < ring_outer_px))
            throw ConfigError("phantom: myocardium ring has zero area "
                              "(inner radius must be < outer radius)");
        if (ring_inner_px < 0.0)
            throw ConfigError("phantom: negative ring radius");
    }
};

inline ModelParams draw_region_params(Rng& rng, const RegionDist& d) {
    ModelParams p;
    p.a = std::max(1e-4, rng.gaussian(d.a_mean, d.a_sd));
    const double ratio = std::max(1.01, rng.gaussian(d.ratio_mean, d.ratio_sd));
    const double t1 = std::max(1.0, rng.gaussian(d.t1_mean, d.t1_sd));
    p.b = p.a * ratio;
    p.t1_star = t1 / (ratio - 1.0);
    return p;
}

// Pixel i draws from its own child stream, so the maps are independent of
// traversal order.
inline ParamMaps gen_phantom(const PhantomSpec& spec, const Rng& rng) {
    spec.validate();
    ParamMaps maps;
    maps.a = Grid<double>(spec.width, spec.height);
    maps.b = Grid<double>(spec.width, spec.height);
    maps.t1_star = Grid<double>(spec.width, spec.height);
    maps.labels = Grid<std::uint8_t>(spec.width, spec.height, region_background);

    const double cx = (spec.width - 1) / 2.0;
    const double cy = (spec.height - 1) / 2.0;
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * spec.width +
                                  static_cast<std::size_t>(x);
            const double r = std::hypot(x - cx, y - cy);
            Rng pix = rng.child(static_cast<std::uint64_t>(i));
            ModelParams p;
            std::uint8_t label;
            if (r <= spec.ring_inner_px) {
                label = region_blood;
                p = draw_region_params(pix, spec.blood);
            } else if (r <= spec.ring_outer_px) {
                label = region_myocardium;
                p = draw_region_params(pix, spec.myocardium);
            } else {
                label = region_background;
                p.a = p.b = spec.background_amplitude;
                p.t1_star = 1000.0; // masked out of all metrics
            }
            maps.labels.data[i] = label;
            maps.a.data[i] = p.a;
            maps.b.data[i] = p.b;
            maps.t1_star.data[i] = p.t1_star;
        }
    }
    return maps;
}

inline MolliStack render_molli_stack(const ParamMaps& maps, const TiSchedule& schedule,
                                     double pixel_spacing, int threads = 1) {
    const int w = maps.a.width, h = maps.a.height;
    if (!maps.b.same_shape(w, h) || !maps.t1_star.same_shape(w, h) ||
        !maps.labels.same_shape(w, h))
        throw DataError("render_molli_stack: parameter grids differ in dimensions");

    MolliStack stack;
    stack.tis = schedule.effective_tis;
    stack.pixel_spacing = pixel_spacing;
    stack.images.assign(stack.tis.size(), Grid<float>(w, h));
    const std::size_t npix = maps.a.size();
    parallel_for(npix, threads, [&](std::size_t i) {
        const ModelParams p{maps.a.data[i], maps.b.data[i], maps.t1_star.data[i]};
        for (std::size_t k = 0; k < stack.tis.size(); ++k)
            stack.images[k].data[i] = static_cast<float>(molli_signal(p, stack.tis[k]));
    });
    stack.ground_truth = maps;
    return stack;
}

// Additive Gaussian noise with SD = frac of each pixel's true A, clamped at
// zero like any magnitude image.  Needs ground truth to scale the noise.
inline MolliStack add_stack_noise(const MolliStack& stack, double frac, const Rng& rng) {
    if (!stack.ground_truth)
        throw DataError("add_stack_noise: stack carries no ground truth");
    MolliStack out = stack;
    const std::size_t npix = stack.images.front().size();
    for (std::size_t k = 0; k < out.images.size(); ++k) {
        for (std::size_t i = 0; i < npix; ++i) {
            Rng pix = rng.child(k * npix + i);
            const double sd = frac * stack.ground_truth->a.data[i];
            double v = out.images[k].data[i] + pix.gaussian(0.0, sd);
            out.images[k].data[i] = static_cast<float>(v < 0.0 ? 0.0 : v);
        }
    }
    return out;
}

} // namespace molli
