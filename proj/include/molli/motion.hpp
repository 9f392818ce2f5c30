// motion.hpp - rigid in-plane corruption of selected stack images.
//
// Rotation about the image center followed by a translation, resampled with
// bilinear interpolation; translations are given in mm and converted through
// the pixel spacing.

#pragma once

#include <cmath>
#include <algorithm>
#include <vector>

#include "molli/errors.hpp"
#include "molli/image.hpp"
#include "molli/rng.hpp"

namespace molli {

struct MotionSpec {
    double rotation_deg = 15.0;
    double tx_mm = 15.0;
    double ty_mm = 15.0;
    std::vector<int> target_indices; // empty: draw a random distinct pair
    // compose_all: every target image gets rotation + both translations.
    // split_pair: first target rotates, second target translates.
    enum class Mode { compose_all, split_pair };
    Mode mode = Mode::compose_all;
    double fill = 0.0;

    void validate(int n_images) const {
        std::vector<int> seen;
        for (int t : target_indices) {
            if (t < 0 || t >= n_images)
                throw DataError("motion: target index out of range");
            if (std::find(seen.begin(), seen.end(), t) != seen.end())
                throw DataError("motion: duplicate target index");
            seen.push_back(t);
        }
    }
};

// Inverse-mapped resampling: out(x) = in(T^-1 x) with
// T = translate(t) . rotate_about_center(theta), so an impulse moves by +t.
inline Grid<float> rigid_transform(const Grid<float>& src, double rotation_deg,
                                   double tx_px, double ty_px, double fill) {
    if (rotation_deg == 0.0 && tx_px == 0.0 && ty_px == 0.0)
        return src; // exact no-op shortcut
    const double th = rotation_deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double cx = (src.width - 1) / 2.0, cy = (src.height - 1) / 2.0;

    Grid<float> out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            const double vx = x - cx - tx_px;
            const double vy = y - cy - ty_px;
            const double xs = cx + c * vx + s * vy;
            const double ys = cy - s * vx + c * vy;
            const int x0 = static_cast<int>(std::floor(xs));
            const int y0 = static_cast<int>(std::floor(ys));
            const double fx = xs - x0, fy = ys - y0;
            auto sample = [&](int xi, int yi) -> double {
                if (xi < 0 || xi >= src.width || yi < 0 || yi >= src.height)
                    return fill;
                return src.at(xi, yi);
            };
            const double v = (1.0 - fy) * ((1.0 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0)) +
                             fy * ((1.0 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1));
            out.at(x, y) = static_cast<float>(v);
        }
    }
    return out;
}

inline MolliStack apply_motion(const MolliStack& stack, const MotionSpec& motion, Rng& rng) {
    stack.validate();
    const int n = static_cast<int>(stack.images.size());
    if (n < 2)
        throw DataError("apply_motion: stack needs at least 2 images");
    motion.validate(n);

    std::vector<int> targets = motion.target_indices;
    if (targets.empty()) {
        const int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        int second = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
        if (second >= first)
            ++second;
        targets = {first, second};
        std::sort(targets.begin(), targets.end());
    }

    const double tx_px = motion.tx_mm / stack.pixel_spacing;
    const double ty_px = motion.ty_mm / stack.pixel_spacing;

    MolliStack out = stack;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto idx = static_cast<std::size_t>(targets[i]);
        double rot = motion.rotation_deg, tx = tx_px, ty = ty_px;
        if (motion.mode == MotionSpec::Mode::split_pair) {
            if (i == 0) {
                tx = ty = 0.0;
            } else {
                rot = 0.0;
            }
        }
        out.images[idx] = rigid_transform(stack.images[idx], rot, tx, ty, motion.fill);
    }
    out.corrupted = targets;
    return out;
}

} // namespace molli
