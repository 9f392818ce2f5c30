// image.hpp - 2D grids and the multi-TI image stack.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "molli/errors.hpp"

namespace molli {

template <class T>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> data; // row-major

    Grid() = default;
    Grid(int w, int h, T fill = T{})
        : width(w), height(h),
          data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(int w, int h) const { return width == w && height == h; }
};

// Region labels used by the phantom and all region statistics.
enum RegionLabel : std::uint8_t {
    region_background = 0,
    region_myocardium = 1,
    region_blood = 2,
};

inline const char* region_name(std::uint8_t label) {
    switch (label) {
        case region_background: return "background";
        case region_myocardium: return "myocardium";
        case region_blood: return "blood";
    }
    return "?";
}

// Per-pixel ground truth: the model parameter maps plus the region labels.
struct ParamMaps {
    Grid<double> a, b, t1_star;
    Grid<std::uint8_t> labels;
};

struct MolliStack {
    std::vector<Grid<float>> images;    // one magnitude image per TI
    std::vector<double> tis;            // ms, sorted ascending
    double pixel_spacing = 1.5;         // mm/pixel
    std::optional<ParamMaps> ground_truth;
    std::vector<int> corrupted;         // indices altered by motion, if any

    int width() const { return images.empty() ? 0 : images.front().width; }
    int height() const { return images.empty() ? 0 : images.front().height; }

    void validate() const {
        if (images.empty())
            throw DataError("stack: no images");
        if (images.size() != tis.size())
            throw DataError("stack: image count != TI count");
        for (const auto& im : images)
            if (!im.same_shape(width(), height()))
                throw DataError("stack: images differ in dimensions");
        for (std::size_t i = 1; i < tis.size(); ++i)
            if (!(tis[i] > tis[i - 1]))
                throw DataError("stack: TIs not strictly increasing");
        if (!(pixel_spacing > 0.0))
            throw DataError("stack: pixel spacing must be positive");
    }
};

} // namespace molli
