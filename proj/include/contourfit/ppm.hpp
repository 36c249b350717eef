#ifndef CONTOURFIT_PPM_HPP
#define CONTOURFIT_PPM_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"
#include "contourfit/rng.hpp"

namespace contourfit {

/// Overlay visualization: the probability grid as a gray background with
/// each instance outlined in a seeded random color (binary P6).
inline void write_overlay_ppm(const std::filesystem::path& path, const Grid2D& background,
                              const std::vector<BinaryMask>& masks, std::uint64_t seed) {
    const int w = background.width, h = background.height;
    std::vector<std::array<std::uint8_t, 3>> img(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::clamp(background.data[i], 0.0, 1.0);
        const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
        img[i] = {g, g, g};
    }

    Rng rng(seed);
    for (const BinaryMask& m : masks) {
        if (!(m.width == w && m.height == h)) throw DimensionError("overlay: mask dimensions differ");
        const std::array<std::uint8_t, 3> color = {
            static_cast<std::uint8_t>(64 + rng.uniform_index(192)),
            static_cast<std::uint8_t>(64 + rng.uniform_index(192)),
            static_cast<std::uint8_t>(64 + rng.uniform_index(192))};
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!m.at(x, y)) continue;
                const bool boundary = x == 0 || x == w - 1 || y == 0 || y == h - 1 ||
                                      !m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) ||
                                      !m.at(x, y + 1);
                if (boundary) img[static_cast<std::size_t>(y) * w + x] = color;
            }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << "P6\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size() * 3));
}

} // namespace contourfit

#endif
