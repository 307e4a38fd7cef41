#include "nws/heatmap.hpp"

#include "nws/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace nws {

Rgb ramp_color(std::size_t index) {
    if (index > 255) throw Error(fmt::format("ramp index {} outside 0..255", index));
    const int i = static_cast<int>(index);
    return {static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(255 - std::abs(2 * i - 255)), static_cast<std::uint8_t>(255 - i)};
}

std::size_t ramp_index(double v, double lo, double hi) {
    if (!(hi > lo) || !std::isfinite(v)) return 0;
    const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    return static_cast<std::size_t>(std::lround(t * 255.0));
}

void write_heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& cells, double lo, double hi) {
    if (cells.empty() || cells.front().empty()) throw Error("heatmap: empty map");
    const std::size_t w = cells.front().size(), h = cells.size();
    for (const auto& r : cells)
        if (r.size() != w) throw ShapeError("heatmap: ragged map");
    std::string buf = fmt::format("P6\n{} {}\n255\n", w, h);
    for (const auto& r : cells)
        for (double v : r) {
            const auto c = ramp_color(ramp_index(v, lo, hi));
            buf.append(reinterpret_cast<const char*>(c.data()), 3);
        }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    std::ofstream side(path.string() + ".txt", std::ios::trunc);
    if (!side) throw IoError(fmt::format("cannot write '{}.txt'", path.string()));
    side << fmt::format("image: {}\nwidth: {} (position bins, domain start on the left)\nheight: {} (rows in file order, first row at the top)\n"
                        "range: [{}, {}]\nramp: 256 steps, index = round((v - min) / (max - min) * 255) clamped, "
                        "rgb = (i, 255 - |2i - 255|, 255 - i)\n",
                        path.filename().string(), w, h, lo, hi);
}

}  // namespace nws
