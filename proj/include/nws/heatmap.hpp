#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace nws {

using Rgb = std::array<std::uint8_t, 3>;

// 256-step ramp: index i maps to (i, 255 - |2i - 255|, 255 - i), blue to red.
Rgb ramp_color(std::size_t index);
// round((v - lo) / (hi - lo) * 255) clamped to [0, 255]; 0 when hi <= lo.
std::size_t ramp_index(double v, double lo, double hi);

// Binary PPM (P6), one pixel per cell, first row at the top. The range and
// ramp are described in a sidecar `<path>.txt`.
void write_heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& cells, double lo, double hi);

}  // namespace nws
