#pragma once

#include <filesystem>
#include <vector>

#include "mtlvc/types.hpp"

namespace mtlvc::image {

// Greyscale PGM of a T x F feature matrix with values in [0, 1]: time runs
// left to right, bin 0 at the bottom.
void WriteSpectrogramPgm(const Matrix& features, const std::filesystem::path& path);

// Stacks several T_i x F matrices vertically (first on top) with a 1-pixel
// separator and pads shorter ones with zeros on the right.
void WriteSpectrogramStackPgm(const std::vector<Matrix>& rows, const std::filesystem::path& path);

// Colour heatmap (blue -> red over [lo, hi]) with `cell` pixels per entry.
void WriteHeatmapPpm(const Matrix& values, double lo, double hi, int cell, const std::filesystem::path& path);

}  // namespace mtlvc::image
