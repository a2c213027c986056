#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deepgp/common.hpp"

namespace deepgp {

// Static vector-graphics emission for the evaluation outputs. Each plot is a
// self-contained SVG; the numbers behind every figure are also written as CSV
// by the callers.

void svg_scatter(const std::filesystem::path& path, const Matrix& xy, const std::vector<int>& labels,
                 const std::string& title);

void svg_bars(const std::filesystem::path& path, const std::vector<std::string>& names,
              const std::vector<Vector>& groups, const std::string& title);

// Row-major square grayscale tiles (e.g. 16x16 pixel vectors).
void svg_image_grid(const std::filesystem::path& path, const Matrix& images, Index tile_width,
                    const std::string& title);

void svg_lines(const std::filesystem::path& path, const Matrix& x, const Matrix& ys, const std::string& title);

}  // namespace deepgp
