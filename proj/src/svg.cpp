#include "deepgp/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "deepgp/io.hpp"

namespace deepgp {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 480;
constexpr int kMargin = 48;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string color_for(int label) {
    const int n = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));
    int i = label % n;
    if (i < 0) i += n;
    return kPalette[i];
}

struct Canvas {
    std::ofstream out;

    Canvas(const std::filesystem::path& path, const std::string& title) : out(path, std::ios::binary) {
        require(out.good(), "svg: cannot open ", path.string(), " for writing");
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
            << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
        out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        out << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
               "font-size=\"14\">"
            << title << "</text>\n";
    }
    ~Canvas() { out << "</svg>\n"; }
};

struct Range {
    double lo = 0.0, hi = 1.0;
    void widen(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double map(double v, double out_lo, double out_hi) const {
        const double span = hi - lo;
        const double t = span > 0 ? (v - lo) / span : 0.5;
        return out_lo + t * (out_hi - out_lo);
    }
};

Range range_of(const Matrix& m) {
    Range r{m.minCoeff(), m.maxCoeff()};
    if (r.hi - r.lo < 1e-12) {
        r.lo -= 1.0;
        r.hi += 1.0;
    }
    return r;
}

}  // namespace

void svg_scatter(const std::filesystem::path& path, const Matrix& xy, const std::vector<int>& labels,
                 const std::string& title) {
    require(xy.cols() >= 2, "svg_scatter: need two columns");
    Canvas canvas(path, title);
    const Range rx = range_of(xy.col(0));
    const Range ry = range_of(xy.col(1));
    for (Index i = 0; i < xy.rows(); ++i) {
        const double px = rx.map(xy(i, 0), kMargin, kWidth - kMargin);
        const double py = ry.map(xy(i, 1), kHeight - kMargin, kMargin);
        const std::string color =
            labels.empty() ? std::string("#1f77b4") : color_for(labels[static_cast<std::size_t>(i)]);
        canvas.out << "<circle cx=\"" << format_double(px) << "\" cy=\"" << format_double(py)
                   << "\" r=\"4\" fill=\"" << color << "\" fill-opacity=\"0.75\"/>\n";
    }
}

void svg_bars(const std::filesystem::path& path, const std::vector<std::string>& names,
              const std::vector<Vector>& groups, const std::string& title) {
    require(!groups.empty() && names.size() == groups.size(), "svg_bars: names/groups mismatch");
    Canvas canvas(path, title);
    double peak = 1e-12;
    Index total = 0;
    for (const auto& g : groups) {
        total += g.size();
        if (g.size() > 0) peak = std::max(peak, g.maxCoeff());
    }
    const double plot_w = kWidth - 2.0 * kMargin;
    const double plot_h = kHeight - 2.0 * kMargin;
    const double bar_w = plot_w / std::max<Index>(total + static_cast<Index>(groups.size()), 1);
    double x = kMargin;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        canvas.out << "<text x=\"" << format_double(x) << "\" y=\"" << kHeight - kMargin + 16
                   << "\" font-family=\"sans-serif\" font-size=\"10\">" << names[g] << "</text>\n";
        for (Index i = 0; i < groups[g].size(); ++i) {
            const double h = plot_h * std::max(groups[g][i], 0.0) / peak;
            canvas.out << "<rect x=\"" << format_double(x) << "\" y=\"" << format_double(kHeight - kMargin - h)
                       << "\" width=\"" << format_double(bar_w * 0.85) << "\" height=\"" << format_double(h)
                       << "\" fill=\"" << color_for(static_cast<int>(g)) << "\"/>\n";
            x += bar_w;
        }
        x += bar_w;  // gap between groups
    }
}

void svg_image_grid(const std::filesystem::path& path, const Matrix& images, Index tile_width,
                    const std::string& title) {
    require(tile_width > 0 && images.cols() % tile_width == 0, "svg_image_grid: columns not divisible by tile width");
    const Index tile_height = images.cols() / tile_width;
    const Index count = images.rows();
    const Index per_row = std::max<Index>(1, static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(count)))));
    Canvas canvas(path, title);
    const double cell = std::min((kWidth - 2.0 * kMargin) / (per_row * (tile_width + 2.0)),
                                 (kHeight - 2.0 * kMargin) / (((count + per_row - 1) / per_row) * (tile_height + 2.0)));
    const double lo = images.size() ? images.minCoeff() : 0.0;
    const double hi = images.size() ? images.maxCoeff() : 1.0;
    const double span = std::max(hi - lo, 1e-12);
    for (Index i = 0; i < count; ++i) {
        const double ox = kMargin + (i % per_row) * cell * (tile_width + 2.0);
        const double oy = kMargin + (i / per_row) * cell * (tile_height + 2.0);
        for (Index p = 0; p < images.cols(); ++p) {
            const int gray = static_cast<int>(std::lround(255.0 * (images(i, p) - lo) / span));
            const Index px = p % tile_width;
            const Index py = p / tile_width;
            canvas.out << "<rect x=\"" << format_double(ox + px * cell) << "\" y=\"" << format_double(oy + py * cell)
                       << "\" width=\"" << format_double(cell) << "\" height=\"" << format_double(cell)
                       << "\" fill=\"rgb(" << gray << "," << gray << "," << gray << ")\"/>\n";
        }
    }
}

void svg_lines(const std::filesystem::path& path, const Matrix& x, const Matrix& ys, const std::string& title) {
    require(x.rows() == ys.rows() && x.cols() == 1, "svg_lines: x must be a column matching ys rows");
    Canvas canvas(path, title);
    const Range rx = range_of(x);
    const Range ry = range_of(ys);
    for (Index c = 0; c < ys.cols(); ++c) {
        canvas.out << "<polyline fill=\"none\" stroke=\"" << color_for(static_cast<int>(c))
                   << "\" stroke-width=\"1.5\" points=\"";
        for (Index i = 0; i < x.rows(); ++i) {
            canvas.out << format_double(rx.map(x(i, 0), kMargin, kWidth - kMargin)) << ','
                       << format_double(ry.map(ys(i, c), kHeight - kMargin, kMargin)) << ' ';
        }
        canvas.out << "\"/>\n";
    }
}

}  // namespace deepgp
