#include "mtriage/tessellation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/errors.hpp"

namespace mtriage {

SegmentationMap::SegmentationMap(std::uint32_t w, std::uint32_t h, double magnification)
    : width(w), height(h), mask_magnification(magnification),
      tissue(std::size_t(w) * h, 0), pen(std::size_t(w) * h, 0) {}

void SegmentationMap::validate() const {
    if (width == 0 || height == 0) throw SizeError("segmentation map is empty");
    const auto n = std::size_t(width) * height;
    if (tissue.size() != n || pen.size() != n) {
        throw SizeError("segmentation bitplanes do not match map dimensions");
    }
    if (!(mask_magnification > 0.0)) throw ConfigError("mask magnification must be > 0");
}

Ratio Ratio::from_decimal(double value) {
    if (!(value > 0.0 && value <= 1.0)) throw ConfigError("min_coverage must be in (0, 1]");
    constexpr std::int64_t kScale = 1'000'000'000;
    Ratio r{std::llround(value * double(kScale)), kScale};
    if (r.num == 0) throw ConfigError("min_coverage too small to represent");
    const auto g = std::gcd(r.num, r.den);
    r.num /= g;
    r.den /= g;
    return r;
}

void TileParams::validate() const {
    if (tile_size == 0) throw ConfigError("tile_size must be > 0");
    if (!(target_magnification > 0.0)) throw ConfigError("target magnification must be > 0");
    if (min_coverage.den <= 0 || min_coverage.num <= 0 || min_coverage.num > min_coverage.den) {
        throw ConfigError("min_coverage must be in (0, 1]");
    }
}

std::string to_string(TileStatus status) {
    switch (status) {
    case TileStatus::Included: return "included";
    case TileStatus::ExcludedLowCoverage: return "excluded_low_coverage";
    case TileStatus::ExcludedPen: return "excluded_pen";
    }
    return "unknown";
}

TileStatus parse_tile_status(const std::string& text) {
    if (text == "included") return TileStatus::Included;
    if (text == "excluded_low_coverage") return TileStatus::ExcludedLowCoverage;
    if (text == "excluded_pen") return TileStatus::ExcludedPen;
    throw ParseError("invalid tile status '" + text + "'");
}

std::size_t TilePlan::count(TileStatus status) const {
    return static_cast<std::size_t>(
        std::count_if(tiles.begin(), tiles.end(), [&](const auto& t) { return t.status == status; }));
}

SegmentationMap threshold_segment(const std::vector<std::uint8_t>& grayscale, std::uint32_t width,
                                  std::uint32_t height, int tissue_threshold,
                                  double mask_magnification) {
    if (width == 0 || height == 0 || grayscale.empty()) throw SizeError("empty image");
    if (grayscale.size() != std::size_t(width) * height) {
        throw SizeError("image buffer does not match its dimensions");
    }
    if (tissue_threshold < 0 || tissue_threshold > 255) {
        throw ArgumentError("tissue threshold must be in [0, 255]");
    }
    SegmentationMap map(width, height, mask_magnification);
    for (std::size_t i = 0; i < grayscale.size(); ++i) {
        map.tissue[i] = grayscale[i] < tissue_threshold ? 1 : 0;
    }
    return map;
}

std::uint32_t footprint_side(const SegmentationMap& map, const TileParams& params) {
    params.validate();
    const double ratio = params.target_magnification / map.mask_magnification;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9) {
        throw ConfigError(fmt::format("magnification ratio {}/{} is not an integer",
                                      params.target_magnification, map.mask_magnification));
    }
    const auto scale = static_cast<std::uint32_t>(rounded);
    if (params.tile_size % scale != 0) {
        throw ConfigError(fmt::format("tile size {} is not divisible by scale factor {}",
                                      params.tile_size, scale));
    }
    return params.tile_size / scale;
}

TileCounts tile_coverage(const SegmentationMap& map, const TileParams& params,
                         std::uint32_t grid_x, std::uint32_t grid_y) {
    map.validate();
    const std::uint64_t side = footprint_side(map, params);
    const std::uint64_t x0 = grid_x * side;
    const std::uint64_t y0 = grid_y * side;
    if (x0 >= map.width || y0 >= map.height) {
        throw BoundsError(fmt::format("tile ({}, {}) lies outside the mask", grid_x, grid_y));
    }
    const auto x1 = std::min<std::uint64_t>(x0 + side, map.width);
    const auto y1 = std::min<std::uint64_t>(y0 + side, map.height);
    TileCounts counts;
    counts.area = side * side;
    for (auto y = y0; y < y1; ++y) {
        for (auto x = x0; x < x1; ++x) {
            const auto i = map.index(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y));
            counts.tissue += map.tissue[i];
            counts.pen += map.pen[i];
        }
    }
    return counts;
}

TileStatus classify(const TileCounts& counts, const Ratio& min_coverage) {
    if (counts.pen > 0) return TileStatus::ExcludedPen;
    const auto lhs = static_cast<__int128>(counts.tissue) * min_coverage.den;
    const auto rhs = static_cast<__int128>(min_coverage.num) * counts.area;
    return lhs >= rhs ? TileStatus::Included : TileStatus::ExcludedLowCoverage;
}

namespace {

// Summed-area table with a zero border: sum over [0,x) x [0,y).
class IntegralImage {
public:
    IntegralImage(const std::vector<std::uint8_t>& plane, std::uint32_t w, std::uint32_t h)
        : w_(w), sums_((std::size_t(w) + 1) * (std::size_t(h) + 1), 0) {
        for (std::uint32_t y = 0; y < h; ++y) {
            std::uint64_t row = 0;
            for (std::uint32_t x = 0; x < w; ++x) {
                row += plane[std::size_t(y) * w + x];
                at(x + 1, y + 1) = at(x + 1, y) + row;
            }
        }
    }

    std::uint64_t sum(std::uint64_t x0, std::uint64_t y0, std::uint64_t x1, std::uint64_t y1) const {
        return get(x1, y1) - get(x0, y1) - get(x1, y0) + get(x0, y0);
    }

private:
    std::uint64_t& at(std::uint64_t x, std::uint64_t y) { return sums_[y * (w_ + 1) + x]; }
    std::uint64_t get(std::uint64_t x, std::uint64_t y) const { return sums_[y * (w_ + 1) + x]; }

    std::uint64_t w_;
    std::vector<std::uint64_t> sums_;
};

} // namespace

TilePlan tessellate(const SegmentationMap& map, Extent extent, const TileParams& params,
                    std::string slide_id) {
    map.validate();
    const std::uint64_t side = footprint_side(map, params);
    if (extent.width == 0 || extent.height == 0) throw SizeError("slide extent is empty");

    const auto nx = (extent.width + params.tile_size - 1) / params.tile_size;
    const auto ny = (extent.height + params.tile_size - 1) / params.tile_size;
    const IntegralImage tissue(map.tissue, map.width, map.height);
    const IntegralImage pen(map.pen, map.width, map.height);

    TilePlan plan;
    plan.slide_id = std::move(slide_id);
    plan.tiles.reserve(nx * ny);
    for (std::uint64_t gy = 0; gy < ny; ++gy) {
        for (std::uint64_t gx = 0; gx < nx; ++gx) {
            TileCounts counts;
            counts.area = side * side;
            const auto x0 = std::min<std::uint64_t>(gx * side, map.width);
            const auto y0 = std::min<std::uint64_t>(gy * side, map.height);
            const auto x1 = std::min<std::uint64_t>(x0 + side, map.width);
            const auto y1 = std::min<std::uint64_t>(y0 + side, map.height);
            counts.tissue = tissue.sum(x0, y0, x1, y1);
            counts.pen = pen.sum(x0, y0, x1, y1);

            PlannedTile tile;
            tile.grid_x = static_cast<std::uint32_t>(gx);
            tile.grid_y = static_cast<std::uint32_t>(gy);
            tile.coverage = counts.tissue_fraction();
            tile.pen_fraction = counts.pen_fraction();
            tile.status = classify(counts, params.min_coverage);
            plan.tiles.push_back(tile);
        }
    }
    return plan;
}

std::string tile_plan_csv(const TilePlan& plan, const nlohmann::json& run_config) {
    std::string out;
    if (!run_config.is_null()) out += csv::run_config_line(run_config);
    out += "slide_id,grid_x,grid_y,coverage,status\n";
    for (const auto& t : plan.tiles) {
        out += fmt::format("{},{},{},{},{}\n", plan.slide_id, t.grid_x, t.grid_y,
                           csv::format_number(t.coverage), to_string(t.status));
    }
    return out;
}

void write_tile_plan(const TilePlan& plan, const std::filesystem::path& path,
                     const nlohmann::json& run_config) {
    csv::write_text(path, tile_plan_csv(plan, run_config));
}

} // namespace mtriage
