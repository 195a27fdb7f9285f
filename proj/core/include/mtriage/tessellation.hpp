#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtriage {

/// Tissue and pen bitplanes at mask magnification, row-major.
struct SegmentationMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    double mask_magnification = 1.25;
    std::vector<std::uint8_t> tissue;  // 0/1 per pixel
    std::vector<std::uint8_t> pen;     // 0/1 per pixel

    SegmentationMap() = default;
    SegmentationMap(std::uint32_t w, std::uint32_t h, double magnification = 1.25);

    std::size_t index(std::uint32_t x, std::uint32_t y) const {
        return std::size_t(y) * width + x;
    }
    void validate() const;
};

/// Coverage threshold as an exact fraction. Built from a decimal value,
/// e.g. 0.05 becomes 1/20.
struct Ratio {
    std::int64_t num = 1;
    std::int64_t den = 20;

    static Ratio from_decimal(double value);
    double value() const { return double(num) / double(den); }
    bool operator==(const Ratio&) const = default;
};

struct TileParams {
    std::uint32_t tile_size = 4096;
    double target_magnification = 20.0;
    Ratio min_coverage{1, 20};

    void validate() const;
};

enum class TileStatus : std::uint8_t { Included, ExcludedLowCoverage, ExcludedPen };

std::string to_string(TileStatus status);
TileStatus parse_tile_status(const std::string& text);

struct PlannedTile {
    std::uint32_t grid_x = 0;
    std::uint32_t grid_y = 0;
    double coverage = 0.0;
    double pen_fraction = 0.0;
    TileStatus status = TileStatus::ExcludedLowCoverage;

    bool operator==(const PlannedTile&) const = default;
};

struct TilePlan {
    std::string slide_id;
    std::vector<PlannedTile> tiles;  // row-major: y, then x

    std::size_t count(TileStatus status) const;
};

struct Extent {
    std::uint64_t width = 0;
    std::uint64_t height = 0;
};

/// Tissue where intensity < threshold; pen plane empty. Stand-in for a
/// learned segmenter on synthetic slides.
SegmentationMap threshold_segment(const std::vector<std::uint8_t>& grayscale, std::uint32_t width,
                                  std::uint32_t height, int tissue_threshold,
                                  double mask_magnification = 1.25);

/// Mask pixels covered by one tile edge (tile_size / scale factor). Throws
/// ConfigError unless the magnification ratio and tile size divide exactly.
std::uint32_t footprint_side(const SegmentationMap& map, const TileParams& params);

struct TileCounts {
    std::uint64_t tissue = 0;
    std::uint64_t pen = 0;
    std::uint64_t area = 0;  // full nominal footprint, out-of-bounds included

    double tissue_fraction() const { return double(tissue) / double(area); }
    double pen_fraction() const { return double(pen) / double(area); }
};

/// Set-bit counts over the tile's full footprint. Throws BoundsError if the
/// footprint does not intersect the map.
TileCounts tile_coverage(const SegmentationMap& map, const TileParams& params,
                         std::uint32_t grid_x, std::uint32_t grid_y);

/// Included iff tissue/area >= min_coverage (exact integer comparison) and no
/// pen pixel; pen takes precedence in the status.
TileStatus classify(const TileCounts& counts, const Ratio& min_coverage);

TilePlan tessellate(const SegmentationMap& map, Extent extent, const TileParams& params,
                    std::string slide_id = "slide");

std::string tile_plan_csv(const TilePlan& plan, const nlohmann::json& run_config = nullptr);
void write_tile_plan(const TilePlan& plan, const std::filesystem::path& path,
                     const nlohmann::json& run_config = nullptr);

// Mask PNG: 8-bit grayscale, 0 = background, 1 = tissue, 2 = pen.
SegmentationMap read_mask_png(const std::filesystem::path& path, double mask_magnification);
void write_mask_png(const SegmentationMap& map, const std::filesystem::path& path);

/// Reads `<mask>.hdr` (`mask_magnification=<x>` lines) when present.
std::optional<double> read_mask_sidecar(const std::filesystem::path& mask_path);

struct GrayImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels;
};
GrayImage read_gray_png(const std::filesystem::path& path);
void write_gray_png(const GrayImage& image, const std::filesystem::path& path);

} // namespace mtriage
