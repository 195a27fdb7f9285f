#pragma once

// Brute-force reference implementations the library is checked against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mtriage/tessellation.hpp"

namespace mtriage::oracle {

/// O(n^2) pair count: (concordant + ties / 2) / (P N).
inline double pairwise_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    double num = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    return num / pairs;
}

/// Scans every distinct score as a threshold (score >= t is positive) from
/// the top and sums precision times recall increments.
inline double ranked_scan_ap(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    std::vector<double> thresholds(scores.begin(), scores.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double positives = 0.0;
    for (auto l : labels) positives += l;
    double ap = 0.0;
    double prev_recall = 0.0;
    for (double t : thresholds) {
        double tp = 0.0, predicted = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= t) {
                predicted += 1.0;
                tp += labels[i];
            }
        }
        const double recall = tp / positives;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    return ap;
}

struct Recount {
    std::uint64_t tissue = 0;
    std::uint64_t pen = 0;
    std::uint64_t area = 0;
    TileStatus status = TileStatus::ExcludedLowCoverage;
};

/// Per-pixel recount of one tile footprint; no prefix sums, no shared code
/// with the library.
inline Recount recount_tile(const SegmentationMap& map, std::uint32_t side, std::uint32_t gx, std::uint32_t gy,
                            Ratio min_coverage) {
    Recount r;
    r.area = std::uint64_t(side) * side;
    for (std::uint64_t y = std::uint64_t(gy) * side; y < std::uint64_t(gy + 1) * side; ++y) {
        for (std::uint64_t x = std::uint64_t(gx) * side; x < std::uint64_t(gx + 1) * side; ++x) {
            if (x >= map.width || y >= map.height) continue;
            r.tissue += map.tissue[y * map.width + x];
            r.pen += map.pen[y * map.width + x];
        }
    }
    if (r.pen > 0) {
        r.status = TileStatus::ExcludedPen;
    } else if (r.tissue * std::uint64_t(min_coverage.den) >= std::uint64_t(min_coverage.num) * r.area) {
        r.status = TileStatus::Included;
    }
    return r;
}

} // namespace mtriage::oracle
