#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtriage/dataset.hpp"

namespace mtriage {

/// Non-owning view of parallel score/label arrays; label 1 = high complexity.
struct ScoreView {
    std::span<const double> scores;
    std::span<const std::uint8_t> labels;

    std::size_t size() const { return scores.size(); }
    std::size_t positives() const;
};

struct ScoredSet {
    std::vector<std::string> case_ids;
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    std::vector<std::set<std::string>> tags;

    void push_back(std::string case_id, double score, Label label, std::set<std::string> case_tags = {});
    std::size_t size() const { return scores.size(); }
    ScoreView view() const { return {scores, labels}; }
    void validate() const;

    /// Cases carrying `tag`.
    ScoredSet filter(const std::string& tag) const;
};

/// Mann-Whitney: P(pos > neg) + 0.5 P(tie).
double auroc(ScoreView set);
/// Step-wise average precision; tied scores form one step.
double auprc(ScoreView set);

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
    double threshold = 0.0;
};
using CurvePoints = std::vector<CurvePoint>;

/// (FPR, TPR) per distinct threshold, descending, from (0,0) to (1,1).
CurvePoints roc_points(ScoreView set);
/// (recall, precision) per distinct threshold, descending.
CurvePoints pr_points(ScoreView set);
double trapezoid_area(const CurvePoints& roc);
double step_area(const CurvePoints& pr);

struct OperatingPoint {
    double specificity = 0.0;
    double sensitivity = 0.0;
    double threshold = 0.0;
};

/// Highest threshold (score >= threshold is positive) reaching the target
/// sensitivity; this is also the maximum-specificity such threshold.
OperatingPoint specificity_at_sensitivity(ScoreView set, double target);

struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double empirical_frequency = 0.0;
};

struct CalibrationReport {
    std::vector<CalibrationBin> bins;
    double ece = 0.0;
};

/// Equal-width bins on [0, 1], last bin right-closed.
CalibrationReport calibration(ScoreView set, int n_bins = 10);
double expected_calibration_error(ScoreView set, int n_bins = 10);

struct BootstrapCI {
    double point_estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    int replicates = 0;
    std::uint64_t seed = 0;
};

using Metric = std::function<double(ScoreView)>;

/// Linear interpolation between order statistics at h = (n - 1) q.
double quantile(std::vector<double> values, double q);

/// Resamples with replacement within each class. Replicate r draws from a
/// stream derived from (seed, r), so results do not depend on `threads`.
BootstrapCI stratified_bootstrap_ci(const Metric& metric, ScoreView set, int replicates,
                                    std::uint64_t seed, double level = 0.95, int threads = 1);

struct EvaluationConfig {
    int bootstrap = 10'000;
    std::uint64_t seed = 0;
    int bins = 10;
    std::vector<double> sensitivities{0.95, 0.98, 0.99};
    int threads = 1;

    nlohmann::json to_json() const;
};

struct MetricReport {
    std::string partition;  // "all" or the tag
    std::size_t n = 0;
    std::size_t positives = 0;
    BootstrapCI auroc;
    BootstrapCI auprc;
    BootstrapCI ece;
    std::vector<std::pair<double, BootstrapCI>> specificity;  // target sensitivity -> CI
    std::vector<double> thresholds;                            // per target, on the full set
    CalibrationReport calibration;
    CurvePoints roc;
    CurvePoints pr;

    nlohmann::json to_json() const;
};

/// Full metric suite on the cases carrying `tag` (empty tag = every case).
/// Throws EmptyPartitionError naming the tag when no case matches.
MetricReport evaluate_partition(const ScoredSet& set, const std::string& tag, const EvaluationConfig& config);

std::string curve_csv(const CurvePoints& points, const char* x_name, const char* y_name);
std::string calibration_csv(const CalibrationReport& report);

// Predictions CSV: case_id,prob_high,label,tags (tags ';'-separated).
ScoredSet read_predictions_csv(const std::filesystem::path& path);

} // namespace mtriage
