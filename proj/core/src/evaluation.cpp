#include "mtriage/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/random.hpp"

namespace mtriage {

std::size_t ScoreView::positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

void ScoredSet::push_back(std::string case_id, double score, Label label, std::set<std::string> case_tags) {
    case_ids.push_back(std::move(case_id));
    scores.push_back(score);
    labels.push_back(static_cast<std::uint8_t>(label));
    tags.push_back(std::move(case_tags));
}

void ScoredSet::validate() const {
    if (scores.empty()) throw ValidationError("scored set is empty");
    if (labels.size() != scores.size() || case_ids.size() != scores.size() || tags.size() != scores.size()) {
        throw ValidationError("scored set columns have different lengths");
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i]) || scores[i] < 0.0 || scores[i] > 1.0) {
            throw ValidationError(fmt::format("case '{}': score {} outside [0, 1]", case_ids[i], scores[i]));
        }
    }
}

ScoredSet ScoredSet::filter(const std::string& tag) const {
    ScoredSet out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (tag.empty() || tags[i].count(tag)) {
            out.case_ids.push_back(case_ids[i]);
            out.scores.push_back(scores[i]);
            out.labels.push_back(labels[i]);
            out.tags.push_back(tags[i]);
        }
    }
    return out;
}

namespace {

void require_both_classes(ScoreView set, const char* metric) {
    const auto pos = set.positives();
    if (pos == 0 || pos == set.size()) {
        throw UndefinedMetricError(fmt::format("{} is undefined unless both classes are present", metric));
    }
}

// Indices sorted by descending score; ties grouped by the caller.
std::vector<std::size_t> descending_order(ScoreView set) {
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return set.scores[a] > set.scores[b]; });
    return order;
}

// Walks tie groups in descending score order, calling f(threshold, tp, fp)
// with cumulative counts after each group.
template <typename F>
void for_each_threshold(ScoreView set, F&& f) {
    const auto order = descending_order(set);
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = set.scores[order[i]];
        while (i < order.size() && set.scores[order[i]] == threshold) {
            (set.labels[order[i]] ? tp : fp) += 1;
            ++i;
        }
        f(threshold, tp, fp);
    }
}

} // namespace

double auroc(ScoreView set) {
    require_both_classes(set, "AUROC");
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });

    // Midranks: a tie group spanning 1-based ranks [i+1, j] gets (i+1+j)/2.
    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::size_t group_pos = 0;
        while (j < order.size() && set.scores[order[j]] == set.scores[order[i]]) {
            group_pos += set.labels[order[j]];
            ++j;
        }
        positive_rank_sum += double(group_pos) * (double(i + 1 + j) / 2.0);
        i = j;
    }
    const double p = double(set.positives());
    const double n = double(set.size()) - p;
    const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * n);
}

double auprc(ScoreView set) {
    const auto total_pos = set.positives();
    if (total_pos == 0) throw UndefinedMetricError("AUPRC is undefined without positive cases");
    double ap = 0.0;
    std::size_t prev_tp = 0;
    for_each_threshold(set, [&](double, std::size_t tp, std::size_t fp) {
        if (tp > prev_tp) {
            ap += (double(tp - prev_tp) / double(total_pos)) * (double(tp) / double(tp + fp));
        }
        prev_tp = tp;
    });
    return ap;
}

CurvePoints roc_points(ScoreView set) {
    require_both_classes(set, "ROC curve");
    const double p = double(set.positives());
    const double n = double(set.size()) - p;
    CurvePoints points{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
    for_each_threshold(set, [&](double threshold, std::size_t tp, std::size_t fp) {
        points.push_back({double(fp) / n, double(tp) / p, threshold});
    });
    return points;
}

CurvePoints pr_points(ScoreView set) {
    const auto total_pos = set.positives();
    if (total_pos == 0) throw UndefinedMetricError("PR curve is undefined without positive cases");
    CurvePoints points;
    for_each_threshold(set, [&](double threshold, std::size_t tp, std::size_t fp) {
        points.push_back({double(tp) / double(total_pos), double(tp) / double(tp + fp), threshold});
    });
    return points;
}

double trapezoid_area(const CurvePoints& roc) {
    double area = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i) {
        area += (roc[i].x - roc[i - 1].x) * (roc[i].y + roc[i - 1].y) / 2.0;
    }
    return area;
}

double step_area(const CurvePoints& pr) {
    double area = 0.0;
    double prev_recall = 0.0;
    for (const auto& pt : pr) {
        area += (pt.x - prev_recall) * pt.y;
        prev_recall = pt.x;
    }
    return area;
}

OperatingPoint specificity_at_sensitivity(ScoreView set, double target) {
    require_both_classes(set, "specificity at sensitivity");
    if (!(target > 0.0 && target <= 1.0)) throw ArgumentError("target sensitivity must be in (0, 1]");

    std::vector<double> pos;
    std::vector<double> neg;
    for (std::size_t i = 0; i < set.size(); ++i) (set.labels[i] ? pos : neg).push_back(set.scores[i]);
    std::sort(pos.begin(), pos.end(), std::greater<>());

    // Smallest number of positives k with k / P >= target; the threshold is
    // the k-th largest positive score.
    const std::size_t total = pos.size();
    std::size_t k = 1;
    while (k < total && double(k) / double(total) < target) ++k;
    const double threshold = pos[k - 1];

    const auto tp = std::count_if(pos.begin(), pos.end(), [&](double s) { return s >= threshold; });
    const auto tn = std::count_if(neg.begin(), neg.end(), [&](double s) { return s < threshold; });
    return {double(tn) / double(neg.size()), double(tp) / double(total), threshold};
}

CalibrationReport calibration(ScoreView set, int n_bins) {
    if (n_bins < 1) throw ArgumentError("calibration needs at least one bin");
    CalibrationReport report;
    report.bins.resize(static_cast<std::size_t>(n_bins));
    std::vector<double> confidence_sum(report.bins.size(), 0.0);
    std::vector<std::size_t> positives(report.bins.size(), 0);
    for (std::size_t b = 0; b < report.bins.size(); ++b) {
        report.bins[b].lower = double(b) / n_bins;
        report.bins[b].upper = double(b + 1) / n_bins;
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double p = set.scores[i];
        auto b = static_cast<std::size_t>(std::clamp(std::floor(p * n_bins), 0.0, double(n_bins - 1)));
        report.bins[b].count += 1;
        confidence_sum[b] += p;
        positives[b] += set.labels[i];
    }
    const double total = double(set.size());
    for (std::size_t b = 0; b < report.bins.size(); ++b) {
        auto& bin = report.bins[b];
        if (bin.count == 0) continue;
        bin.mean_confidence = confidence_sum[b] / double(bin.count);
        bin.empirical_frequency = double(positives[b]) / double(bin.count);
        report.ece += (double(bin.count) / total) * std::abs(bin.empirical_frequency - bin.mean_confidence);
    }
    return report;
}

double expected_calibration_error(ScoreView set, int n_bins) {
    return calibration(set, n_bins).ece;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ArgumentError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = (double(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - double(lo)) * (values[hi] - values[lo]);
}

BootstrapCI stratified_bootstrap_ci(const Metric& metric, ScoreView set, int replicates,
                                    std::uint64_t seed, double level, int threads) {
    if (replicates < 1) throw ArgumentError("bootstrap needs at least one replicate");
    BootstrapCI ci;
    ci.point_estimate = metric(set);
    ci.replicates = replicates;
    ci.seed = seed;

    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < set.size(); ++i) (set.labels[i] ? pos : neg).push_back(i);

    std::vector<double> values(static_cast<std::size_t>(replicates));
    auto run = [&](std::size_t begin, std::size_t end) {
        std::vector<double> scores(set.size());
        std::vector<std::uint8_t> labels(set.size());
        for (std::size_t r = begin; r < end; ++r) {
            auto rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
            std::size_t k = 0;
            for (const auto* group : {&pos, &neg}) {
                for (std::size_t j = 0; j < group->size(); ++j, ++k) {
                    const auto src = (*group)[uniform_index(rng, group->size())];
                    scores[k] = set.scores[src];
                    labels[k] = set.labels[src];
                }
            }
            values[r] = metric(ScoreView{scores, labels});
        }
    };

    const auto n = values.size();
    const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, replicates));
    if (workers == 1) {
        run(0, n);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(run, n * w / workers, n * (w + 1) / workers);
        }
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("bootstrap replicate produced a non-finite metric");
    }
    const double alpha = (1.0 - level) / 2.0;
    ci.lower = quantile(values, alpha);
    ci.upper = quantile(values, 1.0 - alpha);
    return ci;
}

nlohmann::json EvaluationConfig::to_json() const {
    return {{"bootstrap", bootstrap}, {"seed", seed}, {"bins", bins}, {"sensitivities", sensitivities}};
}

namespace {

nlohmann::json ci_json(const BootstrapCI& ci) {
    return {{"estimate", ci.point_estimate}, {"lower", ci.lower}, {"upper", ci.upper},
            {"replicates", ci.replicates},   {"seed", ci.seed}};
}

} // namespace

nlohmann::json MetricReport::to_json() const {
    nlohmann::json by_target = nlohmann::json::array();
    for (std::size_t i = 0; i < specificity.size(); ++i) {
        auto entry = ci_json(specificity[i].second);
        entry["sensitivity_target"] = specificity[i].first;
        entry["threshold"] = thresholds[i];
        by_target.push_back(std::move(entry));
    }
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& b : calibration.bins) {
        bins.push_back({{"lower", b.lower},
                        {"upper", b.upper},
                        {"count", b.count},
                        {"mean_confidence", b.mean_confidence},
                        {"empirical_frequency", b.empirical_frequency}});
    }
    return {{"partition", partition},
            {"n", n},
            {"positives", positives},
            {"auroc", ci_json(auroc)},
            {"auprc", ci_json(auprc)},
            {"ece", ci_json(ece)},
            {"specificity_at_sensitivity", std::move(by_target)},
            {"calibration_bins", std::move(bins)}};
}

MetricReport evaluate_partition(const ScoredSet& set, const std::string& tag, const EvaluationConfig& config) {
    const auto subset = set.filter(tag);
    if (subset.size() == 0) throw EmptyPartitionError(tag.empty() ? "all" : tag);
    const auto view = subset.view();

    MetricReport report;
    report.partition = tag.empty() ? "all" : tag;
    report.n = subset.size();
    report.positives = view.positives();
    if (report.positives == 0 || report.positives == report.n) {
        throw UndefinedMetricError(
            fmt::format("partition '{}' needs both classes for ranking metrics", report.partition));
    }

    // Each metric gets its own derived bootstrap seed.
    auto seed_for = [&](std::string_view name) { return derive_seed(config.seed, name); };
    report.auroc = stratified_bootstrap_ci(auroc, view, config.bootstrap, seed_for("auroc"), 0.95, config.threads);
    report.auprc = stratified_bootstrap_ci(auprc, view, config.bootstrap, seed_for("auprc"), 0.95, config.threads);
    const int bins = config.bins;
    report.ece = stratified_bootstrap_ci([bins](ScoreView v) { return expected_calibration_error(v, bins); },
                                         view, config.bootstrap, seed_for("ece"), 0.95, config.threads);
    for (double target : config.sensitivities) {
        const Metric m = [target](ScoreView v) { return specificity_at_sensitivity(v, target).specificity; };
        report.specificity.emplace_back(
            target, stratified_bootstrap_ci(m, view, config.bootstrap,
                                            seed_for(fmt::format("specificity@{}", target)), 0.95, config.threads));
        report.thresholds.push_back(specificity_at_sensitivity(view, target).threshold);
    }
    report.calibration = calibration(view, config.bins);
    report.roc = roc_points(view);
    report.pr = pr_points(view);
    return report;
}

std::string curve_csv(const CurvePoints& points, const char* x_name, const char* y_name) {
    std::string out = fmt::format("{},{},threshold\n", x_name, y_name);
    for (const auto& p : points) {
        out += fmt::format("{},{},{}\n", csv::format_number(p.x), csv::format_number(p.y),
                           std::isinf(p.threshold) ? std::string("inf") : csv::format_number(p.threshold));
    }
    return out;
}

std::string calibration_csv(const CalibrationReport& report) {
    std::string out = "lower,upper,count,mean_confidence,empirical_frequency\n";
    for (const auto& b : report.bins) {
        out += fmt::format("{},{},{},{},{}\n", csv::format_number(b.lower), csv::format_number(b.upper), b.count,
                           csv::format_number(b.mean_confidence), csv::format_number(b.empirical_frequency));
    }
    return out;
}

ScoredSet read_predictions_csv(const std::filesystem::path& path) {
    const auto table = csv::read(path);
    if (table.header.empty()) throw ValidationError("predictions file is empty: " + path.string());
    const auto c_id = table.column("case_id");
    const auto c_prob = table.column("prob_high");
    const auto c_label = table.column("label");
    const auto c_tags = table.column("tags");
    ScoredSet set;
    for (const auto& row : table.rows) {
        std::set<std::string> tags;
        if (!row[c_tags].empty()) {
            for (auto& t : csv::split(row[c_tags], ';')) {
                if (!t.empty()) tags.insert(std::move(t));
            }
        }
        set.push_back(row[c_id], csv::parse_double(row[c_prob], "prob_high"), parse_label(row[c_label]),
                      std::move(tags));
    }
    if (set.size() == 0) throw ValidationError("predictions file has no cases: " + path.string());
    set.validate();
    return set;
}

} // namespace mtriage
