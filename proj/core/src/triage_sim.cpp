#include "mtriage/triage_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/evaluation.hpp"

namespace mtriage {

void SimConfig::validate() const {
    if (n_pathologists < 2) throw ConfigError("simulate: need at least 2 pathologists");
    if (n_experts < 1 || n_experts >= n_pathologists) {
        throw ConfigError("simulate: need 1 <= n_experts < n_pathologists");
    }
    if (cases_per_pathologist < 1) throw ConfigError("simulate: cases_per_pathologist must be >= 1");
    if (cases_per_iteration != n_pathologists * cases_per_pathologist) {
        throw ConfigError(fmt::format("simulate: cases_per_iteration {} != {} pathologists x {} cases",
                                      cases_per_iteration, n_pathologists, cases_per_pathologist));
    }
    if (iterations < 1) throw ConfigError("simulate: iterations must be >= 1");
}

nlohmann::json SimConfig::to_json() const {
    return {{"n_pathologists", n_pathologists},
            {"n_experts", n_experts},
            {"cases_per_pathologist", cases_per_pathologist},
            {"cases_per_iteration", cases_per_iteration},
            {"iterations", iterations},
            {"seed", seed}};
}

int AssignmentOutcome::expert_high() const {
    return std::accumulate(high_counts.begin(), high_counts.begin() + n_experts, 0);
}

int AssignmentOutcome::general_high() const {
    return std::accumulate(high_counts.begin() + n_experts, high_counts.end(), 0);
}

namespace {

void check_sample(const std::vector<PoolCase>& sample, const SimConfig& config) {
    config.validate();
    if (sample.size() != static_cast<std::size_t>(config.cases_per_iteration)) {
        throw ArgumentError(fmt::format("expected {} sampled cases, got {}", config.cases_per_iteration,
                                        sample.size()));
    }
}

// Consecutive blocks of cases_per_pathologist entries of `order` go to
// pathologists 0, 1, ... in turn.
void count_blocks(const std::vector<PoolCase>& sample, const std::vector<std::size_t>& order,
                  const SimConfig& config, AssignmentOutcome& out) {
    const auto per = static_cast<std::size_t>(config.cases_per_pathologist);
    for (std::size_t i = 0; i < order.size(); ++i) {
        out.high_counts[i / per] += sample[order[i]].high ? 1 : 0;
    }
}

} // namespace

AssignmentOutcome assign_baseline(const std::vector<PoolCase>& sample, const SimConfig& config, Rng& rng) {
    check_sample(sample, config);
    AssignmentOutcome out;
    out.n_experts = config.n_experts;
    out.high_counts.assign(static_cast<std::size_t>(config.n_pathologists), 0);
    std::vector<std::size_t> order(sample.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    count_blocks(sample, order, config, out);
    return out;
}

AssignmentOutcome assign_triage(const std::vector<PoolCase>& sample, const SimConfig& config, Rng& rng) {
    check_sample(sample, config);
    for (const auto& c : sample) {
        if (!std::isfinite(c.score)) throw ArgumentError("assign_triage: every case needs a finite score");
    }
    AssignmentOutcome out;
    out.n_experts = config.n_experts;
    out.high_counts.assign(static_cast<std::size_t>(config.n_pathologists), 0);

    // Shuffle, then stable sort: tied scores end up in uniform random order.
    std::vector<std::size_t> order(sample.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sample[a].score > sample[b].score; });

    const auto expert_cases = static_cast<std::size_t>(config.n_experts * config.cases_per_pathologist);
    shuffle(order.begin() + static_cast<std::ptrdiff_t>(expert_cases), order.end(), rng);
    count_blocks(sample, order, config, out);
    return out;
}

namespace {

CountSummary summarize(const std::vector<double>& values) {
    CountSummary s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    s.lower = quantile(values, 0.025);
    s.upper = quantile(values, 0.975);
    return s;
}

PolicySummary summarize_policy(const std::vector<IterationRecord>& records, bool triage, const SimConfig& config) {
    std::vector<double> experts;
    std::vector<double> generals;
    std::vector<double> sums(static_cast<std::size_t>(config.n_pathologists), 0.0);
    for (const auto& r : records) {
        const auto& o = triage ? r.triage : r.baseline;
        for (int p = 0; p < config.n_pathologists; ++p) {
            const double c = o.high_counts[static_cast<std::size_t>(p)];
            (p < config.n_experts ? experts : generals).push_back(c);
            sums[static_cast<std::size_t>(p)] += c;
        }
    }
    PolicySummary s;
    s.per_expert = summarize(experts);
    s.per_general = summarize(generals);
    for (double& v : sums) v /= double(records.size());
    s.mean_per_pathologist = std::move(sums);
    return s;
}

nlohmann::json summary_json(const CountSummary& s) {
    return {{"mean", s.mean}, {"lower", s.lower}, {"upper", s.upper}};
}

nlohmann::json policy_json(const PolicySummary& p) {
    return {{"per_expert", summary_json(p.per_expert)},
            {"per_general", summary_json(p.per_general)},
            {"mean_per_pathologist", p.mean_per_pathologist}};
}

} // namespace

SimulationReport simulate(const std::vector<PoolCase>& pool, const SimConfig& config) {
    config.validate();
    if (pool.empty()) throw ArgumentError("simulate: empty case pool");

    SimulationReport report;
    report.iterations = config.iterations;
    report.seed = config.seed;
    report.per_iteration.resize(static_cast<std::size_t>(config.iterations));

    auto run = [&](std::size_t begin, std::size_t end) {
        std::vector<PoolCase> sample(static_cast<std::size_t>(config.cases_per_iteration));
        for (std::size_t it = begin; it < end; ++it) {
            auto rng = make_rng(derive_seed(config.seed, static_cast<std::uint64_t>(it)));
            auto& rec = report.per_iteration[it];
            rec.sampled_high = 0;
            for (auto& c : sample) {
                c = pool[uniform_index(rng, pool.size())];
                rec.sampled_high += c.high ? 1 : 0;
            }
            rec.baseline = assign_baseline(sample, config, rng);
            rec.triage = assign_triage(sample, config, rng);
        }
    };
    const auto n = report.per_iteration.size();
    const auto workers = static_cast<std::size_t>(std::clamp(config.threads, 1, config.iterations));
    if (workers == 1) {
        run(0, n);
    } else {
        std::vector<std::jthread> pool_threads;
        for (std::size_t w = 0; w < workers; ++w) {
            pool_threads.emplace_back(run, n * w / workers, n * (w + 1) / workers);
        }
    }

    report.baseline = summarize_policy(report.per_iteration, false, config);
    report.triage = summarize_policy(report.per_iteration, true, config);
    std::vector<double> prevented;
    prevented.reserve(n);
    for (const auto& r : report.per_iteration) prevented.push_back(r.prevented());
    report.prevented = summarize(prevented);
    return report;
}

nlohmann::json SimulationReport::to_json() const {
    return {{"baseline", policy_json(baseline)},
            {"triage", policy_json(triage)},
            {"prevented", summary_json(prevented)},
            {"iterations", iterations},
            {"seed", seed}};
}

std::string SimulationReport::iterations_csv() const {
    std::string out =
        "iteration,sampled_high,baseline_expert_high,baseline_general_high,triage_expert_high,"
        "triage_general_high,prevented\n";
    for (std::size_t i = 0; i < per_iteration.size(); ++i) {
        const auto& r = per_iteration[i];
        out += fmt::format("{},{},{},{},{},{},{}\n", i, r.sampled_high, r.baseline.expert_high(),
                           r.baseline.general_high(), r.triage.expert_high(), r.triage.general_high(),
                           r.prevented());
    }
    return out;
}

} // namespace mtriage
