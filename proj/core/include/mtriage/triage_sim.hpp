#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtriage/random.hpp"

namespace mtriage {

struct SimConfig {
    int n_pathologists = 5;
    int n_experts = 1;
    int cases_per_pathologist = 100;
    int cases_per_iteration = 500;
    int iterations = 10'000;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const;
    nlohmann::json to_json() const;
};

struct PoolCase {
    double score = 0.0;
    bool high = false;
};

/// High-complexity counts per pathologist for one iteration; experts come
/// first, then generals.
struct AssignmentOutcome {
    std::vector<int> high_counts;
    int n_experts = 0;

    int expert_high() const;
    int general_high() const;
    int total_high() const { return expert_high() + general_high(); }
};

/// Uniform random permutation cut into equal blocks, one per pathologist.
AssignmentOutcome assign_baseline(const std::vector<PoolCase>& sample, const SimConfig& config, Rng& rng);

/// Sort by descending score (ties in uniformly random order); the top
/// n_experts * cases_per_pathologist go to experts, the rest are shuffled
/// across generals.
AssignmentOutcome assign_triage(const std::vector<PoolCase>& sample, const SimConfig& config, Rng& rng);

struct CountSummary {
    double mean = 0.0;
    double lower = 0.0;  // 2.5th percentile
    double upper = 0.0;  // 97.5th percentile
};

struct PolicySummary {
    CountSummary per_expert;   // pooled over experts and iterations
    CountSummary per_general;  // pooled over generals and iterations
    std::vector<double> mean_per_pathologist;
};

struct IterationRecord {
    int sampled_high = 0;
    AssignmentOutcome baseline;
    AssignmentOutcome triage;
    int prevented() const { return baseline.general_high() - triage.general_high(); }
};

struct SimulationReport {
    PolicySummary baseline;
    PolicySummary triage;
    CountSummary prevented;
    int iterations = 0;
    std::uint64_t seed = 0;
    std::vector<IterationRecord> per_iteration;

    nlohmann::json to_json() const;
    /// iteration,sampled_high,baseline_expert_high,baseline_general_high,
    /// triage_expert_high,triage_general_high,prevented
    std::string iterations_csv() const;
};

/// Each iteration samples cases_per_iteration cases with replacement and
/// runs both policies on the same sample; prevented = baseline general-high
/// minus triage general-high, paired per iteration.
SimulationReport simulate(const std::vector<PoolCase>& pool, const SimConfig& config);

} // namespace mtriage
