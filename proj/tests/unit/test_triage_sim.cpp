#include <gtest/gtest.h>

#include <numeric>

#include "mtriage/errors.hpp"
#include "mtriage/triage_sim.hpp"

using namespace mtriage;

namespace {

std::vector<PoolCase> sample_with(int n_high, int n_total, bool perfect = true) {
    std::vector<PoolCase> out;
    for (int i = 0; i < n_total; ++i) {
        const bool high = i < n_high;
        out.push_back({perfect ? (high ? 0.9 : 0.1) : (high ? 0.1 : 0.9), high});
    }
    return out;
}

std::vector<PoolCase> pool_with_prevalence(double prevalence, int n, bool perfect, std::uint64_t seed = 1) {
    auto rng = make_rng(seed);
    std::vector<PoolCase> pool;
    const int n_high = int(std::lround(prevalence * n));
    for (int i = 0; i < n; ++i) {
        const bool high = i < n_high;
        pool.push_back({perfect ? (high ? 1.0 : 0.0) : uniform01(rng), high});
    }
    return pool;
}

} // namespace

TEST(Baseline, AllLowGivesZeros) {
    const SimConfig cfg;
    auto rng = make_rng(1);
    const auto out = assign_baseline(sample_with(0, 500), cfg, rng);
    EXPECT_EQ(out.high_counts, std::vector<int>(5, 0));
}

TEST(Baseline, Conservation) {
    const SimConfig cfg;
    auto rng = make_rng(2);
    for (int n_high : {0, 13, 65, 250, 500}) {
        const auto out = assign_baseline(sample_with(n_high, 500), cfg, rng);
        EXPECT_EQ(std::accumulate(out.high_counts.begin(), out.high_counts.end(), 0), n_high);
        EXPECT_EQ(out.total_high(), n_high);
    }
}

TEST(Baseline, SizeMismatchIsArgumentError) {
    auto rng = make_rng(3);
    EXPECT_THROW(assign_baseline(sample_with(1, 499), SimConfig{}, rng), ArgumentError);
}

TEST(Triage, PerfectScorerFiftyHigh) {
    auto rng = make_rng(4);
    const auto out = assign_triage(sample_with(50, 500), SimConfig{}, rng);
    EXPECT_EQ(out.expert_high(), 50);
    EXPECT_EQ(out.general_high(), 0);
}

TEST(Triage, PerfectScorerCapacityLimit) {
    auto rng = make_rng(5);
    const auto out = assign_triage(sample_with(150, 500), SimConfig{}, rng);
    EXPECT_EQ(out.expert_high(), 100);
    EXPECT_EQ(out.general_high(), 50);
}

TEST(Triage, AntiPerfectScorer) {
    auto rng = make_rng(6);
    for (int n_high : {50, 150, 420, 450}) {
        const auto out = assign_triage(sample_with(n_high, 500, false), SimConfig{}, rng);
        EXPECT_EQ(out.expert_high(), std::max(0, 100 - (500 - n_high))) << n_high;
    }
}

TEST(Triage, TiesBrokenUniformly) {
    // All scores equal: the expert block is a uniform random subset.
    SimConfig cfg;
    double total = 0;
    for (std::uint64_t s = 0; s < 2000; ++s) {
        auto rng = make_rng(s);
        auto sample = sample_with(100, 500);
        for (auto& c : sample) c.score = 0.5;
        total += assign_triage(sample, cfg, rng).expert_high();
    }
    EXPECT_NEAR(total / 2000.0, 20.0, 0.3);
}

TEST(Triage, NonFiniteScoreIsArgumentError) {
    auto rng = make_rng(7);
    auto sample = sample_with(10, 500);
    sample[3].score = std::nan("");
    EXPECT_THROW(assign_triage(sample, SimConfig{}, rng), ArgumentError);
}

TEST(Simulate, BaselineMeanIsHundredTimesPrevalence) {
    SimConfig cfg;
    cfg.iterations = 2000;
    cfg.seed = 3;
    const auto report = simulate(pool_with_prevalence(0.13, 1000, false), cfg);
    EXPECT_NEAR(report.baseline.per_general.mean, 13.0, 0.5);
    EXPECT_NEAR(report.baseline.per_expert.mean, 13.0, 0.5);
    for (double m : report.baseline.mean_per_pathologist) EXPECT_NEAR(m, 13.0, 0.6);
}

TEST(Simulate, PerfectScorerPrevents40) {
    SimConfig cfg;
    cfg.iterations = 2000;
    cfg.seed = 4;
    const auto report = simulate(pool_with_prevalence(0.1, 1000, true), cfg);
    EXPECT_NEAR(report.prevented.mean, 40.0, 0.5);
    for (const auto& r : report.per_iteration) {
        EXPECT_EQ(r.triage.expert_high(), std::min(100, r.sampled_high));
        EXPECT_EQ(r.baseline.total_high(), r.sampled_high);
        EXPECT_EQ(r.triage.total_high(), r.sampled_high);
    }
}

TEST(Simulate, RandomScorerPreventsNothing) {
    SimConfig cfg;
    cfg.iterations = 2000;
    cfg.seed = 5;
    // A large pool keeps the chance score/label association of a fixed pool small.
    const auto report = simulate(pool_with_prevalence(0.13, 100'000, false), cfg);
    EXPECT_NEAR(report.prevented.mean, 0.0, 0.5);
}

TEST(Simulate, DeterministicAcrossThreads) {
    SimConfig cfg;
    cfg.iterations = 300;
    cfg.seed = 6;
    const auto pool = pool_with_prevalence(0.2, 300, false);
    const auto a = simulate(pool, cfg);
    cfg.threads = 4;
    const auto b = simulate(pool, cfg);
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_EQ(a.iterations_csv(), b.iterations_csv());
}

TEST(SimConfig, Validation) {
    SimConfig cfg;
    cfg.n_experts = 5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.cases_per_iteration = 400;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_THROW(simulate({}, SimConfig{}), ArgumentError);
}
