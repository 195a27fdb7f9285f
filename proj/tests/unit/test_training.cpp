#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "gradcheck.hpp"
#include "mtriage/errors.hpp"
#include "mtriage/evaluation.hpp"
#include "mtriage/training.hpp"
#include "support.hpp"

using namespace mtriage;
using mtriage::testing::random_bag;

namespace {

using P1 = AggregatorParams<double>;

AggregatorConfig tiny(int feature_dim = 4) {
    AggregatorConfig c;
    c.feature_dim = feature_dim;
    c.model_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.mlp_ratio = 2;
    c.attention_dropout_p = 0.0;
    return c;
}

// Scalar-like parameter set: every coordinate gets the same value.
AggregatorParams<double> filled(const AggregatorConfig& config, double value) {
    AggregatorParams<double> p(config);
    for (auto& t : p.tensors()) std::fill(t.data.begin(), t.data.end(), value);
    return p;
}

std::vector<LabeledBag> separable_cases(Rng& rng, int n, int dim, double shift) {
    std::vector<LabeledBag> out;
    for (int i = 0; i < n; ++i) {
        const auto label = i % 2 ? Label::High : Label::Low;
        auto bag = random_bag(rng, 2 + uniform_index(rng, 6), std::size_t(dim), 2);
        if (label == Label::High) {
            for (std::size_t t = 0; t < bag.n_tiles(); ++t) bag.row(t)[0] += float(shift);
        }
        out.push_back({std::move(bag), label});
    }
    return out;
}

} // namespace

TEST(Schedule, PublishedScheduleValues) {
    const auto cfg = TrainConfig::published_schedule();
    EXPECT_EQ(cfg.total_iterations, 1'000'000);
    EXPECT_DOUBLE_EQ(lr_at(0, cfg), 0.0005);
    EXPECT_DOUBLE_EQ(lr_at(99'999, cfg), 0.0005);
    EXPECT_DOUBLE_EQ(lr_at(100'000, cfg), 0.00025);
    EXPECT_DOUBLE_EQ(lr_at(200'000, cfg), 0.000125);
    EXPECT_DOUBLE_EQ(lr_at(250'000, cfg), 0.000125);
}

TEST(Schedule, PiecewiseConstant) {
    TrainConfig cfg;
    cfg.lr_halving_period = 7;
    for (long long i = 0; i < 100; ++i) {
        EXPECT_DOUBLE_EQ(lr_at(i, cfg), cfg.base_lr * std::pow(0.5, double(i / 7)));
    }
    EXPECT_THROW(lr_at(-1, cfg), ArgumentError);
}

TEST(AdamW, SingleStepOracle) {
    const auto config = tiny();
    auto params = filled(config, 1.0);
    const auto grad = filled(config, 1.0);
    TrainConfig tc;
    tc.weight_decay = 0.0;
    auto state = OptimizerState<double>::for_params(params);
    adamw_step(params, grad, state, 0.1, tc);
    EXPECT_EQ(state.step, 1);
    for (const auto& t : params.tensors()) {
        // m_hat = 1, v_hat = 1, so w = 1 - 0.1 / (1 + 1e-8).
        for (double w : t.data) EXPECT_NEAR(w, 0.9, 1e-6);
    }
}

TEST(AdamW, ZeroGradientNoDecayIsFixedPoint) {
    auto rng = make_rng(1);
    const auto config = tiny();
    auto params = oracle::randomized_params(config, rng);
    const auto before = params;
    TrainConfig tc;
    tc.weight_decay = 0.0;
    auto state = OptimizerState<double>::for_params(params);
    adamw_step(params, params.zeros_like(), state, 0.01, tc);
    EXPECT_TRUE(params == before);
}

TEST(AdamW, DecoupledDecayShrinksByLrWdW) {
    auto rng = make_rng(2);
    const auto config = tiny();
    auto params = oracle::randomized_params(config, rng);
    const auto before = params;
    TrainConfig tc;
    tc.weight_decay = 0.05;
    auto state = OptimizerState<double>::for_params(params);
    adamw_step(params, params.zeros_like(), state, 0.1, tc);
    for (std::size_t t = 0; t < params.tensors().size(); ++t) {
        for (std::size_t i = 0; i < params.tensors()[t].data.size(); ++i) {
            const double w0 = before.tensors()[t].data[i];
            EXPECT_NEAR(params.tensors()[t].data[i], w0 - 0.1 * 0.05 * w0, 1e-15);
        }
    }
}

TEST(AdamW, NonFiniteGradientRejectedStateUnchanged) {
    auto rng = make_rng(3);
    const auto config = tiny();
    auto params = oracle::randomized_params(config, rng);
    const auto before = params;
    auto grad = filled(config, 0.5);
    TrainConfig tc;
    auto state = OptimizerState<double>::for_params(params);
    adamw_step(params, grad, state, 0.01, tc);
    const auto params_after_one = params;
    const auto state_after_one = state;
    grad.tensors().back().data.back() = std::nan("");
    EXPECT_THROW(adamw_step(params, grad, state, 0.01, tc), NumericError);
    EXPECT_TRUE(params == params_after_one);
    EXPECT_EQ(state.step, state_after_one.step);
    EXPECT_EQ(state.first_moment, state_after_one.first_moment);
    EXPECT_EQ(state.second_moment, state_after_one.second_moment);
    EXPECT_FALSE(params == before);
}

TEST(Accumulator, MeanOfGradientsIsGradientOfMeanLoss) {
    auto rng = make_rng(4);
    const auto config = tiny(3);
    const auto params = oracle::randomized_params(config, rng);
    std::vector<LabeledBag> batch;
    for (int i = 0; i < 12; ++i) {
        batch.push_back({random_bag(rng, 1 + uniform_index(rng, 5), 3), i % 3 ? Label::Low : Label::High});
    }
    GradientAccumulator<double> acc(params);
    for (const auto& b : batch) acc.add(loss_and_grad(params, b.bag, b.label).grad);
    EXPECT_EQ(acc.count(), 12);
    const auto mean = acc.take();
    EXPECT_EQ(acc.count(), 0);

    auto mean_loss = [&](const P1& p) {
        double s = 0.0;
        for (const auto& b : batch) s += eval_loss(p, b.bag, b.label);
        return s / double(batch.size());
    };
    auto probe = params;
    double worst = 0.0;
    const double h = 1e-4;
    for (std::size_t t = 0; t < probe.tensors().size(); ++t) {
        for (std::size_t i = 0; i < probe.tensors()[t].data.size(); ++i) {
            auto& v = probe.tensors()[t].data[i];
            const double saved = v;
            v = saved + h;
            const double up = mean_loss(probe);
            v = saved - h;
            const double down = mean_loss(probe);
            v = saved;
            worst = std::max(worst, oracle::relative_error(mean.tensors()[t].data[i], (up - down) / (2 * h)));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Accumulator, EmptyTakeIsArgumentError) {
    GradientAccumulator<double> acc{AggregatorParams<double>(tiny())};
    EXPECT_THROW(acc.take(), ArgumentError);
}

TEST(SectionDropout, ZeroProbabilityIsIdentity) {
    auto rng = make_rng(5);
    const auto bag = random_bag(rng, 9, 3, 3);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(cross_section_dropout(bag, 0.0, rng), bag);
}

TEST(SectionDropout, SingleSectionKept) {
    auto rng = make_rng(6);
    const auto bag = random_bag(rng, 5, 3, 1);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(cross_section_dropout(bag, 0.9, rng), bag);
}

TEST(SectionDropout, TwoSectionFrequencies) {
    auto rng = make_rng(7);
    const auto bag = random_bag(rng, 4, 2, 2);  // sections 0,1,0,1
    std::map<std::string, int> counts;
    const int n = 100'000;
    for (int i = 0; i < n; ++i) {
        const auto out = cross_section_dropout(bag, 0.5, rng);
        bool has0 = false, has1 = false;
        for (const auto& t : out.tiles) (t.section_id == 0 ? has0 : has1) = true;
        counts[has0 && has1 ? "both" : has0 ? "A" : "B"]++;
    }
    EXPECT_NEAR(counts["both"] / double(n), 0.25, 0.01);
    EXPECT_NEAR(counts["A"] / double(n), 0.375, 0.01);
    EXPECT_NEAR(counts["B"] / double(n), 0.375, 0.01);
}

TEST(SectionDropout, SurvivorMetadataPreserved) {
    auto rng = make_rng(8);
    const auto bag = random_bag(rng, 12, 3, 4);
    for (int i = 0; i < 100; ++i) {
        const auto out = cross_section_dropout(bag, 0.5, rng);
        ASSERT_GE(out.n_tiles(), 1u);
        std::size_t j = 0;
        for (std::size_t k = 0; k < bag.n_tiles() && j < out.n_tiles(); ++k) {
            if (bag.tiles[k] == out.tiles[j]) {
                for (std::size_t d = 0; d < bag.dim; ++d) ASSERT_EQ(out.row(j)[d], bag.row(k)[d]);
                ++j;
            }
        }
        EXPECT_EQ(j, out.n_tiles());
    }
}

TEST(TrainModel, ZeroIterationsReturnsInitialParams) {
    auto rng = make_rng(9);
    const auto cases = separable_cases(rng, 6, 4, 3.0);
    TrainConfig tc;
    tc.total_iterations = 0;
    tc.seed = 77;
    const auto result = train_model(cases, cases, tiny(), tc);
    EXPECT_TRUE(result.history.points.empty());
    EXPECT_FALSE(result.best_validation_loss.has_value());
    EXPECT_TRUE(result.params == init_params<float>(tiny(), derive_seed(77, "train/init")));
}

TEST(TrainModel, DeterministicAndCheckpointRule) {
    auto rng = make_rng(10);
    const auto train = separable_cases(rng, 20, 4, 3.0);
    const auto val = separable_cases(rng, 10, 4, 3.0);
    TrainConfig tc;
    tc.total_iterations = 200;
    tc.accumulation_steps = 4;
    tc.validation_period = 20;
    tc.lr_halving_period = 100;
    tc.base_lr = 0.005;
    tc.seed = 5;
    const auto a = train_model(train, val, tiny(), tc);
    const auto b = train_model(train, val, tiny(), tc);
    EXPECT_TRUE(a.params == b.params);
    ASSERT_EQ(a.history.points.size(), 10u);
    for (std::size_t i = 0; i < a.history.points.size(); ++i) {
        EXPECT_EQ(a.history.points[i].validation_loss, b.history.points[i].validation_loss);
        EXPECT_EQ(a.history.points[i].iteration, 20 * (long long)(i + 1));
    }
    ASSERT_TRUE(a.best_validation_loss.has_value());
    EXPECT_NEAR(mean_validation_loss(a.params, val), *a.best_validation_loss, 1e-7);
    double min_loss = 1e300;
    long long min_it = 0;
    for (const auto& p : a.history.points) {
        if (p.validation_loss < min_loss) {
            min_loss = p.validation_loss;
            min_it = p.iteration;
        }
    }
    EXPECT_EQ(*a.history.best_iteration, min_it);
    EXPECT_LT(*a.best_validation_loss, std::log(2.0));
}

TEST(TrainModel, EmptyFoldIsConfigError) {
    auto rng = make_rng(11);
    const auto cases = separable_cases(rng, 4, 4, 1.0);
    EXPECT_THROW(train_model({}, cases, tiny(), TrainConfig{}), ConfigError);
    EXPECT_THROW(train_model(cases, {}, tiny(), TrainConfig{}), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
    TrainConfig tc;
    tc.seed = 123;
    tc.base_lr = 0.001;
    const auto back = TrainConfig::from_json(tc.to_json());
    EXPECT_EQ(back.seed, 123u);
    EXPECT_EQ(back.base_lr, 0.001);
    tc.validation_period = 15;  // not a multiple of accumulation_steps
    EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(TrainEnsemble, OneResultPerFoldWithDisjointValidation) {
    auto rng = make_rng(12);
    FoldedCases data;
    data.k = 5;
    data.cases = separable_cases(rng, 25, 4, 3.0);
    for (int i = 0; i < 25; ++i) data.folds.push_back(i % 5);
    TrainConfig tc;
    tc.total_iterations = 20;
    tc.accumulation_steps = 2;
    tc.validation_period = 10;
    tc.seed = 1;
    const auto serial = train_ensemble(data, tiny(), tc, 1);
    ASSERT_EQ(serial.size(), 5u);
    for (int f = 0; f < 5; ++f) {
        EXPECT_EQ(serial[std::size_t(f)].validation_fold, f);
        const auto ckpt = make_checkpoint(serial[std::size_t(f)], tc);
        EXPECT_EQ(ckpt.metadata.at("validation_fold"), f);
    }
    EXPECT_FALSE(serial[0].params == serial[1].params);
    const auto parallel = train_ensemble(data, tiny(), tc, 3);
    for (int f = 0; f < 5; ++f) EXPECT_TRUE(serial[std::size_t(f)].params == parallel[std::size_t(f)].params);
}
