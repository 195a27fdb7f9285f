#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "mtriage/aggregator.hpp"
#include "mtriage/errors.hpp"
#include "support.hpp"

using namespace mtriage;
using mtriage::testing::TempDir;
using mtriage::testing::random_bag;

namespace {

AggregatorConfig tiny(int dim = 8, int layers = 1, int heads = 2, int feature_dim = 5) {
    AggregatorConfig c;
    c.feature_dim = feature_dim;
    c.model_dim = dim;
    c.n_layers = layers;
    c.n_heads = heads;
    c.mlp_ratio = 2;
    c.attention_dropout_p = 0.0;
    return c;
}

FeatureBag permuted(const FeatureBag& bag, const std::vector<std::size_t>& order) {
    FeatureBag out = bag;
    for (std::size_t i = 0; i < order.size(); ++i) {
        std::copy_n(bag.row(order[i]).begin(), bag.dim, out.row(i).begin());
        out.tiles[i] = bag.tiles[order[i]];
    }
    return out;
}

} // namespace

TEST(Aggregator, InitDeterministicPerSeed) {
    const auto config = tiny();
    EXPECT_TRUE(init_params<float>(config, 3) == init_params<float>(config, 3));
    EXPECT_FALSE(init_params<float>(config, 3) == init_params<float>(config, 4));
}

TEST(Aggregator, InitLayoutAndTruncation) {
    const AggregatorConfig config;  // default shape
    const auto p = init_params<float>(config, 1);
    EXPECT_EQ(p.tensors().size(), 3 + 2 * AggregatorParams<float>::kPerLayer + 4);
    EXPECT_EQ(p.global(AggregatorParams<float>::InputWeight).shape, (std::vector<std::size_t>{192, 192}));
    for (const auto& t : p.tensors()) {
        if (t.shape.size() != 2 || t.name.rfind("head", 0) == 0) continue;
        const double bound = 2.0 / std::sqrt(double(t.shape[0]));
        for (float v : t.data) ASSERT_LE(std::abs(v), bound + 1e-6) << t.name;
    }
    for (float v : p.tail(AggregatorParams<float>::HeadWeight).data) EXPECT_EQ(v, 0.0f);
    for (float v : p.tail(AggregatorParams<float>::HeadBias).data) EXPECT_EQ(v, 0.0f);
}

TEST(Aggregator, ZeroHeadGivesHalf) {
    auto rng = make_rng(1);
    const auto params = init_params<double>(tiny(), 2);
    for (int n : {1, 3, 17}) {
        const auto bag = random_bag(rng, std::size_t(n), 5);
        EXPECT_EQ(forward(params, bag).prob_high, 0.5);
        const auto lg = loss_and_grad(params, bag, Label::High);
        EXPECT_EQ(lg.loss, std::log(2.0));
    }
}

TEST(Aggregator, ProbsSumToOne) {
    auto rng = make_rng(2);
    const auto params = oracle::randomized_params(tiny(), rng);
    const auto pred = forward(params, random_bag(rng, 7, 5));
    EXPECT_NEAR(pred.probs[0] + pred.probs[1], 1.0, 1e-12);
    EXPECT_EQ(pred.prob_high, pred.probs[1]);
}

TEST(Aggregator, SingleTileAttentionIsOne) {
    auto rng = make_rng(3);
    const auto params = oracle::randomized_params(tiny(), rng);
    const auto w = attention_weights(params, random_bag(rng, 1, 5));
    ASSERT_EQ(w.size(), 1u);
    EXPECT_NEAR(w[0], 1.0, 1e-15);
}

TEST(Aggregator, IdenticalTilesUniformAttention) {
    auto rng = make_rng(4);
    const auto params = oracle::randomized_params(tiny(8, 2, 2), rng);
    auto bag = random_bag(rng, 6, 5);
    for (std::size_t i = 1; i < 6; ++i) std::copy_n(bag.row(0).begin(), 5, bag.row(i).begin());
    for (double w : attention_weights(params, bag)) EXPECT_NEAR(w, 1.0 / 6.0, 1e-9);
}

TEST(Aggregator, AttentionNormalized) {
    auto rng = make_rng(5);
    const auto params = oracle::randomized_params(tiny(8, 2, 4), rng);
    const auto w = attention_weights(params, random_bag(rng, 13, 5));
    for (double x : w) EXPECT_GE(x, 0.0);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
}

TEST(Aggregator, PermutationInvariance) {
    auto rng = make_rng(6);
    const auto params = oracle::randomized_params(tiny(8, 2, 2), rng);
    for (int trial = 0; trial < 20; ++trial) {
        const auto bag = random_bag(rng, 2 + uniform_index(rng, 20), 5, 3);
        std::vector<std::size_t> order(bag.n_tiles());
        std::iota(order.begin(), order.end(), 0);
        shuffle(order.begin(), order.end(), rng);
        const auto a = forward(params, bag);
        const auto b = forward(params, permuted(bag, order));
        EXPECT_NEAR(a.prob_high, b.prob_high, 1e-12);
        for (std::size_t i = 0; i < order.size(); ++i) EXPECT_NEAR(b.attention[i], a.attention[order[i]], 1e-12);
    }
}

TEST(Aggregator, DuplicationInvariance) {
    auto rng = make_rng(7);
    const auto params = oracle::randomized_params(tiny(8, 2, 2), rng);
    for (int trial = 0; trial < 10; ++trial) {
        const auto bag = random_bag(rng, 1 + uniform_index(rng, 10), 5);
        auto doubled = bag;
        doubled.vectors.insert(doubled.vectors.end(), bag.vectors.begin(), bag.vectors.end());
        doubled.tiles.insert(doubled.tiles.end(), bag.tiles.begin(), bag.tiles.end());
        EXPECT_NEAR(forward(params, bag).prob_high, forward(params, doubled).prob_high, 1e-9);
    }
}

TEST(Aggregator, EvalDeterministicTrainUsesStream) {
    auto rng = make_rng(8);
    auto config = tiny();
    config.attention_dropout_p = 0.5;
    const auto params = oracle::randomized_params(config, rng);
    const auto bag = random_bag(rng, 9, 5);
    EXPECT_EQ(forward(params, bag).prob_high, forward(params, bag).prob_high);

    auto r1 = make_rng(100);
    auto r2 = make_rng(100);
    const auto g1 = loss_and_grad(params, bag, Label::High, &r1);
    const auto g2 = loss_and_grad(params, bag, Label::High, &r2);
    EXPECT_EQ(g1.loss, g2.loss);
    EXPECT_TRUE(g1.grad == g2.grad);

    bool differs = false;
    for (std::uint64_t s = 0; s < 10 && !differs; ++s) {
        auto r = make_rng(s);
        differs = forward(params, bag, ForwardMode::training(r)).prob_high != forward(params, bag).prob_high;
    }
    EXPECT_TRUE(differs);
}

TEST(Aggregator, GradientMatchesFiniteDifferences) {
    auto rng = make_rng(9);
    const auto config = tiny(8, 1, 2, 5);
    const auto params = oracle::randomized_params(config, rng);
    const auto bag = random_bag(rng, 3, 5);
    for (auto label : {Label::Low, Label::High}) {
        const auto r = oracle::finite_difference_check(params, bag, label);
        EXPECT_LT(r.worst, 1e-4) << r.worst_tensor << "[" << r.worst_index << "]";
    }
}

TEST(Aggregator, GradientTwoLayersFourHeads) {
    auto rng = make_rng(10);
    const auto config = tiny(8, 2, 4, 3);
    const auto params = oracle::randomized_params(config, rng);
    const auto r = oracle::finite_difference_check(params, random_bag(rng, 5, 3), Label::High);
    EXPECT_LT(r.worst, 1e-4) << r.worst_tensor << "[" << r.worst_index << "]";
}

TEST(Aggregator, DropoutGradientMatchesItsMask) {
    // With a fixed stream the train-mode loss is a deterministic function of
    // the weights, so finite differences apply to it as well.
    auto rng = make_rng(11);
    auto config = tiny(4, 1, 2, 3);
    config.attention_dropout_p = 0.5;
    const auto params = oracle::randomized_params(config, rng);
    const auto bag = random_bag(rng, 4, 3);
    auto stream = make_rng(1234);
    const auto analytic = [&] { auto r = stream; return loss_and_grad(params, bag, Label::Low, &r); }();
    auto probe = params;
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t t = 0; t < probe.tensors().size(); ++t) {
        for (std::size_t i = 0; i < probe.tensors()[t].data.size(); ++i) {
            auto& v = probe.tensors()[t].data[i];
            const double saved = v;
            v = saved + h;
            auto r_up = stream;
            const double up = loss_and_grad(probe, bag, Label::Low, &r_up).loss;
            v = saved - h;
            auto r_down = stream;
            const double down = loss_and_grad(probe, bag, Label::Low, &r_down).loss;
            v = saved;
            worst = std::max(worst, oracle::relative_error(analytic.grad.tensors()[t].data[i], (up - down) / (2 * h)));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Aggregator, HeadGradientClosedForm) {
    using P = AggregatorParams<double>;
    auto rng = make_rng(12);
    const auto config = tiny(8, 1, 2, 5);
    const auto params = oracle::randomized_params(config, rng);
    const auto bag = random_bag(rng, 4, 5);
    const auto lg = loss_and_grad(params, bag, Label::High);
    const auto& p = lg.prediction.probs;
    const double d0 = p[0] - 0.0;
    const double d1 = p[1] - 1.0;
    const auto& gb = lg.grad.tail(P::HeadBias).data;
    EXPECT_NEAR(gb[0], d0, 1e-12);
    EXPECT_NEAR(gb[1], d1, 1e-12);
    // grad W[i][c] = pooled[i] * d_c; recover pooled and check it reproduces the logits.
    const auto& gw = lg.grad.tail(P::HeadWeight).data;
    const auto& w = params.tail(P::HeadWeight).data;
    const auto& b = params.tail(P::HeadBias).data;
    std::array<double, 2> logits{b[0], b[1]};
    for (int i = 0; i < config.model_dim; ++i) {
        const double pooled = gw[std::size_t(i) * 2 + 1] / d1;
        EXPECT_NEAR(gw[std::size_t(i) * 2], pooled * d0, 1e-12);
        logits[0] += pooled * w[std::size_t(i) * 2];
        logits[1] += pooled * w[std::size_t(i) * 2 + 1];
    }
    EXPECT_NEAR(logits[0], lg.prediction.logits[0], 1e-9);
    EXPECT_NEAR(logits[1], lg.prediction.logits[1], 1e-9);
}

TEST(Aggregator, CrossEntropyStableForLargeLogits) {
    EXPECT_NEAR(cross_entropy({1e4, -1e4}, Label::Low), 0.0, 1e-12);
    EXPECT_NEAR(cross_entropy({1e4, -1e4}, Label::High), 2e4, 1e-6);
    EXPECT_TRUE(std::isfinite(cross_entropy({-1e4, 1e4}, Label::Low)));
}

TEST(Aggregator, DimensionMismatchIsShapeError) {
    auto rng = make_rng(13);
    const auto params = init_params<float>(tiny(), 1);
    EXPECT_THROW(forward(params, random_bag(rng, 3, 6)), ShapeError);
}

TEST(Aggregator, NonFiniteActivationReportsLayer) {
    auto rng = make_rng(14);
    auto params = oracle::randomized_params(tiny(8, 2, 2), rng);
    params.layer(1, AggregatorParams<double>::Fc1Weight).data[0] = std::numeric_limits<double>::infinity();
    try {
        forward(params, random_bag(rng, 3, 5));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_EQ(e.layer(), 1);
    }
}

TEST(Ensemble, IdenticalMembersEqualSingle) {
    auto rng = make_rng(15);
    const auto single = oracle::randomized_params(tiny(), rng).cast<float>();
    const std::vector<AggregatorParams<float>> five(5, single);
    const auto bag = random_bag(rng, 6, 5);
    EXPECT_EQ(ensemble_predict(five, bag), forward(single, bag).prob_high);
}

TEST(Ensemble, WithinMemberRange) {
    auto rng = make_rng(16);
    std::vector<AggregatorParams<float>> members;
    for (int i = 0; i < 5; ++i) members.push_back(oracle::randomized_params(tiny(), rng).cast<float>());
    for (int trial = 0; trial < 20; ++trial) {
        const auto bag = random_bag(rng, 1 + uniform_index(rng, 10), 5);
        double lo = 1.0, hi = 0.0;
        for (const auto& m : members) {
            const double p = forward(m, bag).prob_high;
            lo = std::min(lo, p);
            hi = std::max(hi, p);
        }
        const double e = ensemble_predict(members, bag);
        EXPECT_GE(e, lo);
        EXPECT_LE(e, hi);
    }
}

TEST(Ensemble, EmptyIsArgumentError) {
    auto rng = make_rng(17);
    EXPECT_THROW(ensemble_predict({}, random_bag(rng, 2, 5)), ArgumentError);
}

TEST(Checkpoint, RoundTrip) {
    TempDir dir;
    auto rng = make_rng(18);
    Checkpoint ckpt{oracle::randomized_params(tiny(8, 2, 2), rng).cast<float>(), {{"validation_fold", 3}}};
    write_checkpoint(ckpt, dir / "a.ckpt");
    const auto back = read_checkpoint(dir / "a.ckpt");
    EXPECT_TRUE(back.params == ckpt.params);
    EXPECT_EQ(back.metadata, ckpt.metadata);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ckpt));
}

TEST(Checkpoint, TruncatedIsLengthError) {
    auto rng = make_rng(19);
    auto bytes = encode_checkpoint({oracle::randomized_params(tiny(), rng).cast<float>(), {}});
    bytes.resize(bytes.size() - 3);
    EXPECT_THROW(decode_checkpoint(bytes), LengthError);
}

TEST(Checkpoint, BadMagicIsFormatError) {
    auto rng = make_rng(20);
    auto bytes = encode_checkpoint({oracle::randomized_params(tiny(), rng).cast<float>(), {}});
    bytes[1] ^= 0xff;
    EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}
