#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtriage/aggregator.hpp"
#include "mtriage/dataset.hpp"

namespace mtriage {

struct TrainConfig {
    long long total_iterations = 20'000;
    long long accumulation_steps = 10;
    double base_lr = 0.0005;
    long long lr_halving_period = 2'000;
    long long validation_period = 200;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double section_dropout_p = 0.5;
    std::uint64_t seed = 0;

    /// The schedule used for the published model (1,000,000 iterations).
    static TrainConfig published_schedule();

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& js);
};

/// base_lr * 0.5^floor(iteration / lr_halving_period).
double lr_at(long long iteration, const TrainConfig& config);

template <typename T>
struct OptimizerState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    long long step = 0;

    static OptimizerState for_params(const AggregatorParams<T>& params);
};

/// AdamW with decoupled weight decay: w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
/// A non-finite gradient throws NumericError and leaves params and state
/// untouched.
template <typename T>
void adamw_step(AggregatorParams<T>& params, const AggregatorParams<T>& grad,
                OptimizerState<T>& state, double lr, const TrainConfig& config);

/// Sums gradients and averages them on take().
template <typename T>
class GradientAccumulator {
public:
    explicit GradientAccumulator(const AggregatorParams<T>& like) : sum_(like.zeros_like()) {}

    void add(const AggregatorParams<T>& grad);
    long long count() const { return count_; }
    /// Mean of the added gradients; resets the accumulator.
    AggregatorParams<T> take();

private:
    AggregatorParams<T> sum_;
    long long count_ = 0;
};

/// Drops each cross-section (slide, section) independently with probability
/// p. If every section would be dropped, one is kept, chosen uniformly.
FeatureBag cross_section_dropout(const FeatureBag& bag, double p, Rng& rng);

struct HistoryPoint {
    long long iteration = 0;
    double validation_loss = 0.0;
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<HistoryPoint> points;
    std::optional<long long> best_iteration;

    std::string to_csv(const nlohmann::json& run_config = nullptr) const;
};

/// A case with its bag loaded; training never touches the filesystem.
struct LabeledBag {
    FeatureBag bag;
    Label label = Label::Low;
};

struct FoldResult {
    AggregatorParams<float> params;
    TrainHistory history;
    int validation_fold = 0;
    std::optional<double> best_validation_loss;
};

/// Mean Eval-mode cross-entropy over `cases`.
double mean_validation_loss(const AggregatorParams<float>& params, const std::vector<LabeledBag>& cases);

/// Trains on `train` and validates on `validation` following the recipe:
/// one specimen per iteration sampled uniformly with replacement, section
/// dropout, gradient mean over accumulation_steps, AdamW at lr_at, best
/// validation loss checkpoint (earliest on ties).
FoldResult train_model(const std::vector<LabeledBag>& train, const std::vector<LabeledBag>& validation,
                       const AggregatorConfig& agg_config, const TrainConfig& train_config,
                       int validation_fold = 0);

/// Bags of every development case, with their fold ids.
struct FoldedCases {
    std::vector<LabeledBag> cases;
    std::vector<int> folds;
    int k = 5;
};

FoldedCases load_folded_cases(const std::vector<CaseRecord>& cases, const SplitAssignment& split, int k);

FoldResult train_fold(const FoldedCases& data, int fold_id, const AggregatorConfig& agg_config,
                      const TrainConfig& train_config);

/// One train_fold per fold with seeds derived from train_config.seed. With
/// threads > 1, folds run concurrently; results do not depend on it.
std::vector<FoldResult> train_ensemble(const FoldedCases& data, const AggregatorConfig& agg_config,
                                       const TrainConfig& train_config, int threads = 1);

Checkpoint make_checkpoint(const FoldResult& result, const TrainConfig& train_config,
                           const nlohmann::json& run_config = nullptr);

} // namespace mtriage
