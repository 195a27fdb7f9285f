#include "mtriage/training.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <exception>
#include <thread>

#include <fmt/format.h>

#include "mtriage/csv.hpp"
#include "mtriage/errors.hpp"

namespace mtriage {

TrainConfig TrainConfig::published_schedule() {
    TrainConfig c;
    c.total_iterations = 1'000'000;
    c.accumulation_steps = 500;
    c.lr_halving_period = 100'000;
    c.validation_period = 10'000;
    return c;
}

void TrainConfig::validate() const {
    if (total_iterations < 0) throw ConfigError("train: total_iterations must be >= 0");
    if (accumulation_steps < 1) throw ConfigError("train: accumulation_steps must be >= 1");
    if (validation_period < 1 || validation_period % accumulation_steps != 0) {
        throw ConfigError("train: validation_period must be a positive multiple of accumulation_steps");
    }
    if (lr_halving_period < 1) throw ConfigError("train: lr_halving_period must be >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train: betas must be in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
    if (!(section_dropout_p >= 0.0 && section_dropout_p < 1.0)) {
        throw ConfigError("train: section_dropout_p must be in [0, 1)");
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"total_iterations", total_iterations},
            {"accumulation_steps", accumulation_steps},
            {"base_lr", base_lr},
            {"lr_halving_period", lr_halving_period},
            {"validation_period", validation_period},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"section_dropout_p", section_dropout_p},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& js) {
    TrainConfig c;
    c.total_iterations = js.value("total_iterations", c.total_iterations);
    c.accumulation_steps = js.value("accumulation_steps", c.accumulation_steps);
    c.base_lr = js.value("base_lr", c.base_lr);
    c.lr_halving_period = js.value("lr_halving_period", c.lr_halving_period);
    c.validation_period = js.value("validation_period", c.validation_period);
    c.weight_decay = js.value("weight_decay", c.weight_decay);
    c.beta1 = js.value("beta1", c.beta1);
    c.beta2 = js.value("beta2", c.beta2);
    c.epsilon = js.value("epsilon", c.epsilon);
    c.section_dropout_p = js.value("section_dropout_p", c.section_dropout_p);
    c.seed = js.value("seed", c.seed);
    c.validate();
    return c;
}

double lr_at(long long iteration, const TrainConfig& config) {
    if (iteration < 0) throw ArgumentError("lr_at: iteration must be >= 0");
    const auto halvings = iteration / config.lr_halving_period;
    return config.base_lr * std::ldexp(1.0, -static_cast<int>(std::min<long long>(halvings, 2000)));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <typename T>
OptimizerState<T> OptimizerState<T>::for_params(const AggregatorParams<T>& params) {
    OptimizerState state;
    for (const auto& t : params.tensors()) {
        state.first_moment.emplace_back(t.size(), T(0));
        state.second_moment.emplace_back(t.size(), T(0));
    }
    return state;
}

template <typename T>
void adamw_step(AggregatorParams<T>& params, const AggregatorParams<T>& grad, OptimizerState<T>& state,
                double lr, const TrainConfig& config) {
    if (!(lr > 0.0)) throw ArgumentError("adamw_step: lr must be > 0");
    auto& ps = params.tensors();
    const auto& gs = grad.tensors();
    if (gs.size() != ps.size() || state.first_moment.size() != ps.size()) {
        throw ShapeError("adamw_step: gradient/state layout does not match parameters");
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (gs[i].size() != ps[i].size()) throw ShapeError("adamw_step: shape mismatch in " + ps[i].name);
        for (T g : gs[i].data) {
            if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient in " + ps[i].name);
        }
    }

    const long long step = state.step + 1;
    const double b1 = config.beta1;
    const double b2 = config.beta2;
    const double correction1 = 1.0 - std::pow(b1, double(step));
    const double correction2 = 1.0 - std::pow(b2, double(step));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& w = ps[i].data;
        const auto& g = gs[i].data;
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = double(g[j]);
            const double mj = b1 * double(m[j]) + (1.0 - b1) * gj;
            const double vj = b2 * double(v[j]) + (1.0 - b2) * gj * gj;
            m[j] = T(mj);
            v[j] = T(vj);
            const double m_hat = mj / correction1;
            const double v_hat = vj / correction2;
            const double wj = double(w[j]);
            w[j] = T(wj - lr * (m_hat / (std::sqrt(v_hat) + config.epsilon) + config.weight_decay * wj));
        }
    }
    state.step = step;
}

template <typename T>
void GradientAccumulator<T>::add(const AggregatorParams<T>& grad) {
    auto& dst = sum_.tensors();
    const auto& src = grad.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        for (std::size_t j = 0; j < dst[i].data.size(); ++j) dst[i].data[j] += src[i].data[j];
    }
    ++count_;
}

template <typename T>
AggregatorParams<T> GradientAccumulator<T>::take() {
    if (count_ == 0) throw ArgumentError("GradientAccumulator: nothing accumulated");
    auto mean = sum_;
    const T inv = T(1) / T(count_);
    for (auto& t : mean.tensors()) {
        for (auto& v : t.data) v *= inv;
    }
    sum_ = sum_.zeros_like();
    count_ = 0;
    return mean;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step<float>(AggregatorParams<float>&, const AggregatorParams<float>&,
                                OptimizerState<float>&, double, const TrainConfig&);
template void adamw_step<double>(AggregatorParams<double>&, const AggregatorParams<double>&,
                                 OptimizerState<double>&, double, const TrainConfig&);
template class GradientAccumulator<float>;
template class GradientAccumulator<double>;

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

FeatureBag cross_section_dropout(const FeatureBag& bag, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("cross_section_dropout: p must be in [0, 1)");

    std::vector<std::pair<std::uint32_t, std::uint16_t>> sections;
    for (const auto& t : bag.tiles) {
        const std::pair key{t.slide, t.section_id};
        if (std::find(sections.begin(), sections.end(), key) == sections.end()) sections.push_back(key);
    }
    if (sections.empty()) return bag;

    std::vector<char> keep(sections.size());
    bool any = false;
    for (auto& k : keep) {
        k = bernoulli(rng, p) ? 0 : 1;
        any = any || k;
    }
    if (!any) keep[uniform_index(rng, sections.size())] = 1;
    if (std::all_of(keep.begin(), keep.end(), [](char k) { return k != 0; })) return bag;

    FeatureBag out;
    out.case_id = bag.case_id;
    out.dim = bag.dim;
    out.slide_ids = bag.slide_ids;
    for (std::size_t i = 0; i < bag.n_tiles(); ++i) {
        const std::pair key{bag.tiles[i].slide, bag.tiles[i].section_id};
        const auto s = static_cast<std::size_t>(std::find(sections.begin(), sections.end(), key) - sections.begin());
        if (!keep[s]) continue;
        out.tiles.push_back(bag.tiles[i]);
        const auto row = bag.row(i);
        out.vectors.insert(out.vectors.end(), row.begin(), row.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

std::string TrainHistory::to_csv(const nlohmann::json& run_config) const {
    std::string out;
    if (!run_config.is_null()) out += csv::run_config_line(run_config);
    out += "iteration,validation_loss,lr\n";
    for (const auto& p : points) {
        out += fmt::format("{},{},{}\n", p.iteration, csv::format_number(p.validation_loss),
                           csv::format_number(p.lr));
    }
    return out;
}

double mean_validation_loss(const AggregatorParams<float>& params, const std::vector<LabeledBag>& cases) {
    if (cases.empty()) throw ConfigError("validation set is empty");
    double total = 0.0;
    for (const auto& c : cases) total += eval_loss(params, c.bag, c.label);
    return total / double(cases.size());
}

FoldResult train_model(const std::vector<LabeledBag>& train, const std::vector<LabeledBag>& validation,
                       const AggregatorConfig& agg_config, const TrainConfig& cfg, int validation_fold) {
    cfg.validate();
    agg_config.validate();
    if (train.empty()) throw ConfigError("training fold is empty");
    if (validation.empty()) throw ConfigError("validation fold is empty");

    FoldResult result;
    result.validation_fold = validation_fold;
    auto params = init_params<float>(agg_config, derive_seed(cfg.seed, "train/init"));
    auto state = OptimizerState<float>::for_params(params);
    GradientAccumulator<float> accumulator(params);

    auto sample_rng = make_rng(derive_seed(cfg.seed, "train/sample"));
    auto section_rng = make_rng(derive_seed(cfg.seed, "train/section_dropout"));
    auto attention_rng = make_rng(derive_seed(cfg.seed, "train/attention_dropout"));

    std::optional<AggregatorParams<float>> best;
    for (long long it = 0; it < cfg.total_iterations; ++it) {
        const auto& specimen = train[uniform_index(sample_rng, train.size())];
        const auto bag = cross_section_dropout(specimen.bag, cfg.section_dropout_p, section_rng);
        const auto lg = loss_and_grad(params, bag, specimen.label, &attention_rng);
        accumulator.add(lg.grad);

        if ((it + 1) % cfg.accumulation_steps == 0) {
            adamw_step(params, accumulator.take(), state, lr_at(it, cfg), cfg);
        }
        if ((it + 1) % cfg.validation_period == 0) {
            const double loss = mean_validation_loss(params, validation);
            result.history.points.push_back({it + 1, loss, lr_at(it, cfg)});
            if (!result.best_validation_loss || loss < *result.best_validation_loss) {
                result.best_validation_loss = loss;
                result.history.best_iteration = it + 1;
                best = params;
            }
        }
    }
    if (accumulator.count() > 0) {
        adamw_step(params, accumulator.take(), state, lr_at(cfg.total_iterations - 1, cfg), cfg);
    }
    result.params = best ? std::move(*best) : std::move(params);
    return result;
}

FoldedCases load_folded_cases(const std::vector<CaseRecord>& cases, const SplitAssignment& split, int k) {
    FoldedCases data;
    data.k = k;
    for (const auto& c : cases) {
        auto it = split.patients.find(c.patient_id);
        if (it == split.patients.end()) throw LookupError("split has no entry for patient '" + c.patient_id + "'");
        if (it->second.set != SplitSet::Development) continue;
        if (!it->second.fold) throw ValidationError("development patient '" + c.patient_id + "' has no fold");
        data.cases.push_back({load_case_bag(c), c.label});
        data.folds.push_back(*it->second.fold);
    }
    return data;
}

FoldResult train_fold(const FoldedCases& data, int fold_id, const AggregatorConfig& agg_config,
                      const TrainConfig& train_config) {
    if (fold_id < 0 || fold_id >= data.k) {
        throw ArgumentError(fmt::format("fold {} out of range [0, {})", fold_id, data.k));
    }
    std::vector<LabeledBag> train;
    std::vector<LabeledBag> validation;
    for (std::size_t i = 0; i < data.cases.size(); ++i) {
        (data.folds[i] == fold_id ? validation : train).push_back(data.cases[i]);
    }
    auto cfg = train_config;
    cfg.seed = derive_seed(train_config.seed, static_cast<std::uint64_t>(fold_id));
    return train_model(train, validation, agg_config, cfg, fold_id);
}

std::vector<FoldResult> train_ensemble(const FoldedCases& data, const AggregatorConfig& agg_config,
                                       const TrainConfig& train_config, int threads) {
    std::vector<FoldResult> results(static_cast<std::size_t>(data.k));
    if (threads <= 1) {
        for (int f = 0; f < data.k; ++f) results[f] = train_fold(data, f, agg_config, train_config);
        return results;
    }
    std::vector<std::exception_ptr> errors(results.size());
    std::atomic<int> next{0};
    std::vector<std::jthread> pool;
    for (int t = 0; t < std::min(threads, data.k); ++t) {
        pool.emplace_back([&] {
            for (int f = next++; f < data.k; f = next++) {
                try {
                    results[f] = train_fold(data, f, agg_config, train_config);
                } catch (...) {
                    errors[f] = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

Checkpoint make_checkpoint(const FoldResult& result, const TrainConfig& train_config,
                           const nlohmann::json& run_config) {
    Checkpoint ckpt;
    ckpt.params = result.params;
    ckpt.metadata = {{"validation_fold", result.validation_fold},
                     {"train_config", train_config.to_json()},
                     {"best_iteration", result.history.best_iteration ? nlohmann::json(*result.history.best_iteration)
                                                                      : nlohmann::json(nullptr)},
                     {"best_validation_loss", result.best_validation_loss
                                                  ? nlohmann::json(*result.best_validation_loss)
                                                  : nlohmann::json(nullptr)}};
    if (!run_config.is_null()) ckpt.metadata["run_config"] = run_config;
    return ckpt;
}

} // namespace mtriage
