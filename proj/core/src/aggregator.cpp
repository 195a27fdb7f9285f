#include "mtriage/aggregator.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "mtriage/errors.hpp"

namespace mtriage {

// ---------------------------------------------------------------------------
// Config and parameter container
// ---------------------------------------------------------------------------

void AggregatorConfig::validate() const {
    if (feature_dim < 1 || model_dim < 1 || n_layers < 1 || n_heads < 1 || mlp_ratio < 1) {
        throw ConfigError("aggregator: all dimensions must be >= 1");
    }
    if (model_dim % n_heads != 0) {
        throw ConfigError(fmt::format("aggregator: model_dim {} not divisible by n_heads {}",
                                      model_dim, n_heads));
    }
    if (!(attention_dropout_p >= 0.0 && attention_dropout_p < 1.0)) {
        throw ConfigError("aggregator: attention_dropout_p must be in [0, 1)");
    }
    if (n_classes != 2) throw ConfigError("aggregator: n_classes must be 2");
}

nlohmann::json AggregatorConfig::to_json() const {
    return {{"feature_dim", feature_dim}, {"model_dim", model_dim},
            {"n_layers", n_layers},       {"n_heads", n_heads},
            {"mlp_ratio", mlp_ratio},     {"attention_dropout_p", attention_dropout_p},
            {"n_classes", n_classes}};
}

AggregatorConfig AggregatorConfig::from_json(const nlohmann::json& js) {
    AggregatorConfig c;
    try {
        c.feature_dim = js.at("feature_dim").get<int>();
        c.model_dim = js.at("model_dim").get<int>();
        c.n_layers = js.at("n_layers").get<int>();
        c.n_heads = js.at("n_heads").get<int>();
        c.mlp_ratio = js.at("mlp_ratio").get<int>();
        c.attention_dropout_p = js.at("attention_dropout_p").get<double>();
        c.n_classes = js.at("n_classes").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("aggregator config: ") + e.what());
    }
    c.validate();
    return c;
}

template <typename T>
AggregatorParams<T>::AggregatorParams(const AggregatorConfig& config) : config_(config) {
    config_.validate();
    const auto F = static_cast<std::size_t>(config.feature_dim);
    const auto D = static_cast<std::size_t>(config.model_dim);
    const auto M = static_cast<std::size_t>(config.mlp_dim());
    const auto C = static_cast<std::size_t>(config.n_classes);
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        tensors_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
    };
    add("input_proj.weight", {F, D});
    add("input_proj.bias", {D});
    add("cls_token", {D});
    for (int l = 0; l < config.n_layers; ++l) {
        const auto p = fmt::format("blocks.{}.", l);
        add(p + "norm1.gain", {D});
        add(p + "norm1.bias", {D});
        for (const char* proj : {"q", "k", "v", "out"}) {
            add(p + "attn." + proj + ".weight", {D, D});
            add(p + "attn." + proj + ".bias", {D});
        }
        add(p + "norm2.gain", {D});
        add(p + "norm2.bias", {D});
        add(p + "mlp.fc1.weight", {D, M});
        add(p + "mlp.fc1.bias", {M});
        add(p + "mlp.fc2.weight", {M, D});
        add(p + "mlp.fc2.bias", {D});
    }
    add("final_norm.gain", {D});
    add("final_norm.bias", {D});
    add("head.weight", {D, C});
    add("head.bias", {C});
}

template <typename T>
std::size_t AggregatorParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

template <typename T>
AggregatorParams<T> AggregatorParams<T>::zeros_like() const {
    return AggregatorParams<T>(config_);
}

template <typename T>
bool AggregatorParams<T>::all_finite() const {
    for (const auto& t : tensors_) {
        for (T v : t.data) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

template <typename T>
bool AggregatorParams<T>::operator==(const AggregatorParams& other) const {
    return config_ == other.config_ && tensors_ == other.tensors_;
}

template <typename T>
AggregatorParams<T> init_params(const AggregatorConfig& config, std::uint64_t seed) {
    AggregatorParams<T> params(config);
    auto rng = make_rng(derive_seed(seed, "aggregator/init"));
    auto fill_truncated = [&](Tensor<T>& t, double sigma) {
        for (auto& v : t.data) {
            double z;
            do {
                z = standard_normal(rng);
            } while (std::abs(z) > 2.0);
            v = static_cast<T>(z * sigma);
        }
    };
    auto fan_in_init = [&](Tensor<T>& t) {
        fill_truncated(t, 1.0 / std::sqrt(double(t.shape[0])));
    };
    auto ones = [](Tensor<T>& t) { std::fill(t.data.begin(), t.data.end(), T(1)); };

    using P = AggregatorParams<T>;
    fan_in_init(params.global(P::InputWeight));
    fill_truncated(params.global(P::ClsToken), 1.0 / std::sqrt(double(config.model_dim)));
    for (int l = 0; l < config.n_layers; ++l) {
        ones(params.layer(l, P::Norm1Gain));
        ones(params.layer(l, P::Norm2Gain));
        for (auto w : {P::QWeight, P::KWeight, P::VWeight, P::OutWeight, P::Fc1Weight, P::Fc2Weight}) {
            fan_in_init(params.layer(l, w));
        }
    }
    ones(params.tail(P::FinalGain));
    // Classifier head stays zero.
    return params;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
Eigen::Map<const Mat<T>> as_mat(const Tensor<T>& t) {
    return {t.data.data(), Eigen::Index(t.shape[0]), Eigen::Index(t.shape[1])};
}
template <typename T>
Eigen::Map<Mat<T>> as_mat(Tensor<T>& t) {
    return {t.data.data(), Eigen::Index(t.shape[0]), Eigen::Index(t.shape[1])};
}
template <typename T>
Eigen::Map<const RowVec<T>> as_vec(const Tensor<T>& t) {
    return {t.data.data(), Eigen::Index(t.data.size())};
}
template <typename T>
Eigen::Map<RowVec<T>> as_vec(Tensor<T>& t) {
    return {t.data.data(), Eigen::Index(t.data.size())};
}

constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormCache {
    Mat<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                  LayerNormCache<T>& cache) {
    const auto d = x.cols();
    cache.xhat.resize(x.rows(), d);
    cache.rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T mean = x.row(r).mean();
        const T var = (x.row(r).array() - mean).square().mean();
        const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
        cache.rstd(r) = rstd;
        cache.xhat.row(r) = (x.row(r).array() - mean) * rstd;
    }
    Mat<T> y = cache.xhat.array().rowwise() * as_vec(gain).array();
    y.rowwise() += as_vec(bias);
    return y;
}

// dy -> dx, accumulating gain/bias gradients.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LayerNormCache<T>& cache, const Tensor<T>& gain,
                           Tensor<T>& dgain, Tensor<T>& dbias) {
    as_vec(dgain) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    as_vec(dbias) += dy.colwise().sum();
    const Mat<T> dxhat = dy.array().rowwise() * as_vec(gain).array();
    const T inv_d = T(1) / T(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const T mean_dxhat = dxhat.row(r).sum() * inv_d;
        const T mean_dxhat_xhat = dxhat.row(r).dot(cache.xhat.row(r)) * inv_d;
        dx.row(r) = cache.rstd(r) *
                    (dxhat.row(r).array() - mean_dxhat - cache.xhat.row(r).array() * mean_dxhat_xhat);
    }
    return dx;
}

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
    return cdf + x * pdf;
}

template <typename T>
struct LayerCache {
    Mat<T> z_in;
    LayerNormCache<T> ln1;
    Mat<T> a;       // LN1 output, all rows (cls first)
    Mat<T> q;       // (n+1) x D
    Mat<T> k, v;    // n x D (tile rows only)
    std::vector<Mat<T>> probs;    // per head, (n+1) x n
    std::vector<Mat<T>> dropped;  // per head, probs after dropout (empty when no dropout)
    Mat<T> o;       // (n+1) x D concatenated heads
    Mat<T> z_mid;
    LayerNormCache<T> ln2;
    Mat<T> b;
    Mat<T> u;
    Mat<T> g;
};

template <typename T>
struct ForwardCache {
    Mat<T> x;  // n x F
    std::vector<LayerCache<T>> layers;
    Mat<T> z_out;
    LayerNormCache<T> final_ln;
    Mat<T> pooled;  // 1 x D
    Prediction prediction;
};

template <typename T>
void check_finite(const Mat<T>& m, int layer, const char* what) {
    if (!m.allFinite()) {
        throw NumericError(fmt::format("non-finite {} in layer {}", what, layer), layer);
    }
}

template <typename T>
void softmax_rows(Mat<T>& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const T m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
    }
}

template <typename T>
void run_forward(const AggregatorParams<T>& params, const FeatureBag& bag, ForwardMode mode,
                 ForwardCache<T>& cache) {
    using P = AggregatorParams<T>;
    const auto& cfg = params.config();
    if (bag.n_tiles() == 0) throw ShapeError("bag has no tiles");
    if (bag.dim != static_cast<std::size_t>(cfg.feature_dim)) {
        throw ShapeError(fmt::format("bag '{}' has feature dim {}, model expects {}", bag.case_id,
                                     bag.dim, cfg.feature_dim));
    }
    if (bag.vectors.size() != bag.n_tiles() * bag.dim) {
        throw ShapeError("bag vector storage does not match n_tiles * dim");
    }
    const auto n = static_cast<Eigen::Index>(bag.n_tiles());
    const auto D = static_cast<Eigen::Index>(cfg.model_dim);
    const int H = cfg.n_heads;
    const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
    const T scale = T(1) / std::sqrt(T(dh));
    const double p_drop = cfg.attention_dropout_p;
    const bool dropout = mode.train && mode.rng != nullptr && p_drop > 0.0;
    const T keep_scale = T(1.0 / (1.0 - p_drop));

    cache.x = Eigen::Map<const Mat<float>>(bag.vectors.data(), n, Eigen::Index(bag.dim)).template cast<T>();

    Mat<T> z(n + 1, D);
    z.row(0) = as_vec(params.global(P::ClsToken));
    z.bottomRows(n).noalias() = cache.x * as_mat(params.global(P::InputWeight));
    z.bottomRows(n).rowwise() += as_vec(params.global(P::InputBias));
    check_finite(z, -1, "input projection");

    cache.layers.assign(static_cast<std::size_t>(cfg.n_layers), {});
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& lc = cache.layers[static_cast<std::size_t>(l)];
        lc.z_in = z;
        lc.a = layer_norm(z, params.layer(l, P::Norm1Gain), params.layer(l, P::Norm1Bias), lc.ln1);

        lc.q.noalias() = lc.a * as_mat(params.layer(l, P::QWeight));
        lc.q.rowwise() += as_vec(params.layer(l, P::QBias));
        const auto tiles = lc.a.bottomRows(n);
        lc.k.noalias() = tiles * as_mat(params.layer(l, P::KWeight));
        lc.k.rowwise() += as_vec(params.layer(l, P::KBias));
        lc.v.noalias() = tiles * as_mat(params.layer(l, P::VWeight));
        lc.v.rowwise() += as_vec(params.layer(l, P::VBias));

        lc.o.resize(n + 1, D);
        lc.probs.resize(static_cast<std::size_t>(H));
        lc.dropped.assign(dropout ? static_cast<std::size_t>(H) : 0, {});
        for (int h = 0; h < H; ++h) {
            const auto c0 = Eigen::Index(h) * dh;
            auto& prob = lc.probs[static_cast<std::size_t>(h)];
            prob.noalias() = scale * lc.q.middleCols(c0, dh) * lc.k.middleCols(c0, dh).transpose();
            softmax_rows(prob);
            if (dropout) {
                auto& kept = lc.dropped[static_cast<std::size_t>(h)];
                kept.resize(prob.rows(), prob.cols());
                for (Eigen::Index r = 0; r < prob.rows(); ++r) {
                    for (Eigen::Index c = 0; c < prob.cols(); ++c) {
                        kept(r, c) = bernoulli(*mode.rng, p_drop) ? T(0) : prob(r, c) * keep_scale;
                    }
                }
                lc.o.middleCols(c0, dh).noalias() = kept * lc.v.middleCols(c0, dh);
            } else {
                lc.o.middleCols(c0, dh).noalias() = prob * lc.v.middleCols(c0, dh);
            }
        }
        lc.z_mid = lc.z_in;
        lc.z_mid.noalias() += lc.o * as_mat(params.layer(l, P::OutWeight));
        lc.z_mid.rowwise() += as_vec(params.layer(l, P::OutBias));

        lc.b = layer_norm(lc.z_mid, params.layer(l, P::Norm2Gain), params.layer(l, P::Norm2Bias), lc.ln2);
        lc.u.noalias() = lc.b * as_mat(params.layer(l, P::Fc1Weight));
        lc.u.rowwise() += as_vec(params.layer(l, P::Fc1Bias));
        lc.g = lc.u.unaryExpr([](T x) { return gelu(x); });
        z = lc.z_mid;
        z.noalias() += lc.g * as_mat(params.layer(l, P::Fc2Weight));
        z.rowwise() += as_vec(params.layer(l, P::Fc2Bias));
        check_finite(z, l, "activations");
    }
    cache.z_out = z;

    const Mat<T> cls = z.topRows(1);
    cache.pooled = layer_norm(cls, params.tail(P::FinalGain), params.tail(P::FinalBias), cache.final_ln);
    RowVec<T> logits = cache.pooled * as_mat(params.tail(P::HeadWeight));
    logits += as_vec(params.tail(P::HeadBias));
    if (!logits.allFinite()) throw NumericError("non-finite logits", cfg.n_layers);

    auto& pred = cache.prediction;
    pred.logits = {double(logits(0)), double(logits(1))};
    const double m = std::max(pred.logits[0], pred.logits[1]);
    const double e0 = std::exp(pred.logits[0] - m);
    const double e1 = std::exp(pred.logits[1] - m);
    pred.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
    pred.prob_high = pred.probs[1];

    // Classification-token row of the final layer, averaged over heads.
    const auto& last = cache.layers.back();
    pred.attention.assign(static_cast<std::size_t>(n), 0.0);
    for (const auto& prob : last.probs) {
        for (Eigen::Index c = 0; c < n; ++c) pred.attention[static_cast<std::size_t>(c)] += double(prob(0, c));
    }
    double total = 0.0;
    for (double w : pred.attention) total += w;
    for (double& w : pred.attention) w /= total;
}

template <typename T>
void run_backward(const AggregatorParams<T>& params, const ForwardCache<T>& cache,
                  const RowVec<T>& dlogits, AggregatorParams<T>& grad) {
    using P = AggregatorParams<T>;
    const auto& cfg = params.config();
    const auto n = cache.x.rows();
    const int H = cfg.n_heads;
    const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
    const T scale = T(1) / std::sqrt(T(dh));

    as_mat(grad.tail(P::HeadWeight)).noalias() += cache.pooled.transpose() * dlogits;
    as_vec(grad.tail(P::HeadBias)) += dlogits;
    const Mat<T> dpooled = dlogits * as_mat(params.tail(P::HeadWeight)).transpose();
    const Mat<T> dcls = layer_norm_backward(dpooled, cache.final_ln, params.tail(P::FinalGain),
                                            grad.tail(P::FinalGain), grad.tail(P::FinalBias));

    Mat<T> dz = Mat<T>::Zero(n + 1, cache.z_out.cols());
    dz.row(0) = dcls.row(0);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lc = cache.layers[static_cast<std::size_t>(l)];

        // MLP branch: z = z_mid + gelu(LN2(z_mid) W1 + b1) W2 + b2
        as_mat(grad.layer(l, P::Fc2Weight)).noalias() += lc.g.transpose() * dz;
        as_vec(grad.layer(l, P::Fc2Bias)) += dz.colwise().sum();
        Mat<T> du = dz * as_mat(params.layer(l, P::Fc2Weight)).transpose();
        du.array() *= lc.u.unaryExpr([](T x) { return gelu_grad(x); }).array();
        as_mat(grad.layer(l, P::Fc1Weight)).noalias() += lc.b.transpose() * du;
        as_vec(grad.layer(l, P::Fc1Bias)) += du.colwise().sum();
        const Mat<T> db = du * as_mat(params.layer(l, P::Fc1Weight)).transpose();
        Mat<T> dz_mid = dz + layer_norm_backward(db, lc.ln2, params.layer(l, P::Norm2Gain),
                                                 grad.layer(l, P::Norm2Gain), grad.layer(l, P::Norm2Bias));

        // Attention branch: z_mid = z_in + O Wo + bo
        as_mat(grad.layer(l, P::OutWeight)).noalias() += lc.o.transpose() * dz_mid;
        as_vec(grad.layer(l, P::OutBias)) += dz_mid.colwise().sum();
        const Mat<T> d_o = dz_mid * as_mat(params.layer(l, P::OutWeight)).transpose();

        Mat<T> dq(n + 1, lc.q.cols());
        Mat<T> dk(n, lc.k.cols());
        Mat<T> dv(n, lc.v.cols());
        const bool dropout = !lc.dropped.empty();
        const T keep_scale = T(1.0 / (1.0 - cfg.attention_dropout_p));
        for (int h = 0; h < H; ++h) {
            const auto c0 = Eigen::Index(h) * dh;
            const auto& prob = lc.probs[static_cast<std::size_t>(h)];
            const auto& used = dropout ? lc.dropped[static_cast<std::size_t>(h)] : prob;
            const auto d_oh = d_o.middleCols(c0, dh);
            dv.middleCols(c0, dh).noalias() = used.transpose() * d_oh;
            Mat<T> dprob = d_oh * lc.v.middleCols(c0, dh).transpose();
            if (dropout) {
                // Gradient flows only through kept entries, scaled as in forward.
                dprob = (used.array() != T(0)).select(dprob * keep_scale, T(0));
            }
            // Softmax backward: dS = P * (dP - rowsum(dP * P)).
            const Eigen::Matrix<T, Eigen::Dynamic, 1> inner = (dprob.array() * prob.array()).rowwise().sum();
            Mat<T> ds = prob.array() * (dprob.array().colwise() - inner.array());
            ds *= scale;
            dq.middleCols(c0, dh).noalias() = ds * lc.k.middleCols(c0, dh);
            dk.middleCols(c0, dh).noalias() = ds.transpose() * lc.q.middleCols(c0, dh);
        }

        const auto tiles = lc.a.bottomRows(n);
        as_mat(grad.layer(l, P::QWeight)).noalias() += lc.a.transpose() * dq;
        as_vec(grad.layer(l, P::QBias)) += dq.colwise().sum();
        as_mat(grad.layer(l, P::KWeight)).noalias() += tiles.transpose() * dk;
        as_vec(grad.layer(l, P::KBias)) += dk.colwise().sum();
        as_mat(grad.layer(l, P::VWeight)).noalias() += tiles.transpose() * dv;
        as_vec(grad.layer(l, P::VBias)) += dv.colwise().sum();

        Mat<T> da = dq * as_mat(params.layer(l, P::QWeight)).transpose();
        da.bottomRows(n).noalias() += dk * as_mat(params.layer(l, P::KWeight)).transpose();
        da.bottomRows(n).noalias() += dv * as_mat(params.layer(l, P::VWeight)).transpose();

        dz = dz_mid + layer_norm_backward(da, lc.ln1, params.layer(l, P::Norm1Gain),
                                          grad.layer(l, P::Norm1Gain), grad.layer(l, P::Norm1Bias));
    }

    as_vec(grad.global(P::ClsToken)) += dz.row(0);
    const auto dtiles = dz.bottomRows(n);
    as_mat(grad.global(P::InputWeight)).noalias() += cache.x.transpose() * dtiles;
    as_vec(grad.global(P::InputBias)) += dtiles.colwise().sum();
}

} // namespace

double cross_entropy(const std::array<double, 2>& logits, Label label) {
    const double m = std::max(logits[0], logits[1]);
    const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
    return lse - logits[static_cast<std::size_t>(label)];
}

template <typename T>
Prediction forward(const AggregatorParams<T>& params, const FeatureBag& bag, ForwardMode mode) {
    ForwardCache<T> cache;
    run_forward(params, bag, mode, cache);
    return std::move(cache.prediction);
}

template <typename T>
LossGrad<T> loss_and_grad(const AggregatorParams<T>& params, const FeatureBag& bag, Label label,
                          Rng* rng) {
    ForwardCache<T> cache;
    run_forward(params, bag, rng ? ForwardMode::training(*rng) : ForwardMode::eval(), cache);

    LossGrad<T> out;
    out.loss = cross_entropy(cache.prediction.logits, label);
    RowVec<T> dlogits(2);
    dlogits(0) = T(cache.prediction.probs[0]);
    dlogits(1) = T(cache.prediction.probs[1]);
    dlogits(static_cast<Eigen::Index>(label)) -= T(1);
    out.grad = params.zeros_like();
    run_backward(params, cache, dlogits, out.grad);
    out.prediction = std::move(cache.prediction);
    return out;
}

template <typename T>
double eval_loss(const AggregatorParams<T>& params, const FeatureBag& bag, Label label) {
    return cross_entropy(forward(params, bag).logits, label);
}

template <typename T>
std::vector<double> attention_weights(const AggregatorParams<T>& params, const FeatureBag& bag) {
    return forward(params, bag).attention;
}

double member_mean(std::span<const double> values) {
    if (values.empty()) throw ArgumentError("member_mean: no values");
    // Offsets from the first member keep identical members exact.
    double offset = 0.0;
    for (double v : values) offset += v - values.front();
    return values.front() + offset / double(values.size());
}

double ensemble_predict(std::span<const AggregatorParams<float>> members, const FeatureBag& bag) {
    if (members.empty()) throw ArgumentError("ensemble_predict: no members");
    for (const auto& m : members) {
        if (!(m.config() == members.front().config())) {
            throw ValidationError("ensemble_predict: members have different configs");
        }
    }
    std::vector<double> probs;
    for (const auto& m : members) probs.push_back(forward(m, bag).prob_high);
    return member_mean(probs);
}

template class AggregatorParams<float>;
template class AggregatorParams<double>;
template AggregatorParams<float> init_params<float>(const AggregatorConfig&, std::uint64_t);
template AggregatorParams<double> init_params<double>(const AggregatorConfig&, std::uint64_t);
template Prediction forward<float>(const AggregatorParams<float>&, const FeatureBag&, ForwardMode);
template Prediction forward<double>(const AggregatorParams<double>&, const FeatureBag&, ForwardMode);
template LossGrad<float> loss_and_grad<float>(const AggregatorParams<float>&, const FeatureBag&, Label, Rng*);
template LossGrad<double> loss_and_grad<double>(const AggregatorParams<double>&, const FeatureBag&, Label, Rng*);
template double eval_loss<float>(const AggregatorParams<float>&, const FeatureBag&, Label);
template double eval_loss<double>(const AggregatorParams<double>&, const FeatureBag&, Label);
template std::vector<double> attention_weights<float>(const AggregatorParams<float>&, const FeatureBag&);
template std::vector<double> attention_weights<double>(const AggregatorParams<double>&, const FeatureBag&);

} // namespace mtriage
