#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtriage/dataset.hpp"
#include "mtriage/random.hpp"

namespace mtriage {

/// Bag-level transformer shape. Tile tokens carry no positional encoding,
/// so predictions are invariant to tile order.
struct AggregatorConfig {
    int feature_dim = 192;
    int model_dim = 192;
    int n_layers = 2;
    int n_heads = 3;
    int mlp_ratio = 4;
    double attention_dropout_p = 0.5;
    int n_classes = 2;

    void validate() const;
    int head_dim() const { return model_dim / n_heads; }
    int mlp_dim() const { return model_dim * mlp_ratio; }

    nlohmann::json to_json() const;
    static AggregatorConfig from_json(const nlohmann::json& js);
    bool operator==(const AggregatorConfig&) const = default;
};

template <typename T>
struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> data;

    std::size_t size() const { return data.size(); }
};

/// All weights of the aggregator, in definition order:
///   input_proj.{weight,bias}, cls_token,
///   blocks.<l>.{norm1.{gain,bias}, attn.{q,k,v,out}.{weight,bias},
///               norm2.{gain,bias}, mlp.{fc1,fc2}.{weight,bias}},
///   final_norm.{gain,bias}, head.{weight,bias}.
/// Matrices are stored [in, out] row-major so a row vector maps as x W + b.
/// Gradients use the same type and layout.
template <typename T>
class AggregatorParams {
public:
    static constexpr std::size_t kPerLayer = 16;

    enum Global : std::size_t { InputWeight = 0, InputBias = 1, ClsToken = 2, kGlobalCount = 3 };
    enum Layer : std::size_t {
        Norm1Gain, Norm1Bias, QWeight, QBias, KWeight, KBias, VWeight, VBias,
        OutWeight, OutBias, Norm2Gain, Norm2Bias, Fc1Weight, Fc1Bias, Fc2Weight, Fc2Bias
    };
    enum Tail : std::size_t { FinalGain, FinalBias, HeadWeight, HeadBias };

    AggregatorParams() = default;
    /// Allocates zero-filled tensors with the layout implied by `config`.
    explicit AggregatorParams(const AggregatorConfig& config);

    const AggregatorConfig& config() const { return config_; }
    std::vector<Tensor<T>>& tensors() { return tensors_; }
    const std::vector<Tensor<T>>& tensors() const { return tensors_; }

    Tensor<T>& global(Global g) { return tensors_[g]; }
    const Tensor<T>& global(Global g) const { return tensors_[g]; }
    Tensor<T>& layer(int l, Layer which) { return tensors_[layer_index(l, which)]; }
    const Tensor<T>& layer(int l, Layer which) const { return tensors_[layer_index(l, which)]; }
    Tensor<T>& tail(Tail which) { return tensors_[tail_index(which)]; }
    const Tensor<T>& tail(Tail which) const { return tensors_[tail_index(which)]; }

    std::size_t parameter_count() const;
    AggregatorParams zeros_like() const;
    bool all_finite() const;

    template <typename U>
    AggregatorParams<U> cast() const {
        AggregatorParams<U> out(config_);
        for (std::size_t i = 0; i < tensors_.size(); ++i) {
            const auto& src = tensors_[i].data;
            auto& dst = out.tensors()[i].data;
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<U>(src[j]);
        }
        return out;
    }

    bool operator==(const AggregatorParams&) const;

private:
    std::size_t layer_index(int l, Layer which) const {
        return kGlobalCount + static_cast<std::size_t>(l) * kPerLayer + which;
    }
    std::size_t tail_index(Tail which) const {
        return kGlobalCount + static_cast<std::size_t>(config_.n_layers) * kPerLayer + which;
    }

    AggregatorConfig config_;
    std::vector<Tensor<T>> tensors_;
};

template <typename T>
bool operator==(const Tensor<T>& a, const Tensor<T>& b) {
    return a.name == b.name && a.shape == b.shape && a.data == b.data;
}

/// Truncated normal (+-2 sigma) weights with sigma = 1/sqrt(fan_in); zero
/// biases, unit norm gains, zero classifier head.
template <typename T>
AggregatorParams<T> init_params(const AggregatorConfig& config, std::uint64_t seed);

struct Prediction {
    std::array<double, 2> logits{};
    std::array<double, 2> probs{};
    double prob_high = 0.0;
    /// Final-layer classification-token attention over tiles, head-averaged
    /// and renormalized.
    std::vector<double> attention;
};

/// Eval is deterministic. Train applies dropout to the post-softmax
/// attention matrix (survivors scaled by 1/(1-p)) using the given stream.
struct ForwardMode {
    bool train = false;
    Rng* rng = nullptr;

    static ForwardMode eval() { return {}; }
    static ForwardMode training(Rng& rng) { return {true, &rng}; }
};

template <typename T>
Prediction forward(const AggregatorParams<T>& params, const FeatureBag& bag,
                   ForwardMode mode = ForwardMode::eval());

template <typename T>
struct LossGrad {
    double loss = 0.0;
    Prediction prediction;
    AggregatorParams<T> grad;
};

/// Cross-entropy of the true class and its exact gradient. When `rng` is
/// given the forward pass runs in Train mode and backward reuses the same
/// dropout mask; otherwise it is the Eval-mode loss.
template <typename T>
LossGrad<T> loss_and_grad(const AggregatorParams<T>& params, const FeatureBag& bag, Label label,
                          Rng* rng = nullptr);

/// Eval-mode cross-entropy without gradient.
template <typename T>
double eval_loss(const AggregatorParams<T>& params, const FeatureBag& bag, Label label);

template <typename T>
std::vector<double> attention_weights(const AggregatorParams<T>& params, const FeatureBag& bag);

/// Arithmetic mean; exact when every value is the same.
double member_mean(std::span<const double> values);

/// Mean of the members' Eval-mode prob_high.
double ensemble_predict(std::span<const AggregatorParams<float>> members, const FeatureBag& bag);

/// -log softmax(logits)[label], with max subtraction.
double cross_entropy(const std::array<double, 2>& logits, Label label);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    AggregatorParams<float> params;
    /// Free-form run metadata stored next to the aggregator config: training
    /// config, validation fold, run_config.
    nlohmann::json metadata = nlohmann::json::object();
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

} // namespace mtriage
