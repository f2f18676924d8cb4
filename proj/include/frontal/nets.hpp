#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "frontal/autodiff.hpp"

namespace frontal {

struct EqualizationConfig {
    double epsilon = 1e-8;
};

// Per-location channel normalization: b = a / sqrt(mean_c a^2 + eps).
// Accepts [B,C,H,W] (channel axis 1) or [B,D] feature matrices. A non-empty
// `layer` name is used to attribute non-finite activations to their producer.
Var equalize_features(const Var& a, const EqualizationConfig& cfg,
                      const std::string& layer = "");

struct ConvLayer {
    Var w, b;
};

struct AttentionParams {
    ConvLayer query, key, value;
    Var gamma;  // learned mixing scalar, starts at 0
};

// out = x + gamma * (value projection weighted by a row-stochastic spatial
// attention map); bottleneck scale only. `attn_out` receives the [B,HW,HW]
// attention map when given.
Var self_attention(const Var& x, const AttentionParams& p, Var* attn_out = nullptr);

struct GeneratorConfig {
    std::vector<int> encoder_channels{32, 64, 128, 256, 512};
    int input_size = 128;
    int input_channels = 3;
    bool self_attention = true;   // architecture switch (owns parameters)
    bool equalization = true;     // runtime switch, no parameters involved
    double leaky_slope = 0.2;
    double equalize_eps = 1e-8;

    int stages() const { return static_cast<int>(encoder_channels.size()); }
    int bottleneck_channels() const { return encoder_channels.back(); }
    int bottleneck_size() const { return input_size >> stages(); }
    long bottleneck_dim() const {
        return static_cast<long>(bottleneck_channels()) * bottleneck_size() *
               bottleneck_size();
    }
    int decoder_channels(int stage) const {
        return encoder_channels[static_cast<size_t>(stages() - 1 - stage)] / 2;
    }
};

// One weight store serves both dual-path passes; Var handles share nodes, so
// an optimizer update is visible to every forward that reads the store.
struct GeneratorWeights {
    GeneratorConfig cfg;
    std::vector<ConvLayer> enc;   // strided conv per stage
    AttentionParams attn;         // only populated when cfg.self_attention
    std::vector<ConvLayer> dec;   // transposed conv per stage
    ConvLayer side32, side64, out;

    static GeneratorWeights init(const GeneratorConfig& cfg, uint64_t seed);
    std::vector<std::pair<std::string, Var>> named_params() const;
    long param_count() const;
};

struct LatentFeatures {
    Var bottleneck;            // E(x), consumed by the classifier and Eq. 7
    std::vector<Var> skips;    // one per encoder stage except the last
};

struct DecoderOutputs {
    Var y32, y64, y128;  // all sigmoid-limited into [0,1]
};

LatentFeatures encoder_forward(const Var& x, const GeneratorWeights& gw);
DecoderOutputs decoder_forward(const LatentFeatures& z, const GeneratorWeights& gw);

struct CriticConfig {
    int input_size = 128;
    int input_channels = 3;
    std::vector<int> channels{16, 32, 64, 128, 256};
    double leaky_slope = 0.2;
};

// WGAN critic: strided conv stages into an unbounded scalar score head.
// D_g and D_l are two independent instances of the same architecture.
struct CriticWeights {
    CriticConfig cfg;
    std::vector<ConvLayer> stages;
    Var head_w, head_b;

    static CriticWeights init(const CriticConfig& cfg, uint64_t seed);
    std::vector<std::pair<std::string, Var>> named_params() const;
    long param_count() const;
};

Var critic_forward(const Var& img, const CriticWeights& cw);  // -> score [B]

struct DomainClassifierConfig {
    int in_dim = 8192;
    int hidden1 = 128;
    int hidden2 = 64;
    double leaky_slope = 0.2;
    double equalize_eps = 1e-8;
};

// 3-layer MLP on the flattened bottleneck; sigmoid head, so outputs are the
// probability that the source image is visible-domain.
struct DomainClassifierWeights {
    DomainClassifierConfig cfg;
    Var w1, b1, w2, b2, w3, b3;

    static DomainClassifierWeights init(const DomainClassifierConfig& cfg, uint64_t seed);
    std::vector<std::pair<std::string, Var>> named_params() const;
    long param_count() const;
};

Var domain_classifier_forward(const Var& z_flat, const DomainClassifierWeights& dw);

// x [B,in], w [out,in], b [out] -> [B,out]
Var linear(const Var& x, const Var& w, const Var& b);

// Flattens [B,C,H,W] latents to [B,C*H*W].
Var flatten_batch(const Var& x);

}  // namespace frontal
