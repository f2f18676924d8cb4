#pragma once

#include <functional>
#include <string>
#include <vector>

#include "frontal/data.hpp"
#include "frontal/nets.hpp"

namespace frontal {

struct EmbedderConfig {
    std::vector<int> channels{8, 16, 32, 64};
    int input_size = kImageSize;
    uint64_t seed = 12345;
    double leaky_slope = 0.2;
};

// Fixed-seed frozen convolutional embedder: a deterministic, identity-
// sensitive measurement instrument standing in for a pretrained face network.
// Parameters never train, but gradients flow through to the image input.
struct Embedder {
    EmbedderConfig cfg;
    std::vector<ConvLayer> stages;

    static Embedder init(const EmbedderConfig& cfg);
    int dim() const { return cfg.channels.back(); }

    Var features(const Var& imgs) const;                    // [B,3,S,S] -> [B,D]
    std::vector<double> embedding(const Tensor& img) const; // unit-normalized, [3,S,S]
};

struct ScoreSet {
    std::vector<double> genuine, imposter;
};

struct RocPoint {
    double far = 0, tar = 0;
};

// All percentages in [0,100].
struct VerificationReport {
    double auc = 0, eer = 0, tar_at_far1 = 0, tar_at_far5 = 0;
    std::vector<RocPoint> roc;
    long n_genuine = 0, n_imposter = 0;

    std::string to_json() const;
};

using FrontalizeFn = std::function<Tensor(const Tensor&)>;  // [3,S,S] -> [3,S,S]
using EmbeddingFn = std::function<std::vector<double>(const Tensor&)>;

std::vector<double> extract_embedding(const Tensor& img, const Embedder& emb);

// Cosine similarities over all gallery x probe pairs, split genuine/imposter
// by identity. Probes are frontalized first when a generator is supplied.
ScoreSet score_protocol(const Dataset& ds, const std::vector<int>& gallery,
                        const std::vector<int>& probe, const FrontalizeFn& generator,
                        const EmbeddingFn& embed);
ScoreSet score_protocol(const Dataset& ds, const std::vector<int>& gallery,
                        const std::vector<int>& probe, const FrontalizeFn& generator,
                        const Embedder& emb);

// Threshold sweep over all distinct scores (accept iff score >= t); AUC by
// trapezoid, EER by linear interpolation of the FAR/FRR crossing, TAR@FAR at
// the largest threshold with FAR <= target.
VerificationReport roc_metrics(const ScoreSet& s);

double tar_at_far(const VerificationReport& r, double far_percent);

}  // namespace frontal
