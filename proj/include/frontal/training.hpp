#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "frontal/data.hpp"
#include "frontal/eval.hpp"
#include "frontal/losses.hpp"
#include "frontal/nets.hpp"

namespace frontal {

// Cumulative ablation switches mirroring the component ladder; everything on
// by default. The plain 128-scale L1 pixel term and the global critic are
// part of the baseline and have no switch.
struct AblationFlags {
    bool multiscale_pixel = true;
    bool identity_loss = true;
    bool self_attention = true;
    bool local_critic = true;
    bool equalization = true;
    bool cls_loss = true;
    bool contrastive = true;
};

struct TrainConfig {
    LossWeights weights;
    double learning_rate = 0.01;
    double lr_decay = 1.0;  // final learning-rate fraction, linear schedule
    int batch_size = 8;     // images per step across both paths (even)
    long total_steps = 500;
    int critic_steps = 1;
    uint64_t seed = 7;
    double same_id_fraction = 0.5;
    long checkpoint_every = 500;
    AblationFlags ablation;
    GeneratorConfig generator;
    CriticConfig critic;
    DomainClassifierConfig classifier;  // in_dim derived from the generator
    EmbedderConfig embedder;
    std::string out_dir = "runs/train";

    void validate() const;
};

// Adaptive-moment optimizer, beta1 = 0 by default as is usual for
// gradient-penalty critics.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Var> params, double beta1 = 0.0, double beta2 = 0.99, double eps = 1e-8);
    void step(const GradMap& grads, double lr);
    const std::vector<Var>& params() const { return params_; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
    double b1_ = 0.0, b2_ = 0.99, eps_ = 1e-8;
};

struct TrainerState {
    TrainConfig cfg;
    GeneratorWeights gen;        // single store shared by both dual-path passes
    CriticWeights d_global, d_local;
    DomainClassifierWeights classifier;
    Embedder embedder;
    Adam opt_gen;                // generator + classifier group
    Adam opt_dg, opt_dl;
    Rng rng{0};
    long step = 0;

    long param_count() const;
    double current_lr() const;
};

TrainerState init_trainer(const TrainConfig& cfg);

// Critic updates on (y, y_hat) with the generator frozen; touches only
// critic parameters.
void critic_phase(TrainerState& st, const PairBatch& batch, LossRecord& rec);

// Dual-path generator + classifier update; touches only that group.
void generator_phase(TrainerState& st, const PairBatch& batch, LossRecord& rec);

// One critic phase + one generator phase on a dual-path batch.
LossRecord train_step(TrainerState& st, const PairBatch& batch);

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
};

TrainResult train(const TrainConfig& cfg, const Dataset& ds);

// ---- checkpoints ----

struct CheckpointBundle {
    GeneratorWeights gen;
    CriticWeights d_global, d_local;
    DomainClassifierWeights classifier;
    EmbedderConfig embedder;
    long step = 0;
};

void save_checkpoint(const std::string& path, const TrainerState& st);
CheckpointBundle load_checkpoint(const std::string& path);

// Frontalization pass for single images: [3,S,S] -> [3,S,S].
FrontalizeFn make_frontalizer(const GeneratorWeights& gen);

}  // namespace frontal
