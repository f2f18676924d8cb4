#pragma once

#include <functional>
#include <string>

#include "frontal/autodiff.hpp"
#include "frontal/rng.hpp"

namespace frontal {

struct LossWeights {
    double lambda_id = 10.0;
    double lambda_adv = 1.0;
    double lambda_contrastive = 0.01;
    double lambda_tv = 1e-4;
    double lambda_gp = 10.0;
    double lambda_local = 0.1;
    double lambda_grl = 0.01;
    double lambda_cls = 1.0;
    double margin = 1.2;
    double epsilon = 1e-8;

    void validate() const;
};

struct LossRecord {
    long step = 0;
    double pixel = 0, id = 0, adv_g = 0, adv_l = 0, tv = 0, cls = 0, contrastive = 0,
           gp = 0, total = 0;

    std::string to_json_line() const;
    static LossRecord from_json_line(const std::string& line);
};

using EmbedFn = std::function<Var(const Var&)>;   // [B,3,H,W] -> [B,D]
using CriticFn = std::function<Var(const Var&)>;  // [B,C,H,W] -> [B]

struct ImageScales {
    Var s32, s64, s128;
};

Var l1_loss(const Var& a, const Var& b, const std::string& what = "l1");

// Sum over the three scales of the per-element mean absolute difference.
Var multiscale_pixel_loss(const ImageScales& pred, const ImageScales& target);

// Batch mean of || F(y_hat) - F(y) ||_2 in embedding space.
Var identity_loss(const Var& y_hat, const Var& y, const EmbedFn& embedder);

// Mean squared horizontal differences plus mean squared vertical differences.
Var total_variation_loss(const Var& img);

// E[(||grad_{y*} D(y*)||_2 - 1)^2] with y* drawn uniformly on the segment
// between real and fake, one draw per batch element.
Var gradient_penalty(const CriticFn& critic, const Var& real, const Var& fake, Rng& rng);

// Descent form of the critic objective: -E[D(real)] + E[D(fake)] + gp_weight*GP.
// `fake` must already be detached from the generator.
Var critic_loss(const CriticFn& critic, const Var& real, const Var& fake, double gp_weight,
                Rng& rng, Var* gp_out = nullptr);

struct GeneratorAdvLoss {
    Var global;  // -E[D_g(y_hat)]
    Var local;   // -E[D_l(M * y_hat)], zero when no local critic is given
    Var total;   // global + lambda_local * local
};

GeneratorAdvLoss generator_adversarial_loss(const CriticFn& d_global, const CriticFn& d_local,
                                            const Var& y_hat, const Tensor& masks,
                                            double lambda_local);

// Mean binary cross-entropy with a 1e-12 log guard; p in (0,1), k in {0,1}.
Var domain_classification_loss(const Var& p, const Tensor& k);

// RMS latent distance d = ||z1-z2||_2 / sqrt(dim), then
// l*d + (1-l)*max(0, margin - d), batch averaged.
Var contrastive_loss(const Var& z1, const Var& z2, const Tensor& labels, double margin);

// L_front = L_pixel + lambda_id*L_id + lambda_adv*L_adv + lambda_tv*L_tv
Var frontalization_total(const Var& pixel, const Var& id, const Var& adv, const Var& tv,
                         const LossWeights& w);

// L = L_front + lambda_contrastive*L_contras + lambda_cls*L_cls
Var total_objective(const Var& front, const Var& contras, const Var& cls,
                    const LossWeights& w);

}  // namespace frontal
