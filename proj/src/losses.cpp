#include "frontal/losses.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace frontal {

void LossWeights::validate() const {
    for (double v : {lambda_id, lambda_adv, lambda_contrastive, lambda_tv, lambda_gp,
                     lambda_local, lambda_grl, lambda_cls})
        if (v < 0 || !std::isfinite(v))
            throw std::invalid_argument("loss weights must be nonnegative and finite");
    if (!(margin > 0)) throw std::invalid_argument("contrastive margin must be > 0");
    if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
}

std::string LossRecord::to_json_line() const {
    nlohmann::json j{{"step", step},   {"pixel", pixel},
                     {"id", id},       {"adv_g", adv_g},
                     {"adv_l", adv_l}, {"tv", tv},
                     {"cls", cls},     {"contrastive", contrastive},
                     {"gp", gp},       {"total", total}};
    return j.dump();
}

LossRecord LossRecord::from_json_line(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    LossRecord r;
    r.step = j.at("step").get<long>();
    r.pixel = j.at("pixel").get<double>();
    r.id = j.at("id").get<double>();
    r.adv_g = j.at("adv_g").get<double>();
    r.adv_l = j.at("adv_l").get<double>();
    r.tv = j.at("tv").get<double>();
    r.cls = j.at("cls").get<double>();
    r.contrastive = j.at("contrastive").get<double>();
    r.gp = j.at("gp").get<double>();
    r.total = j.at("total").get<double>();
    return r;
}

Var l1_loss(const Var& a, const Var& b, const std::string& what) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(what + ": shape mismatch " + a.value().shape_str() +
                                    " vs " + b.value().shape_str());
    return mean(abs(sub(a, b)));
}

Var multiscale_pixel_loss(const ImageScales& pred, const ImageScales& target) {
    Var l = l1_loss(pred.s32, target.s32, "pixel loss scale 32");
    l = add(l, l1_loss(pred.s64, target.s64, "pixel loss scale 64"));
    l = add(l, l1_loss(pred.s128, target.s128, "pixel loss scale 128"));
    return l;
}

Var identity_loss(const Var& y_hat, const Var& y, const EmbedFn& embedder) {
    Var e1 = embedder(y_hat);
    Var e2 = embedder(y);
    if (e1.value().rank() != 2 || e1.shape() != e2.shape())
        throw std::invalid_argument("identity loss: embedder must map batches to [B,D], got " +
                                    e1.value().shape_str() + " vs " + e2.value().shape_str());
    Var dist = sqrt_safe(sum_axes(square(sub(e1, e2)), {1}, false));  // [B]
    return mean(dist);
}

Var total_variation_loss(const Var& img) {
    const Tensor& t = img.value();
    if (t.rank() != 4 || t.dim(2) < 2 || t.dim(3) < 2)
        throw std::invalid_argument("total variation: need [B,C,H,W] with H,W >= 2, got " +
                                    t.shape_str());
    int H = t.dim(2), W = t.dim(3);
    Var dh = sub(slice_axis(img, 3, 1, W - 1), slice_axis(img, 3, 0, W - 1));
    Var dv = sub(slice_axis(img, 2, 1, H - 1), slice_axis(img, 2, 0, H - 1));
    return add(mean(square(dh)), mean(square(dv)));
}

Var gradient_penalty(const CriticFn& critic, const Var& real, const Var& fake, Rng& rng) {
    if (real.shape() != fake.shape())
        throw std::invalid_argument("gradient penalty: real " + real.value().shape_str() +
                                    " vs fake " + fake.value().shape_str());
    int B = real.value().dim(0);
    Tensor u({B, 1, 1, 1});
    for (int i = 0; i < B; ++i) u[i] = rng.uniform();
    Var uv = Var::leaf(std::move(u), false);
    Var y_star = require_grad(add(mul(uv, real), mul(add_scalar(neg(uv), 1.0), fake)));
    Var score = critic(y_star);
    if (!score.requires_grad())
        throw std::invalid_argument("gradient penalty: critic is not differentiable");
    Var g = grad_of(sum(score), y_star);
    // plain sqrt: the penalty is differentiated a second time through this
    // norm when the critic trains, so its backward must stay on the graph
    Var norm = sqrt(sum_axes(square(g), {1, 2, 3}, false));  // [B]
    return mean(square(add_scalar(norm, -1.0)));
}

Var critic_loss(const CriticFn& critic, const Var& real, const Var& fake, double gp_weight,
                Rng& rng, Var* gp_out) {
    Var gp = gradient_penalty(critic, real, fake, rng);
    if (gp_out) *gp_out = gp;
    Var loss = add(neg(mean(critic(real))), mean(critic(fake)));
    return add(loss, scale(gp, gp_weight));
}

GeneratorAdvLoss generator_adversarial_loss(const CriticFn& d_global, const CriticFn& d_local,
                                            const Var& y_hat, const Tensor& masks,
                                            double lambda_local) {
    GeneratorAdvLoss out;
    out.global = neg(mean(d_global(y_hat)));
    if (d_local) {
        Var masked = mul(y_hat, Var::leaf(masks, false));
        out.local = neg(mean(d_local(masked)));
        out.total = add(out.global, scale(out.local, lambda_local));
    } else {
        out.local = Var::leaf(Tensor::scalar(0.0), false);
        out.total = out.global;
    }
    return out;
}

Var domain_classification_loss(const Var& p, const Tensor& k) {
    const Tensor& tp = p.value();
    if (tp.rank() != 1 || k.rank() != 1 || tp.dim(0) != k.dim(0))
        throw std::invalid_argument("domain classification loss: probabilities " +
                                    tp.shape_str() + " vs labels " + k.shape_str());
    for (long i = 0; i < tp.size(); ++i)
        if (!(tp[i] >= 0.0 && tp[i] <= 1.0))
            throw std::invalid_argument("domain classification loss: probability outside [0,1]");
    for (long i = 0; i < k.size(); ++i)
        if (k[i] != 0.0 && k[i] != 1.0)
            throw std::invalid_argument("domain classification loss: labels must be 0 or 1");
    Var pc = clamp(p, 1e-12, 1.0 - 1e-12);
    Var kv = Var::leaf(k, false);
    Var pos = mul(kv, log(pc));
    Var neg_side = mul(add_scalar(neg(kv), 1.0), log(add_scalar(neg(pc), 1.0)));
    return neg(mean(add(pos, neg_side)));
}

Var contrastive_loss(const Var& z1, const Var& z2, const Tensor& labels, double margin) {
    if (z1.shape() != z2.shape())
        throw std::invalid_argument("contrastive loss: latent shapes " +
                                    z1.value().shape_str() + " vs " + z2.value().shape_str());
    if (!(margin > 0)) throw std::invalid_argument("contrastive loss: margin must be > 0");
    int B = z1.value().dim(0);
    if (labels.rank() != 1 || labels.dim(0) != B)
        throw std::invalid_argument("contrastive loss: need one label per pair");
    long dim = z1.value().size() / B;
    Var a = reshape(z1, {B, static_cast<int>(dim)});
    Var b = reshape(z2, {B, static_cast<int>(dim)});
    Var d = sqrt_safe(mean_axes(square(sub(a, b)), {1}, false));  // RMS distance, [B]
    Var lv = Var::leaf(labels, false);
    Var pull = mul(lv, d);
    Var push = mul(add_scalar(neg(lv), 1.0), relu(add_scalar(neg(d), margin)));
    return mean(add(pull, push));
}

Var frontalization_total(const Var& pixel, const Var& id, const Var& adv, const Var& tv,
                         const LossWeights& w) {
    Var l = add(pixel, scale(id, w.lambda_id));
    l = add(l, scale(adv, w.lambda_adv));
    return add(l, scale(tv, w.lambda_tv));
}

Var total_objective(const Var& front, const Var& contras, const Var& cls,
                    const LossWeights& w) {
    return add(front, add(scale(contras, w.lambda_contrastive), scale(cls, w.lambda_cls)));
}

}  // namespace frontal
