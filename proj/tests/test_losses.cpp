#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "frontal/losses.hpp"
#include "frontal/nets.hpp"
#include "frontal/rng.hpp"
#include "gradcheck.hpp"

using namespace frontal;
using frontal::testing::gradcheck;
using frontal::testing::random_tensor;
using frontal::testing::random_uniform_tensor;

namespace {

// Linear critic D(y) = <w, y> + c over flattened images.
CriticFn linear_critic(const Tensor& w, double c = 0.0) {
    return [w, c](const Var& img) {
        int B = img.value().dim(0);
        long dim = img.value().size() / B;
        Var flat = reshape(img, {B, static_cast<int>(dim)});
        Var wv = Var::leaf(w.reshaped({static_cast<int>(dim), 1}), false);
        return add_scalar(reshape(matmul(flat, wv), {B}), c);
    };
}

// Small smooth critic so second-order terms are non-trivial in grad checks.
CriticFn smooth_critic(uint64_t seed, int ch, int size) {
    Rng rng(seed);
    Tensor w = frontal::testing::random_tensor({2, ch, 3, 3}, rng, 0.4);
    Tensor b = frontal::testing::random_tensor({2}, rng, 0.1);
    long flat = 2L * (size / 2) * (size / 2);
    Tensor hw = frontal::testing::random_tensor({1, static_cast<int>(flat)}, rng, 0.4);
    return [=](const Var& img) {
        Var h = frontal::tanh(conv2d(img, Var::leaf(w, true), Var::leaf(b, true), 2, 1));
        int B = img.value().dim(0);
        Var f = reshape(h, {B, static_cast<int>(flat)});
        return reshape(matmul(f, transpose(Var::leaf(hw, true))), {B});
    };
}

}  // namespace

TEST_CASE("multiscale pixel loss: worked values and oracle") {
    Rng rng(40);
    auto mk = [&](double off) {
        ImageScales s;
        Tensor a = random_uniform_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
        Tensor b = random_uniform_tensor({2, 3, 4, 4}, rng, 0.0, 1.0);
        Tensor c = random_uniform_tensor({2, 3, 2, 2}, rng, 0.0, 1.0);
        s.s32 = Var::leaf(c);
        s.s64 = Var::leaf(b);
        s.s128 = Var::leaf(a);
        if (off != 0.0) {
            for (auto* t : {&a, &b, &c})
                for (long i = 0; i < t->size(); ++i) (*t)[i] += off;
            s.s32 = Var::leaf(c);
            s.s64 = Var::leaf(b);
            s.s128 = Var::leaf(a);
        }
        return s;
    };
    Rng rng2(40);
    (void)rng2;
    ImageScales y;
    Tensor t128 = random_uniform_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    Tensor t64 = random_uniform_tensor({2, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor t32 = random_uniform_tensor({2, 3, 2, 2}, rng, 0.0, 1.0);
    y.s32 = Var::leaf(t32);
    y.s64 = Var::leaf(t64);
    y.s128 = Var::leaf(t128);

    CHECK(multiscale_pixel_loss(y, y).item() == 0.0);

    // y_hat = y + 0.1 at every scale -> 3 * 0.1
    ImageScales yh;
    auto shift = [](const Tensor& t) {
        Tensor s = t;
        for (long i = 0; i < s.size(); ++i) s[i] += 0.1;
        return s;
    };
    yh.s32 = Var::leaf(shift(t32));
    yh.s64 = Var::leaf(shift(t64));
    yh.s128 = Var::leaf(shift(t128));
    CHECK(multiscale_pixel_loss(yh, y).item() == doctest::Approx(0.3).epsilon(1e-12));

    // symmetry and naive double-loop oracle
    ImageScales r = mk(0.0);
    double lhs = multiscale_pixel_loss(r, y).item();
    CHECK(multiscale_pixel_loss(y, r).item() == lhs);
    double oracle = 0;
    const Tensor* preds[] = {&r.s32.value(), &r.s64.value(), &r.s128.value()};
    const Tensor* tgts[] = {&t32, &t64, &t128};
    for (int s = 0; s < 3; ++s) {
        double acc = 0;
        for (long i = 0; i < preds[s]->size(); ++i)
            acc += std::fabs((*preds[s])[i] - (*tgts[s])[i]);
        oracle += acc / static_cast<double>(preds[s]->size());
    }
    CHECK(lhs == doctest::Approx(oracle).epsilon(1e-6));

    ImageScales bad = y;
    bad.s64 = Var::leaf(Tensor::zeros({2, 3, 3, 3}));
    try {
        multiscale_pixel_loss(bad, y);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("64") != std::string::npos);
    }
}

TEST_CASE("identity loss: worked values and norm oracle") {
    // global mean-pixel embedder, D = 1
    EmbedFn mean_embed = [](const Var& img) {
        int B = img.value().dim(0);
        return reshape(mean_axes(img, {1, 2, 3}, false), {B, 1});
    };
    Tensor a = Tensor::full({2, 3, 4, 4}, 0.6);
    Tensor b = Tensor::full({2, 3, 4, 4}, 0.2);
    CHECK(identity_loss(Var::leaf(a), Var::leaf(a), mean_embed).item() == 0.0);
    CHECK(identity_loss(Var::leaf(a), Var::leaf(b), mean_embed).item() ==
          doctest::Approx(0.4).epsilon(1e-12));

    // fixed-seed linear embedder vs an explicit norm computation
    Rng rng(41);
    Tensor proj = random_tensor({5, 48}, rng, 0.3);
    EmbedFn lin_embed = [proj](const Var& img) {
        int B = img.value().dim(0);
        Var flat = reshape(img, {B, 48});
        return matmul(flat, transpose(Var::leaf(proj, false)));
    };
    Tensor x = random_uniform_tensor({3, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor yv = random_uniform_tensor({3, 3, 4, 4}, rng, 0.0, 1.0);
    double got = identity_loss(Var::leaf(x), Var::leaf(yv), lin_embed).item();
    double oracle = 0;
    for (int n = 0; n < 3; ++n) {
        double ss = 0;
        for (int d = 0; d < 5; ++d) {
            double e1 = 0, e2 = 0;
            for (int j = 0; j < 48; ++j) {
                e1 += proj[d * 48 + j] * x[n * 48 + j];
                e2 += proj[d * 48 + j] * yv[n * 48 + j];
            }
            ss += (e1 - e2) * (e1 - e2);
        }
        oracle += std::sqrt(ss);
    }
    oracle /= 3.0;
    CHECK(got == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("total variation: worked 2x2 case and mirror symmetry") {
    CHECK(total_variation_loss(Var::leaf(Tensor::full({1, 3, 4, 4}, 0.37))).item() == 0.0);

    // ((0,1),(0,1)): horizontal diffs 1,1; vertical 0,0 -> 1.0
    Tensor t = Tensor::from({1, 1, 2, 2}, {0, 1, 0, 1});
    CHECK(total_variation_loss(Var::leaf(t)).item() == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(42);
    Tensor img = random_uniform_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
    Tensor mir = img;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x)
                mir[(static_cast<long>(c) * 6 + y) * 6 + x] =
                    img[(static_cast<long>(c) * 6 + y) * 6 + (5 - x)];
    CHECK(total_variation_loss(Var::leaf(img)).item() ==
          doctest::Approx(total_variation_loss(Var::leaf(mir)).item()).epsilon(1e-12));
}

TEST_CASE("gradient penalty closed forms") {
    Rng rng(43);
    // unit-norm linear critic: gradient is w everywhere, penalty 0
    Tensor w = Tensor::zeros({48});
    w[0] = 0.6;
    w[1] = 0.8;  // ||w|| = 1 exactly
    Tensor real = random_uniform_tensor({4, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor fake = random_uniform_tensor({4, 3, 4, 4}, rng, 0.0, 1.0);
    Rng gp_rng(7);
    double p = gradient_penalty(linear_critic(w), Var::leaf(real), Var::leaf(fake), gp_rng)
                   .item();
    CHECK(p < 1e-10);

    // doubled critic: gradient norm 2 everywhere, penalty (2-1)^2 = 1
    Tensor w2 = w;
    for (long i = 0; i < w2.size(); ++i) w2[i] *= 2.0;
    Rng gp_rng2(7);
    double p2 = gradient_penalty(linear_critic(w2), Var::leaf(real), Var::leaf(fake), gp_rng2)
                    .item();
    CHECK(p2 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gradient penalty: autodiff norm matches finite differences on a conv critic") {
    Rng rng(44);
    CriticFn critic = smooth_critic(45, 3, 4);
    Tensor y = random_uniform_tensor({1, 3, 4, 4}, rng, 0.0, 1.0);
    Var yl = Var::leaf(y, true);
    Var g = grad_of(sum(critic(yl)), yl);
    double h = 1e-4;
    for (long i = 0; i < y.size(); ++i) {
        Tensor yp = y, ym = y;
        yp[i] += h;
        ym[i] -= h;
        double fp = sum(critic(Var::leaf(yp))).item();
        double fm = sum(critic(Var::leaf(ym))).item();
        double fd = (fp - fm) / (2 * h);
        CHECK(frontal::testing::rel_err(g.value()[i], fd) < 1e-3);
    }
}

TEST_CASE("critic loss: forced arithmetic and cancellation") {
    Rng rng(46);
    Tensor real = random_uniform_tensor({4, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor fake = random_uniform_tensor({4, 3, 4, 4}, rng, 0.0, 1.0);

    // constant critic: scores 0, gradient norm 0 -> loss = 10 * (0-1)^2 = 10
    Tensor zero_w = Tensor::zeros({48});
    Rng r1(5);
    double loss = critic_loss(linear_critic(zero_w), Var::leaf(real), Var::leaf(fake), 10.0, r1)
                      .item();
    CHECK(loss == doctest::Approx(10.0).epsilon(1e-12));

    // real = fake with a unit-norm linear critic: exact cancellation
    Tensor w = Tensor::zeros({48});
    w[3] = 1.0;
    Rng r2(5);
    double loss2 =
        critic_loss(linear_critic(w), Var::leaf(real), Var::leaf(real), 10.0, r2).item();
    CHECK(loss2 == doctest::Approx(0.0).epsilon(1e-12));

    // term-by-term oracle on a toy critic
    Tensor wr = random_tensor({48}, rng, 0.3);
    Rng r3(9);
    Var gp_var;
    double loss3 = critic_loss(linear_critic(wr, 0.2), Var::leaf(real), Var::leaf(fake), 10.0,
                               r3, &gp_var)
                       .item();
    auto mean_score = [&](const Tensor& imgs) {
        double acc = 0;
        for (int b = 0; b < 4; ++b) {
            double s = 0.2;
            for (int j = 0; j < 48; ++j) s += wr[j] * imgs[b * 48 + j];
            acc += s;
        }
        return acc / 4.0;
    };
    double wnorm = 0;
    for (long i = 0; i < wr.size(); ++i) wnorm += wr[i] * wr[i];
    wnorm = std::sqrt(wnorm);
    double gp_oracle = (wnorm - 1) * (wnorm - 1);
    double oracle = -mean_score(real) + mean_score(fake) + 10.0 * gp_oracle;
    CHECK(loss3 == doctest::Approx(oracle).epsilon(1e-6));
    CHECK(gp_var.item() == doctest::Approx(gp_oracle).epsilon(1e-9));
}

TEST_CASE("generator adversarial loss") {
    Rng rng(47);
    Tensor yhat = random_uniform_tensor({4, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor w = random_tensor({48}, rng, 0.3);
    Tensor w2 = random_tensor({48}, rng, 0.3);

    // lambda_local = 0 reduces exactly to -E[D_g]
    auto parts0 = generator_adversarial_loss(linear_critic(w), linear_critic(w2),
                                             Var::leaf(yhat), Tensor::full({4, 1, 4, 4}, 1.0),
                                             0.0);
    CHECK(parts0.total.item() == parts0.global.item());

    // all-zero mask with D_l(0) = c: local term is exactly -c
    auto partsc = generator_adversarial_loss(linear_critic(w), linear_critic(w2, 0.37),
                                             Var::leaf(yhat), Tensor::zeros({4, 1, 4, 4}), 0.1);
    CHECK(partsc.local.item() == doctest::Approx(-0.37).epsilon(1e-12));
    CHECK(partsc.total.item() ==
          doctest::Approx(partsc.global.item() + 0.1 * partsc.local.item()).epsilon(1e-12));

    // direct oracle
    Tensor mask = Tensor::zeros({4, 1, 4, 4});
    for (long i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    auto parts = generator_adversarial_loss(linear_critic(w), linear_critic(w2),
                                            Var::leaf(yhat), mask, 0.1);
    double og = 0, ol = 0;
    for (int b = 0; b < 4; ++b) {
        double sg = 0, sl = 0;
        for (int c = 0; c < 3; ++c)
            for (int p2 = 0; p2 < 16; ++p2) {
                long idx = (static_cast<long>(b) * 3 + c) * 16 + p2;
                sg += w[c * 16 + p2] * yhat[idx];
                sl += w2[c * 16 + p2] * yhat[idx] * mask[b * 16 + p2];
            }
        og += sg;
        ol += sl;
    }
    og = -og / 4;
    ol = -ol / 4;
    CHECK(parts.total.item() == doctest::Approx(og + 0.1 * ol).epsilon(1e-6));
}

TEST_CASE("domain classification loss") {
    // p = k exactly (after the log guard) -> about 0
    Var p = Var::leaf(Tensor::from({4}, {1, 0, 1, 0}));
    Tensor k = Tensor::from({4}, {1, 0, 1, 0});
    CHECK(domain_classification_loss(p, k).item() < 1e-9);

    // maximum-entropy classifier -> ln 2
    Var half = Var::leaf(Tensor::full({8}, 0.5));
    Tensor k2 = Tensor::from({8}, {1, 0, 0, 1, 1, 0, 1, 0});
    CHECK(domain_classification_loss(half, k2).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // random batch against a scalar loop oracle
    Rng rng(48);
    Tensor pr({16}), kr({16});
    for (int i = 0; i < 16; ++i) {
        pr[i] = rng.uniform(0.02, 0.98);
        kr[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    double got = domain_classification_loss(Var::leaf(pr), kr).item();
    double oracle = 0;
    for (int i = 0; i < 16; ++i)
        oracle += -kr[i] * std::log(pr[i]) - (1 - kr[i]) * std::log(1 - pr[i]);
    oracle /= 16;
    CHECK(got == doctest::Approx(oracle).epsilon(1e-9));

    CHECK_THROWS_AS(domain_classification_loss(Var::leaf(Tensor::from({1}, {1.2})),
                                               Tensor::from({1}, {1.0})),
                    std::invalid_argument);
}

TEST_CASE("contrastive loss: margin geometry") {
    // coincident positives
    Tensor z = Tensor::full({2, 8}, 0.3);
    Tensor l1 = Tensor::full({2}, 1.0);
    CHECK(contrastive_loss(Var::leaf(z), Var::leaf(z), l1, 1.2).item() == 0.0);

    // negatives beyond the margin: d = 2.0 > m
    Tensor a = Tensor::zeros({1, 4});
    Tensor b = Tensor::full({1, 4}, 2.0);
    Tensor l0 = Tensor::zeros({1});
    CHECK(contrastive_loss(Var::leaf(a), Var::leaf(b), l0, 1.2).item() == 0.0);

    // direct substitution: l = 0, d = 0.5, m = 1.2 -> 0.7
    Tensor c = Tensor::full({1, 4}, 0.5);
    CHECK(contrastive_loss(Var::leaf(a), Var::leaf(c), l0, 1.2).item() ==
          doctest::Approx(0.7).epsilon(1e-12));

    // slope -1 below the margin
    Tensor c2 = Tensor::full({1, 4}, 0.6);
    double v1 = contrastive_loss(Var::leaf(a), Var::leaf(c), l0, 1.2).item();
    double v2 = contrastive_loss(Var::leaf(a), Var::leaf(c2), l0, 1.2).item();
    CHECK(v1 - v2 == doctest::Approx(0.1).epsilon(1e-9));

    CHECK_THROWS_AS(contrastive_loss(Var::leaf(a), Var::leaf(Tensor::zeros({1, 5})), l0, 1.2),
                    std::invalid_argument);
}

TEST_CASE("weighted totals at paper defaults") {
    LossWeights w;
    w.validate();
    Var zero = Var::leaf(Tensor::scalar(0.0));
    Var one = Var::leaf(Tensor::scalar(1.0));
    CHECK(frontalization_total(zero, zero, zero, zero, w).item() == 0.0);
    CHECK(frontalization_total(one, one, one, one, w).item() ==
          doctest::Approx(12.0001).epsilon(1e-12));
    CHECK(total_objective(one, one, one, w).item() == doctest::Approx(2.01).epsilon(1e-12));

    LossWeights w0 = w;
    w0.lambda_contrastive = 0;
    w0.lambda_cls = 0;
    Rng rng(49);
    double f = rng.uniform();
    Var fv = Var::leaf(Tensor::scalar(f));
    CHECK(total_objective(fv, one, one, w0).item() == doctest::Approx(f).epsilon(1e-12));

    // weighted-sum oracle on random terms
    double tp = rng.uniform(), ti = rng.uniform(), ta = rng.uniform(-1, 1), tt = rng.uniform();
    double front = frontalization_total(Var::leaf(Tensor::scalar(tp)),
                                        Var::leaf(Tensor::scalar(ti)),
                                        Var::leaf(Tensor::scalar(ta)),
                                        Var::leaf(Tensor::scalar(tt)), w)
                       .item();
    CHECK(front == doctest::Approx(tp + 10 * ti + 1 * ta + 1e-4 * tt).epsilon(1e-12));
    double tc = rng.uniform(), tk = rng.uniform();
    CHECK(total_objective(Var::leaf(Tensor::scalar(front)), Var::leaf(Tensor::scalar(tc)),
                          Var::leaf(Tensor::scalar(tk)), w)
              .item() == doctest::Approx(front + 0.01 * tc + 1.0 * tk).epsilon(1e-12));

    LossWeights bad;
    bad.lambda_id = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("nonnegativity of the bounded-below terms") {
    Rng rng(50);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({2, 3, 4, 4}, rng);
        Tensor b = random_tensor({2, 3, 4, 4}, rng);
        CHECK(l1_loss(Var::leaf(a), Var::leaf(b)).item() >= 0.0);
        CHECK(total_variation_loss(Var::leaf(a)).item() >= 0.0);
        Tensor z1 = random_tensor({2, 6}, rng), z2 = random_tensor({2, 6}, rng);
        Tensor lbl({2});
        lbl[0] = trial % 2;
        lbl[1] = 1 - trial % 2;
        CHECK(contrastive_loss(Var::leaf(z1), Var::leaf(z2), lbl, 1.2).item() >= 0.0);
        Tensor pr({4}), kr({4});
        for (int i = 0; i < 4; ++i) {
            pr[i] = rng.uniform(0.01, 0.99);
            kr[i] = rng.uniform() < 0.5;
        }
        CHECK(domain_classification_loss(Var::leaf(pr), kr).item() >= 0.0);
    }
}

TEST_CASE("loss gradients match central finite differences") {
    Rng rng(51);

    auto r = gradcheck(
        [](const std::vector<Var>& v) {
            ImageScales p{v[0], v[1], v[2]}, t{v[3], v[4], v[5]};
            return multiscale_pixel_loss(p, t);
        },
        {random_uniform_tensor({1, 2, 2, 2}, rng, 0.0, 1.0),
         random_uniform_tensor({1, 2, 4, 4}, rng, 0.0, 1.0),
         random_uniform_tensor({1, 2, 8, 8}, rng, 0.0, 1.0),
         random_uniform_tensor({1, 2, 2, 2}, rng, 2.0, 3.0),
         random_uniform_tensor({1, 2, 4, 4}, rng, 2.0, 3.0),
         random_uniform_tensor({1, 2, 8, 8}, rng, 2.0, 3.0)});
    CHECK(r.max_rel < 1e-3);

    Tensor proj = random_tensor({4, 27}, rng, 0.4);
    EmbedFn embed = [proj](const Var& img) {
        int B = img.value().dim(0);
        Var flat = reshape(img, {B, 27});
        return matmul(flat, transpose(Var::leaf(proj, false)));
    };
    r = gradcheck(
        [&](const std::vector<Var>& v) { return identity_loss(v[0], v[1], embed); },
        {random_uniform_tensor({2, 3, 3, 3}, rng, 0.0, 1.0),
         random_uniform_tensor({2, 3, 3, 3}, rng, 0.0, 1.0)});
    CHECK(r.max_rel < 1e-3);

    r = gradcheck([](const std::vector<Var>& v) { return total_variation_loss(v[0]); },
                  {random_tensor({1, 2, 5, 5}, rng)});
    CHECK(r.max_rel < 1e-3);

    // gradient penalty w.r.t. real and fake, smooth critic, frozen noise
    CriticFn sc = smooth_critic(52, 2, 4);
    r = gradcheck(
        [&](const std::vector<Var>& v) {
            Rng gp_rng(123);
            return gradient_penalty(sc, v[0], v[1], gp_rng);
        },
        {random_uniform_tensor({2, 2, 4, 4}, rng, 0.0, 1.0),
         random_uniform_tensor({2, 2, 4, 4}, rng, 0.0, 1.0)});
    CHECK(r.max_rel < 1e-3);

    r = gradcheck(
        [&](const std::vector<Var>& v) {
            Rng cl_rng(321);
            return critic_loss(sc, v[0], v[1], 10.0, cl_rng);
        },
        {random_uniform_tensor({2, 2, 4, 4}, rng, 0.0, 1.0),
         random_uniform_tensor({2, 2, 4, 4}, rng, 0.0, 1.0)});
    CHECK(r.max_rel < 1e-3);

    CriticFn sg = smooth_critic(53, 3, 4);
    CriticFn sl = smooth_critic(54, 3, 4);
    Tensor mask = Tensor::zeros({2, 1, 4, 4});
    for (long i = 0; i < mask.size(); ++i) mask[i] = (i % 3 == 0) ? 1.0 : 0.0;
    r = gradcheck(
        [&](const std::vector<Var>& v) {
            return generator_adversarial_loss(sg, sl, v[0], mask, 0.1).total;
        },
        {random_uniform_tensor({2, 3, 4, 4}, rng, 0.0, 1.0)});
    CHECK(r.max_rel < 1e-3);

    Tensor kk({6});
    for (int i = 0; i < 6; ++i) kk[i] = i % 2;
    r = gradcheck(
        [&](const std::vector<Var>& v) { return domain_classification_loss(v[0], kk); },
        {random_uniform_tensor({6}, rng, 0.15, 0.85)});
    CHECK(r.max_rel < 1e-3);

    Tensor lbl({3});
    lbl[0] = 1;
    lbl[1] = 0;
    lbl[2] = 0;
    r = gradcheck(
        [&](const std::vector<Var>& v) { return contrastive_loss(v[0], v[1], lbl, 1.2); },
        {random_tensor({3, 6}, rng), random_tensor({3, 6}, rng)});
    CHECK(r.max_rel < 1e-3);
}

TEST_CASE("critic descent step raises the score gap for a unit linear critic") {
    // With ||w|| = 1 the penalty term vanishes and one explicit gradient-descent
    // step moves the gap E[D(real)] - E[D(fake)] up by eta * ||E[real-fake]||^2.
    Rng rng(55);
    Tensor real = random_uniform_tensor({4, 3, 4, 4}, rng, 0.5, 1.0);
    Tensor fake = random_uniform_tensor({4, 3, 4, 4}, rng, 0.0, 0.5);
    Tensor w = Tensor::zeros({49});
    w[5] = 1.0;

    Var wv = Var::leaf(w.reshaped({49}), true);
    auto critic = [&](const Var& img) {
        int B = img.value().dim(0);
        Var flat = reshape(img, {B, 48});
        Var wpart = reshape(slice_axis(wv, 0, 0, 48), {48, 1});
        Var bias = slice_axis(wv, 0, 48, 1);
        return add(reshape(matmul(flat, wpart), {B}), broadcast_to(bias, {B}));
    };
    Rng gp_rng(77);
    Var loss = critic_loss(critic, Var::leaf(real), Var::leaf(fake), 10.0, gp_rng);
    GradMap gm = backward(loss);
    Tensor g = gm.get(wv).value();

    auto gap = [&](const Tensor& wt) {
        double acc = 0;
        for (int b = 0; b < 4; ++b)
            for (int j = 0; j < 48; ++j) acc += wt[j] * (real[b * 48 + j] - fake[b * 48 + j]);
        return acc / 4.0;
    };
    double eta = 0.05;
    Tensor w_new = w;
    for (long i = 0; i < w.size(); ++i) w_new[i] -= eta * g[i];
    double before = gap(w);
    double after = gap(w_new);
    CHECK(after >= before);

    double delta = 0;  // closed form: eta * ||E[real - fake]||^2
    for (int j = 0; j < 48; ++j) {
        double m = 0;
        for (int b = 0; b < 4; ++b) m += real[b * 48 + j] - fake[b * 48 + j];
        m /= 4.0;
        delta += m * m;
    }
    CHECK(after - before == doctest::Approx(eta * delta).epsilon(1e-9));
}
