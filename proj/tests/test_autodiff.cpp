#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "frontal/autodiff.hpp"
#include "frontal/rng.hpp"
#include "gradcheck.hpp"

using namespace frontal;
using frontal::testing::gradcheck;
using frontal::testing::random_tensor;
using frontal::testing::random_uniform_tensor;

TEST_CASE("elementwise broadcasting forward") {
    Var a = Var::leaf(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
    Var b = Var::leaf(Tensor::from({1, 3}, {10, 20, 30}));
    Var c = add(a, b);
    CHECK(c.value().shape() == std::vector<int>{2, 3});
    CHECK(c.value()[0] == 11);
    CHECK(c.value()[5] == 36);

    Var m = mul(a, Var::leaf(Tensor::from({2, 1}, {2, -1})));
    CHECK(m.value()[2] == 6);
    CHECK(m.value()[3] == -4);

    CHECK_THROWS_AS(add(a, Var::leaf(Tensor::from({2, 2}, {1, 2, 3, 4}))),
                    std::invalid_argument);
}

TEST_CASE("binary and unary gradients") {
    Rng rng(1);
    Tensor a = random_tensor({2, 3, 2, 2}, rng);
    Tensor b = random_tensor({2, 1, 2, 2}, rng);
    auto r = gradcheck(
        [](const std::vector<Var>& v) {
            return sum(mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.7))));
        },
        {a, b});
    CHECK(r.max_rel < 1e-6);

    Tensor pos = random_uniform_tensor({3, 4}, rng, 0.5, 2.0);
    r = gradcheck([](const std::vector<Var>& v) { return sum(log(sqrt(v[0]))); }, {pos});
    CHECK(r.max_rel < 1e-6);

    r = gradcheck([](const std::vector<Var>& v) { return sum(div(v[0], v[1])); },
                  {random_tensor({2, 3}, rng), random_uniform_tensor({2, 3}, rng, 0.5, 1.5)});
    CHECK(r.max_rel < 1e-6);

    Tensor x = random_uniform_tensor({4, 5}, rng, -2.0, 2.0);
    for (long i = 0; i < x.size(); ++i)
        if (std::fabs(x[i]) < 0.05) x[i] = 0.2;  // keep away from kinks
    r = gradcheck(
        [](const std::vector<Var>& v) {
            return sum(add(leaky_relu(v[0], 0.2), mul(sigmoid(v[0]), tanh(v[0]))));
        },
        {x});
    CHECK(r.max_rel < 1e-5);

    r = gradcheck([](const std::vector<Var>& v) { return sum(abs(v[0])); }, {x});
    CHECK(r.max_rel < 1e-6);

    r = gradcheck([](const std::vector<Var>& v) { return mean(exp(v[0])); }, {x});
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("reductions reshape slice concat") {
    Rng rng(2);
    Tensor a = random_tensor({2, 4, 3, 3}, rng);
    auto r = gradcheck(
        [](const std::vector<Var>& v) {
            Var s = sum_axes(v[0], {1}, true);     // [2,1,3,3]
            Var m = mean_axes(v[0], {0, 2}, false);
            return add(sum(s), sum(m));
        },
        {a});
    CHECK(r.max_rel < 1e-6);

    r = gradcheck(
        [](const std::vector<Var>& v) {
            Var c = concat_ch(v[0], v[0]);
            Var s = slice_axis(c, 1, 3, 2);
            return sum(mul(s, s));
        },
        {a});
    CHECK(r.max_rel < 1e-6);

    r = gradcheck(
        [](const std::vector<Var>& v) {
            Var q = reshape(v[0], {4, 18});
            return sum(mul(q, q));
        },
        {a});
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("matmul bmm gradients") {
    Rng rng(3);
    auto r = gradcheck(
        [](const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); },
        {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    CHECK(r.max_rel < 1e-6);

    r = gradcheck(
        [](const std::vector<Var>& v) {
            return sum(mul(bmm(v[0], v[1]), bmm(v[0], v[1])));
        },
        {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 3}, rng)});
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("softmax rows sum to one and differentiate") {
    Rng rng(4);
    Tensor x = random_tensor({2, 5, 7}, rng, 2.0);
    Var sm = softmax_lastdim(Var::leaf(x));
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 5; ++i) {
            double s = 0;
            for (int j = 0; j < 7; ++j) s += sm.value()[(b * 5 + i) * 7 + j];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    auto r = gradcheck(
        [](const std::vector<Var>& v) {
            Var p = softmax_lastdim(v[0]);
            return sum(mul(p, p));
        },
        {random_tensor({2, 3, 4}, rng)});
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("conv2d gradients across geometries") {
    Rng rng(5);
    struct Geom {
        int C, H, W, K, k, s, p;
    };
    for (Geom g : {Geom{3, 6, 6, 4, 3, 1, 1}, Geom{2, 8, 8, 3, 3, 2, 1},
                   Geom{4, 5, 7, 2, 1, 1, 0}, Geom{2, 7, 7, 3, 4, 2, 1}}) {
        Tensor x = random_tensor({2, g.C, g.H, g.W}, rng);
        Tensor w = random_tensor({g.K, g.C, g.k, g.k}, rng, 0.5);
        Tensor b = random_tensor({g.K}, rng, 0.2);
        auto r = gradcheck(
            [&](const std::vector<Var>& v) {
                Var y = conv2d(v[0], v[1], v[2], g.s, g.p);
                return sum(mul(y, y));
            },
            {x, w, b});
        INFO("conv geom k=" << g.k << " s=" << g.s << " p=" << g.p);
        CHECK(r.max_rel < 1e-5);
    }
}

TEST_CASE("conv_transpose2d gradients") {
    Rng rng(6);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor w = random_tensor({3, 5, 4, 4}, rng, 0.5);
    Tensor b = random_tensor({5}, rng, 0.2);
    auto r = gradcheck(
        [](const std::vector<Var>& v) {
            Var y = conv_transpose2d(v[0], v[1], v[2], 2, 1, 0);
            return sum(mul(y, y));
        },
        {x, w, b});
    CHECK(r.max_rel < 1e-5);

    // stride-2 k3 with output padding 1, the encoder-inverse geometry
    Tensor w2 = random_tensor({3, 2, 3, 3}, rng, 0.5);
    Tensor b2 = random_tensor({2}, rng, 0.2);
    r = gradcheck(
        [](const std::vector<Var>& v) {
            Var y = conv_transpose2d(v[0], v[1], v[2], 2, 1, 1);
            return sum(mul(y, y));
        },
        {x, w2, b2});
    CHECK(r.max_rel < 1e-5);
}

TEST_CASE("conv shapes compose with stride two") {
    Rng rng(7);
    Tensor x = random_tensor({1, 3, 128, 128}, rng);
    Tensor w = random_tensor({8, 3, 3, 3}, rng, 0.1);
    Tensor b({8});
    Var y = conv2d(Var::leaf(x), Var::leaf(w), Var::leaf(b), 2, 1);
    CHECK(y.value().shape() == std::vector<int>{1, 8, 64, 64});

    Tensor tw = random_tensor({8, 3, 4, 4}, rng, 0.1);
    Tensor tb({3});
    Var z = conv_transpose2d(y, Var::leaf(tw), Var::leaf(tb), 2, 1, 0);
    CHECK(z.value().shape() == std::vector<int>{1, 3, 128, 128});
}

TEST_CASE("avg_pool2d gradient and values") {
    Var x = Var::leaf(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
    CHECK(avg_pool2d(x, 2).value()[0] == doctest::Approx(2.5));

    Rng rng(8);
    auto r = gradcheck(
        [](const std::vector<Var>& v) { return sum(mul(avg_pool2d(v[0], 2), avg_pool2d(v[0], 2))); },
        {random_tensor({2, 3, 4, 4}, rng)});
    CHECK(r.max_rel < 1e-6);
}

TEST_CASE("gradient reversal flips and scales gradients") {
    Tensor x = Tensor::from({1}, {2.0});
    Var v = Var::leaf(x, true);
    Var y = scale(grl(v, 0.01), 3.0);
    CHECK(y.value()[0] == doctest::Approx(6.0));  // identity forward
    GradMap gm = backward(sum(y));
    CHECK(gm.get(v).value()[0] == doctest::Approx(-0.03));
}

TEST_CASE("double backprop through elementwise chain") {
    // y = sum(x^3), dy/dx = 3x^2, d2 = 6x
    Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5});
    Var v = Var::leaf(x, true);
    Var y = sum(mul(mul(v, v), v));
    Var g = grad_of(y, v);
    for (int i = 0; i < 3; ++i)
        CHECK(g.value()[i] == doctest::Approx(3 * x[i] * x[i]));
    Var s = sum(mul(g, g));  // sum 9 x^4 -> d/dx = 36 x^3
    GradMap gm2 = backward(s);
    for (int i = 0; i < 3; ++i)
        CHECK(gm2.get(v).value()[i] == doctest::Approx(36 * std::pow(x[i], 3)));
}

TEST_CASE("double backprop through convolution") {
    // Differentiates the gradient norm of a conv net w.r.t. its weights, the
    // pattern the gradient penalty relies on.
    Rng rng(9);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5);
    Tensor b = random_tensor({3}, rng, 0.2);

    auto penalty = [&](const std::vector<Var>& v) {
        Var xi = Var::leaf(x, true);
        Var y = sum(leaky_relu(conv2d(xi, v[0], v[1], 2, 1), 0.2));
        Var g = grad_of(y, xi);
        return sum(mul(g, g));
    };
    auto r = gradcheck(penalty, {w, b});
    CHECK(r.max_rel < 1e-4);
}

TEST_CASE("backward with targets prunes unrelated branches") {
    Var a = Var::leaf(Tensor::from({2}, {1.0, 2.0}), true);
    Var b = Var::leaf(Tensor::from({2}, {3.0, 4.0}), true);
    Var y = add(sum(mul(a, a)), sum(mul(b, b)));
    GradMap gm = backward(y, {a});
    CHECK(gm.get(a).defined());
    CHECK_FALSE(gm.get(b).defined());
    CHECK(gm.get(a).value()[1] == doctest::Approx(4.0));
}

TEST_CASE("no-grad guard suppresses graph construction") {
    Var a = Var::leaf(Tensor::from({2}, {1.0, 2.0}), true);
    NoGradGuard ng;
    Var y = mul(a, a);
    CHECK_FALSE(y.requires_grad());
}
