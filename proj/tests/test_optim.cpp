#include "alto/optim.hpp"

#include <gtest/gtest.h>

using namespace alto;

namespace {

Param<double> scalar_param(const std::string& name, double value) {
    Tensor<double> t(Shape{1});
    t[0] = value;
    return Param<double>{name, Role::registration, std::move(t)};
}

} // namespace

TEST(OneCycle, EndpointsAndPeak) {
    const OneCycleSchedule sched(3e-4, 100, 0.3, 25.0, 1e4);
    EXPECT_DOUBLE_EQ(sched.lr_at(0), 3e-4 / 25.0);
    EXPECT_DOUBLE_EQ(sched.lr_at(30), 3e-4); // peak at pct_start * total
    EXPECT_DOUBLE_EQ(sched.lr_at(99), 3e-4 / (25.0 * 1e4));
    EXPECT_LT(sched.lr_at(99), 1e-5); // long-tail anneal ends far below start
}

TEST(OneCycle, MonotoneSegmentsAndClamping) {
    const OneCycleSchedule sched(3e-4, 100);
    for (int64_t s = 1; s <= 30; ++s) EXPECT_GT(sched.lr_at(s), sched.lr_at(s - 1)) << s;
    for (int64_t s = 31; s < 100; ++s) EXPECT_LT(sched.lr_at(s), sched.lr_at(s - 1)) << s;
    EXPECT_DOUBLE_EQ(sched.lr_at(-7), sched.lr_at(0));
    EXPECT_DOUBLE_EQ(sched.lr_at(100000), sched.lr_at(99));
}

TEST(OneCycle, SingleStepDegenerate) {
    const OneCycleSchedule sched(1e-3, 1);
    EXPECT_DOUBLE_EQ(sched.lr_at(0), 1e-3);
}

TEST(GradNorm, PythagoreanHandValue) {
    Param<double> a = scalar_param("a", 0.0), b = scalar_param("b", 0.0);
    Graph<double> g;
    // d/da of 3a = 3, d/db of 4b = 4 -> global norm 5.
    Var<double> loss = add(scale(sum_all(a.use(g, true)), 3.0),
                           scale(sum_all(b.use(g, true)), 4.0));
    g.backward(loss);
    std::vector<Param<double>*> params{&a, &b};
    EXPECT_DOUBLE_EQ(grad_norm(g, params), 5.0);
}

TEST(ClipGradients, ElementwiseLimit) {
    Param<double> a = scalar_param("a", 0.0), b = scalar_param("b", 0.0);
    Graph<double> g;
    Var<double> loss = add(scale(sum_all(a.use(g, true)), 10.0),
                           scale(sum_all(b.use(g, true)), -0.25));
    g.backward(loss);
    std::vector<Param<double>*> params{&a, &b};
    clip_gradients(g, params, 1.0);
    EXPECT_DOUBLE_EQ((*a.grad_in(g))[0], 1.0);    // clipped from 10
    EXPECT_DOUBLE_EQ((*b.grad_in(g))[0], -0.25);  // within the limit, untouched
}

TEST(AdamW, FirstStepHandValue) {
    // w=1, g=0.5, lr=0.1, wd=0.1: mhat = g, vhat = g^2, so
    // w' = 1 - 0.1*(0.5/(0.5 + 1e-8) + 0.1*1) = 0.8900000002.
    Param<double> a = scalar_param("a", 1.0);
    AdamW<double> opt({&a}, 0.1, 0.1);
    Graph<double> g;
    Var<double> loss = scale(sum_all(a.use(g, true)), 0.5);
    g.backward(loss);
    opt.step(g);
    EXPECT_NEAR(a.value[0], 0.8900000002, 1e-9);
    EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamW, ZeroGradientGivesPureDecay) {
    Param<double> a = scalar_param("a", 2.0);
    AdamW<double> opt({&a}, 0.1, 0.01);
    Graph<double> g;
    // Live but exactly zero gradient: only the decoupled decay acts.
    Var<double> loss = scale(sum_all(a.use(g, true)), 0.0);
    g.backward(loss);
    opt.step(g);
    EXPECT_DOUBLE_EQ(a.value[0], 2.0 * (1.0 - 0.1 * 0.01));
}

TEST(AdamW, UntouchedParamKeepsValueAndMoments) {
    Param<double> a = scalar_param("a", 1.0);
    Param<double> idle = scalar_param("idle", 5.0);
    AdamW<double> opt({&a, &idle}, 0.1, 0.1);

    Graph<double> g;
    Var<double> loss = scale(sum_all(a.use(g, true)), 0.5);
    g.backward(loss);
    opt.step(g);

    EXPECT_DOUBLE_EQ(idle.value[0], 5.0);
    EXPECT_DOUBLE_EQ(opt.moment1(1)[0], 0.0);
    EXPECT_DOUBLE_EQ(opt.moment2(1)[0], 0.0);
    EXPECT_NE(a.value[0], 1.0);
}

TEST(AdamW, SharedClockBiasCorrection) {
    // Two steps on one param, then a first-ever gradient on another: the
    // late param's bias correction uses the shared t=3 clock.
    Param<double> a = scalar_param("a", 1.0);
    Param<double> late = scalar_param("late", 1.0);
    AdamW<double> opt({&a, &late}, 0.05, 0.0);

    for (int i = 0; i < 2; ++i) {
        Graph<double> g;
        g.backward(scale(sum_all(a.use(g, true)), 1.0));
        opt.step(g);
    }
    Graph<double> g;
    g.backward(add(scale(sum_all(a.use(g, true)), 1.0),
                   scale(sum_all(late.use(g, true)), 1.0)));
    opt.step(g);
    EXPECT_EQ(opt.step_count(), 3);

    // With t=3 clock: m = 0.1*g, bc1 = 1 - 0.9^3 = 0.271, v = 0.001*g^2,
    // bc2 = 1 - 0.999^3; with g = 1 the update is
    // lr * (0.1/0.271) / (sqrt(0.001/bc2) + eps).
    const double bc1 = 1.0 - std::pow(0.9, 3), bc2 = 1.0 - std::pow(0.999, 3);
    const double expect = 1.0 - 0.05 * (0.1 / bc1) / (std::sqrt(0.001 / bc2) + 1e-8);
    EXPECT_NEAR(late.value[0], expect, 1e-12);
}

TEST(AdamW, ConvergesOnQuadratic) {
    // Minimize (w - 3)^2: the iterate should approach 3.
    Param<double> w = scalar_param("w", 0.0);
    AdamW<double> opt({&w}, 0.1, 0.0);
    for (int i = 0; i < 400; ++i) {
        Graph<double> g;
        Var<double> wv = w.use(g, true);
        Var<double> diff = add_scalar(wv, -3.0);
        g.backward(sum_all(mul(diff, diff)));
        opt.step(g);
    }
    EXPECT_NEAR(w.value[0], 3.0, 1e-2);
}
