#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "semalign/model.hpp"
#include "semalign/nn.hpp"

using namespace semalign;
using nn::Mode;
using nn::Tensor;

namespace {

Tensor<double> random_input(int n, std::uint64_t seed, int h = 32, int w = 32) {
    Tensor<double> x(n, 3, h, w);
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : x.data) v = u(rng);
    return x;
}

std::vector<std::vector<double>> random_soft_targets(int n, int classes, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> c(0, classes - 1);
    std::vector<std::vector<double>> t;
    for (int i = 0; i < n; ++i) {
        std::vector<double> q(static_cast<std::size_t>(classes), 0.0);
        int a = c(rng), b = c(rng);
        q[static_cast<std::size_t>(a)] += 0.5;
        q[static_cast<std::size_t>(b)] += 0.5;
        t.push_back(q);
    }
    return t;
}

double batch_loss(Classifier<double>& m, const Tensor<double>& x, const std::vector<std::vector<double>>& t, Mode mode) {
    auto lg = m.loss_and_grad(x, t, mode, false, 1.0, false);
    double s = 0.0;
    for (double l : lg.losses) s += l;
    return s / static_cast<double>(x.n);
}

struct GradCheck {
    int checked = 0;
    int failed = 0;
    double worst = 0.0;
};

/// Compares analytic parameter gradients against central differences on `samples` random
/// coordinates. BatchNorm layers are evaluated in `mode` on both sides.
GradCheck check_param_grads(Classifier<double>& m, const Tensor<double>& x, const std::vector<std::vector<double>>& t,
                            Mode mode, int samples, std::uint64_t seed) {
    auto refs = m.state();
    nn::zero_grad(refs);
    m.loss_and_grad(x, t, mode, true, 1.0 / x.n);
    std::vector<std::pair<nn::Param<double>*, std::size_t>> coords;
    for (auto* p : refs.params)
        for (std::size_t i = 0; i < p->value.size(); ++i) coords.emplace_back(p, i);
    std::vector<nn::Buffer<double>> saved;
    for (auto* b : refs.buffers) saved.push_back(*b);
    auto restore = [&] {
        for (std::size_t i = 0; i < refs.buffers.size(); ++i) *refs.buffers[i] = saved[i];
    };
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, coords.size() - 1);
    GradCheck gc;
    for (int s = 0; s < samples; ++s) {
        auto [p, i] = coords[pick(rng)];
        const double analytic = p->grad[i];
        const double numeric = oracle::central_difference(
            [&] {
                const double l = batch_loss(m, x, t, mode);
                restore();  // train-mode forwards update running statistics
                return l;
            },
            p->value[i], 1e-5);
        const double err = oracle::relative_error(analytic, numeric, 1e-6);
        gc.worst = std::max(gc.worst, err);
        gc.failed += err > 1e-3;
        ++gc.checked;
    }
    return gc;
}

}  // namespace

TEST(SmallCnn, ParameterCountAndShapes) {
    Classifier<float> m({"smallcnn", 25}, 1);
    EXPECT_EQ(nn::parameter_count(m.net()), 91033u);
    Tensor<float> x(2, 3, 32, 32, 0.5f);
    auto y = m.net().forward(x, Mode::Eval);
    EXPECT_EQ(y.n, 2);
    EXPECT_EQ(y.c, 25);
}

TEST(SmallCnn, ParameterGradientsMatchFiniteDifferencesTrainMode) {
    Classifier<double> m({"smallcnn", 25}, 7);
    auto x = random_input(3, 11);
    auto t = random_soft_targets(3, 25, 12);
    auto gc = check_param_grads(m, x, t, Mode::Train, 100, 13);
    EXPECT_EQ(gc.failed, 0) << "worst relative error " << gc.worst;
}

TEST(SmallCnn, ParameterGradientsMatchFiniteDifferencesEvalMode) {
    Classifier<double> m({"smallcnn", 25}, 8);
    auto x = random_input(2, 21);
    auto t = random_soft_targets(2, 25, 22);
    auto gc = check_param_grads(m, x, t, Mode::Eval, 60, 23);
    EXPECT_EQ(gc.failed, 0) << "worst relative error " << gc.worst;
}

TEST(SmallCnn, InputGradientsMatchFiniteDifferences) {
    Classifier<double> m({"smallcnn", 25}, 9);
    auto x = random_input(2, 31);
    auto t = random_soft_targets(2, 25, 32);
    auto lg = m.loss_and_grad(x, t, Mode::Eval, false, 1.0 / x.n);
    Rng rng(33);
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    int failed = 0;
    for (int s = 0; s < 100; ++s) {
        const std::size_t i = pick(rng);
        const double numeric = oracle::central_difference([&] { return batch_loss(m, x, t, Mode::Eval); }, x.data[i], 1e-5);
        failed += oracle::relative_error(lg.input_grad.data[i], numeric, 1e-7) > 1e-3;
    }
    EXPECT_EQ(failed, 0);
}

TEST(Bottleneck, GradientsMatchFiniteDifferences) {
    Rng rng(5);
    nn::Sequential<double> net;
    net.add<nn::Conv2d<double>>(3, 8, 3, 1, 1, false, rng)
        .add<nn::BatchNorm2d<double>>(8)
        .add<nn::ReLU<double>>()
        .add<nn::Bottleneck<double>>(8, 4, 1, rng)
        .add<nn::Bottleneck<double>>(16, 4, 2, rng)
        .add<nn::GlobalAvgPool<double>>()
        .add<nn::Linear<double>>(16, 5, rng);
    Classifier<double> m({"resnet-mini", 5}, std::move(net));
    auto x = random_input(3, 41, 8, 8);
    auto t = random_soft_targets(3, 5, 42);
    auto gc = check_param_grads(m, x, t, Mode::Train, 100, 43);
    EXPECT_EQ(gc.failed, 0) << "worst relative error " << gc.worst;

    auto lg = m.loss_and_grad(x, t, Mode::Train, false, 1.0 / x.n);
    int failed = 0;
    auto refs = m.state();
    std::vector<nn::Buffer<double>> saved;
    for (auto* b : refs.buffers) saved.push_back(*b);
    for (std::size_t i = 0; i < x.size(); i += 7) {
        const double numeric = oracle::central_difference(
            [&] {
                const double l = batch_loss(m, x, t, Mode::Train);
                for (std::size_t k = 0; k < refs.buffers.size(); ++k) *refs.buffers[k] = saved[k];
                return l;
            },
            x.data[i], 1e-5);
        failed += oracle::relative_error(lg.input_grad.data[i], numeric, 1e-7) > 1e-3;
    }
    EXPECT_EQ(failed, 0);
}

TEST(ResNet50, BuildsAndRunsForward) {
    Classifier<float> m({"resnet50", 25}, 3);
    // Bottleneck ResNet50 with a 25-way head: 23.5M parameters.
    EXPECT_GT(nn::parameter_count(m.net()), 23'000'000u);
    EXPECT_LT(nn::parameter_count(m.net()), 24'000'000u);
    Tensor<float> x(1, 3, 32, 32, 0.25f);
    auto y = m.net().forward(x, Mode::Eval);
    EXPECT_EQ(y.c, 25);
}

TEST(Sgd, MomentumAndWeightDecayUpdate) {
    nn::Param<double> p("w", 1);
    p.value[0] = 2.0;
    p.grad[0] = 0.5;
    nn::StateRefs<double> refs{{&p}, {}};
    nn::sgd_step(refs, {0.1, 0.9, 0.01});
    // g = 0.5 + 0.01*2 = 0.52; v = 0.52; w = 2 - 0.052
    EXPECT_DOUBLE_EQ(p.velocity[0], 0.52);
    EXPECT_DOUBLE_EQ(p.value[0], 2.0 - 0.1 * 0.52);
    nn::sgd_step(refs, {0.1, 0.9, 0.01});
    const double g2 = 0.5 + 0.01 * (2.0 - 0.052);
    EXPECT_NEAR(p.velocity[0], 0.9 * 0.52 + g2, 1e-15);
}

TEST(Checkpointing, CloneIsIndependent) {
    Classifier<float> a({"smallcnn", 25}, 4);
    nn::Sequential<float> copy = a.net();
    Tensor<float> x(1, 3, 32, 32, 0.3f);
    auto y1 = a.net().forward(x, Mode::Eval);
    auto y2 = copy.forward(x, Mode::Eval);
    EXPECT_EQ(y1.data, y2.data);
}

TEST(SmallCnn, EvalOutputsIndependentOfBatchPosition) {
    Classifier<float> m({"smallcnn", 25}, 10);
    Rng rng(50);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<Image> imgs(9);
    for (auto& im : imgs)
        for (float& v : im.pixels()) v = u(rng);
    std::vector<const Image*> all;
    for (const auto& im : imgs) all.push_back(&im);
    auto batch = m.loss_and_grad(to_batch<float>(all), std::vector<std::vector<double>>(9, one_hot(2, 25)), Mode::Eval,
                                 false);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        std::vector<const Image*> one{&imgs[i]};
        auto single = m.loss_and_grad(to_batch<float>(one), std::vector<std::vector<double>>{one_hot(2, 25)}, Mode::Eval, false);
        EXPECT_EQ(single.probs[0], batch.probs[i]);
        EXPECT_EQ(single.losses[0], batch.losses[i]);
        for (std::size_t k = 0; k < 3072; ++k) ASSERT_EQ(single.input_grad.data[k], batch.input_grad.sample(static_cast<int>(i))[k]);
    }
}
