#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace tcto;
using namespace tcto::nn;

namespace {

DenseNet random_net(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    Rng rng(seed);
    DenseNet net(dims, rng);
    for (auto& L : net.layers())
        for (double& b : L.bias) b = 0.1 * rng.normal();
    return net;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST(DenseNet, ZeroWeightsGiveBias) {
    Matrix w(2, 3);
    DenseNet net({DenseLayer{w, {0.5, -1.5}}});
    EXPECT_EQ(forward(net, {1, 2, 3}), (std::vector<double>{0.5, -1.5}));
}

TEST(DenseNet, IdentityLayer) {
    DenseNet net({DenseLayer{Matrix::identity(3), {0, 0, 0}}});
    EXPECT_EQ(forward(net, {1, -2, 3}), (std::vector<double>{1, -2, 3}));
}

TEST(DenseNet, HandComputedTwoTwoOne) {
    Matrix w1(2, 2);
    w1(0, 0) = 1; w1(0, 1) = -1;
    w1(1, 0) = 2; w1(1, 1) = 0.5;
    Matrix w2(1, 2);
    w2(0, 0) = 3; w2(0, 1) = -2;
    DenseNet net({DenseLayer{w1, {0.5, -1}}, DenseLayer{w2, {0.25}}});
    // x = (1, 2): h = relu(1-2+0.5, 2+1-1) = (0, 2); y = 0*3 + 2*(-2) + 0.25
    EXPECT_DOUBLE_EQ(forward(net, {1, 2})[0], -3.75);
}

TEST(DenseNet, ShapeErrors) {
    Rng rng(1);
    DenseNet net({3, 4, 2}, rng);
    EXPECT_THROW(forward(net, {1, 2}), std::invalid_argument);
    EXPECT_THROW(backward_mse(net, {1, 2, 3}, {1}), std::invalid_argument);
    EXPECT_THROW(DenseNet({DenseLayer{Matrix(2, 3), {0}}}), std::invalid_argument);
    EXPECT_THROW(DenseNet({DenseLayer{Matrix(2, 3), {0, 0}}, DenseLayer{Matrix(1, 3), {0}}}), std::invalid_argument);
    DenseNet other({3, 5, 2}, rng);
    EXPECT_THROW(copy_params(net, other), std::invalid_argument);
}

TEST(Backward, ZeroAtTarget) {
    const auto net = random_net({4, 6, 3}, 2);
    const std::vector<double> x{0.3, -1, 2, 0.5};
    const auto res = backward_mse(net, x, forward(net, x));
    EXPECT_EQ(res.loss, 0.0);
    EXPECT_EQ(res.grads.norm(), 0.0);
}

TEST(Backward, DoublingResidualQuadruplesLoss) {
    const auto net = random_net({3, 5, 2}, 3);
    const std::vector<double> x{1, 2, -1};
    auto y = forward(net, x);
    const auto l1 = backward_mse(net, x, {y[0] + 0.3, y[1] - 0.2}).loss;
    const auto l2 = backward_mse(net, x, {y[0] + 0.6, y[1] - 0.4}).loss;
    EXPECT_NEAR(l2, 4 * l1, 1e-12);
}

TEST(Backward, FiniteDifferences) {
    Rng rng(4);
    for (int t = 0; t < 10; ++t) {
        auto net = random_net({1 + rng.index(5), 2 + rng.index(6), 1 + rng.index(4)}, 100 + t);
        const auto x = random_vec(net.input_dim(), rng);
        const auto target = random_vec(net.output_dim(), rng);
        const auto g = backward_mse(net, x, target).grads;
        const double h = 1e-5;
        for (std::size_t l = 0; l < net.layers().size(); ++l) {
            auto& W = net.layers()[l].weight.data;
            for (std::size_t i = 0; i < W.size(); ++i) {
                const double w0 = W[i];
                W[i] = w0 + h;
                const double up = backward_mse(net, x, target).loss;
                W[i] = w0 - h;
                const double dn = backward_mse(net, x, target).loss;
                W[i] = w0;
                const double fd = (up - dn) / (2 * h);
                const double an = g.layers[l].weight.data[i];
                EXPECT_LE(std::abs(fd - an), 1e-4 * std::max(1.0, std::abs(fd))) << "layer " << l << " idx " << i;
            }
            auto& B = net.layers()[l].bias;
            for (std::size_t i = 0; i < B.size(); ++i) {
                const double b0 = B[i];
                B[i] = b0 + h;
                const double up = backward_mse(net, x, target).loss;
                B[i] = b0 - h;
                const double dn = backward_mse(net, x, target).loss;
                B[i] = b0;
                EXPECT_LE(std::abs((up - dn) / (2 * h) - g.layers[l].bias[i]), 1e-4 * std::max(1.0, std::abs(up)));
            }
        }
    }
}

TEST(Backward, InputGradient) {
    const auto net = random_net({4, 7, 2}, 5);
    std::vector<double> x{0.5, -0.2, 1.1, 0.7};
    const std::vector<double> delta{1.0, -0.5};
    const auto b = backward(net, forward_cached(net, x), delta);
    const double h = 1e-6;
    for (std::size_t j = 0; j < x.size(); ++j) {
        auto xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const auto yp = forward(net, xp), ym = forward(net, xm);
        const double fd = ((yp[0] - ym[0]) * delta[0] + (yp[1] - ym[1]) * delta[1]) / (2 * h);
        EXPECT_NEAR(b.input_grad[j], fd, 1e-6);
    }
}

TEST(Sgd, ZeroLearningRateUnchanged) {
    auto net = random_net({3, 4, 1}, 6);
    const auto before = net;
    sgd_step(net, backward_mse(net, {1, 2, 3}, {5}).grads, 0.0);
    EXPECT_EQ(net, before);
}

TEST(Sgd, HandStep) {
    // single weight theta on constant input 1, target 1: loss (theta - 1)^2
    DenseNet net({DenseLayer{Matrix(1, 1), {0}}});
    auto g = backward_mse(net, {1}, {1}).grads;
    g.layers[0].bias[0] = 0.0;
    sgd_step(net, g, 0.1);
    EXPECT_DOUBLE_EQ(net.layers()[0].weight(0, 0), 0.2);
}

TEST(Sgd, Deterministic) {
    auto a = random_net({3, 4, 2}, 7), b = random_net({3, 4, 2}, 7);
    for (int i = 0; i < 2; ++i) {
        sgd_step(a, backward_mse(a, {1, 0, -1}, {1, 2}).grads, 0.05);
        sgd_step(b, backward_mse(b, {1, 0, -1}, {1, 2}).grads, 0.05);
    }
    EXPECT_EQ(a, b);
}

TEST(Gradients, ClipScalesToNorm) {
    const auto net = random_net({3, 4, 2}, 8);
    auto g = backward_mse(net, {1, 2, 3}, {10, -10}).grads;
    const double n = g.norm();
    ASSERT_GT(n, 1.0);
    EXPECT_DOUBLE_EQ(g.clip(1.0), 1.0 / n);
    EXPECT_NEAR(g.norm(), 1.0, 1e-12);
    EXPECT_EQ(g.clip(5.0), 1.0);
}

TEST(CopyParams, Semantics) {
    auto src = random_net({3, 5, 2}, 9);
    auto dst = random_net({3, 5, 2}, 10);
    copy_params(src, dst);
    Rng rng(11);
    for (int i = 0; i < 10; ++i) {
        const auto x = random_vec(3, rng);
        EXPECT_EQ(forward(src, x), forward(dst, x));
    }
    const auto saved = dst;
    copy_params(dst, dst);
    EXPECT_EQ(dst, saved);
    sgd_step(src, backward_mse(src, {1, 1, 1}, {0, 0}).grads, 0.1);
    EXPECT_EQ(dst, saved);
}
