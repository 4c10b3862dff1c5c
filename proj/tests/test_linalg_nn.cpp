// Copyright 2026 The astec-xmc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "astec/nn.hpp"
#include "oracles.hpp"

using namespace astec;

namespace {

EmbeddingBank bank(std::size_t V, std::size_t D, std::initializer_list<double> rows) {
    EmbeddingBank E;
    E.table = DenseMatrix(V, D);
    std::size_t i = 0;
    for (double v : rows) E.table.data()[i++] = v;
    return E;
}

SparseVector sv(std::initializer_list<std::pair<std::uint32_t, double>> items) {
    SparseVector x;
    for (auto [i, v] : items) {
        x.indices.push_back(i);
        x.values.push_back(v);
    }
    return x;
}

}  // namespace

TEST(EmbedBag, EmptyInputGivesZero) {
    const auto E = bank(2, 2, {1, -1, 2, 2});
    EXPECT_EQ(embed_bag(SparseVector{}, E), (std::vector<double>{0.0, 0.0}));
}

TEST(EmbedBag, HandArithmetic) {
    const auto E = bank(2, 2, {1, -1, 2, 2});
    const auto v = embed_bag(sv({{0, 1.0}, {1, 0.5}}), E);
    EXPECT_DOUBLE_EQ(v[0], 2.0);
    EXPECT_DOUBLE_EQ(v[1], 0.0);
}

TEST(EmbedBag, AllNegativePreActivation) {
    const auto E = bank(2, 3, {-1, -2, -3, -0.5, -0.5, -0.5});
    EXPECT_EQ(embed_bag(sv({{0, 1.0}, {1, 2.0}}), E), (std::vector<double>(3, 0.0)));
}

TEST(EmbedBag, OutOfRangeToken) {
    const auto E = bank(2, 2, {1, -1, 2, 2});
    EXPECT_EQ(oracle::error_code([&] { embed_bag(sv({{2, 1.0}}), E); }), ErrorCode::IndexOutOfRange);
}

TEST(ResidualForward, ZeroResidualAndZeroInput) {
    auto R = ResidualBlock::zeros(3, 0.5);
    const std::vector<double> v{1.0, 0.0, 2.0};
    EXPECT_EQ(residual_forward(v, R), v);
    R.R.fill(0.3);
    const std::vector<double> zero(3, 0.0);
    EXPECT_EQ(residual_forward(zero, R), zero);
}

TEST(ResidualForward, BoundedByLambdaAndMonotone) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t D = 2 + rng.index(10);
        auto R = ResidualBlock::zeros(D, 0.3);
        for (auto& r : R.R.data()) r = rng.uniform(-1.0, 1.0);
        project_spectral(R);
        std::vector<double> v(D);
        for (auto& x : v) x = rng.uniform(-2.0, 2.0);
        const auto xh = residual_forward(v, R);
        double diff = 0.0, vn = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
            EXPECT_GE(xh[i], v[i]);
            diff += (xh[i] - v[i]) * (xh[i] - v[i]);
            vn += v[i] * v[i];
        }
        EXPECT_LE(std::sqrt(diff), 0.3 * 1.001 * std::sqrt(vn) + 1e-12);
    }
}

TEST(LogisticLoss, ZeroClassifierGivesLn2PerLabel) {
    Rng rng(3);
    auto in = oracle::random_instance(rng, 5, 6, 7, 3, 4, 0.0);
    in.W.weights.fill(0.0);
    const auto g = logistic_loss_and_grads(in.x, in.E, in.R, in.W, in.pos, in.neg);
    EXPECT_NEAR(g.loss, 7.0 * std::log(2.0), 1e-12);
}

TEST(LogisticLoss, SaturatedCorrectPrediction) {
    Rng rng(4);
    auto in = oracle::random_instance(rng, 4, 5, 2, 1, 0, 0.0);
    const auto f = forward_features(in.x, in.E, in.R);
    for (std::size_t d = 0; d < 4; ++d) in.W.weights(in.pos[0], d) = 1e4 * f.xhat[d];
    const auto g = logistic_loss_and_grads(in.x, in.E, in.R, in.W, in.pos, in.neg);
    EXPECT_LT(g.loss, 1e-12);
    for (const auto& [l, gw] : g.grad_W)
        for (double v : gw) EXPECT_LT(std::abs(v), 1e-12);
}

TEST(LogisticLoss, OverlappingPosNegRejected) {
    Rng rng(5);
    auto in = oracle::random_instance(rng, 3, 4, 4, 2, 2, 0.0);
    in.neg.push_back(in.pos[0]);
    EXPECT_EQ(oracle::error_code([&] { logistic_loss_and_grads(in.x, in.E, in.R, in.W, in.pos, in.neg); }),
              ErrorCode::InvalidParam);
}

TEST(LogisticLoss, LossMatchesScalarReference) {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        const auto in = oracle::random_instance(rng, 1 + rng.index(8), 6, 10, 1 + rng.index(3), rng.index(5), 0.5);
        const double lib = logistic_loss(in.x, in.E, in.R, in.W, in.pos, in.neg, in.m1, in.m2);
        EXPECT_NEAR(lib, oracle::loss(in), 1e-12 * std::max(1.0, lib));
    }
}

TEST(LogisticLoss, FiniteDifferencesD5ThreePosFourNeg) {
    Rng rng(7);
    int checked = 0;
    while (checked < 50) {
        const auto in = oracle::random_instance(rng, 5, 8, 7, 3, 4, 0.0);
        if (!oracle::kink_free(in, 1e-4)) continue;
        const auto g = logistic_loss_and_grads(in.x, in.E, in.R, in.W, in.pos, in.neg);
        EXPECT_LT(oracle::worst_fd_error(in, g), 1e-4);
        ++checked;
    }
}

TEST(LogisticLoss, FiniteDifferencesRandomShapesWithDropout) {
    Rng rng(8);
    int checked = 0;
    while (checked < 300) {
        const std::size_t D = 1 + rng.index(8), L = 1 + rng.index(10);
        const std::size_t np = rng.index(L + 1);
        const std::size_t nn = rng.index(L - np + 1);
        const auto in = oracle::random_instance(rng, D, 6, L, np, nn, checked % 2 ? 0.5 : 0.0);
        if (!oracle::kink_free(in, 1e-4)) continue;
        const auto g = logistic_loss_and_grads(in.x, in.E, in.R, in.W, in.pos, in.neg, in.m1, in.m2);
        EXPECT_LT(oracle::worst_fd_error(in, g), 1e-4) << "D=" << D << " L=" << L;
        // Only the labels in pos u neg and the tokens in x carry gradients.
        EXPECT_EQ(g.grad_W.size(), np + nn);
        EXPECT_EQ(g.grad_E.size(), in.x.nnz());
        ++checked;
    }
}

TEST(ProjectSpectral, ScaledIdentity) {
    auto R = ResidualBlock::zeros(4, 0.5);
    for (std::size_t i = 0; i < 4; ++i) R.R(i, i) = 2.0;
    PowerIterationOptions opt;
    opt.max_iters = 50;
    const double s = project_spectral(R, opt);
    EXPECT_NEAR(s, 2.0, 1e-6);
    EXPECT_EQ(R.sigma_estimate, 0.5);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(R.R(i, j), i == j ? 0.5 : 0.0, 1e-6);
}

TEST(ProjectSpectral, InsideBudgetUnchanged) {
    auto R = ResidualBlock::zeros(3, 0.5);
    R.R(0, 0) = 0.1;
    R.R(1, 2) = -0.05;
    const auto before = R.R;
    project_spectral(R);
    EXPECT_EQ(R.R, before);
}

TEST(ProjectSpectral, EigenOracleAndIdempotence) {
    Rng rng(9);
    for (int t = 0; t < 50; ++t) {
        auto R = ResidualBlock::zeros(16, t % 2 ? 0.5 : 0.1);
        for (auto& r : R.R.data()) r = rng.uniform(-1.0, 1.0);
        project_spectral(R);
        EXPECT_LE(oracle::sigma_max(R.R), R.lambda * 1.001);
        const auto once = R.R;
        project_spectral(R);
        EXPECT_LT(frobenius_distance(once, R.R), 1e-9);
    }
}

TEST(ProjectSpectral, ZeroMatrixStaysZero) {
    auto R = ResidualBlock::zeros(5, 0.5);
    EXPECT_EQ(project_spectral(R), 0.0);
    EXPECT_EQ(R.R, DenseMatrix(5, 5));
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    std::vector<double> p{1.0, -2.0, 3.0};
    const auto before = p;
    AdamState st;
    const std::vector<double> g(3, 0.0);
    for (int i = 0; i < 5; ++i) adam_step(p, g, st, {});
    EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepIsMinusLearningRate) {
    std::vector<double> p{0.0};
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.1;
    adam_step(p, std::vector<double>{1.0}, st, cfg);
    EXPECT_NEAR(p[0], -0.1, 1e-8);
    std::vector<double> q{0.0};
    AdamState sq;
    adam_step(q, std::vector<double>{-3.0}, sq, cfg);
    EXPECT_NEAR(q[0], 0.1, 1e-8);
}

TEST(Adam, DeterministicAndShapeChecked) {
    auto run = [] {
        Rng rng(1);
        std::vector<double> p(10, 0.5);
        AdamState st;
        for (int s = 0; s < 20; ++s) {
            std::vector<double> g(10);
            for (auto& x : g) x = rng.uniform(-1.0, 1.0);
            adam_step(p, g, st, {});
        }
        return p;
    };
    EXPECT_EQ(run(), run());
    std::vector<double> p(3);
    AdamState st;
    EXPECT_EQ(oracle::error_code([&] { adam_step(p, std::vector<double>(2), st, {}); }), ErrorCode::ShapeMismatch);
}

TEST(Dropout, ZeroRateAndInferenceAreIdentity) {
    Rng rng(2);
    const std::vector<double> v{1.0, -2.0, 3.0, 4.0};
    EXPECT_EQ(apply_dropout(v, 0.0, rng, true), v);
    EXPECT_EQ(apply_dropout(v, 0.9, rng, false), v);
}

TEST(Dropout, HalfRateOnAMillionCoordinates) {
    Rng rng(12);
    const std::vector<double> v(1000000, 1.0);
    const auto out = apply_dropout(v, 0.5, rng, true);
    std::size_t zeros = 0;
    for (double x : out) {
        if (x == 0.0)
            ++zeros;
        else
            EXPECT_EQ(x, 2.0);
    }
    EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.5, 0.002);
}

TEST(Dropout, InvalidRate) {
    Rng rng(2);
    const std::vector<double> v(3, 1.0);
    EXPECT_EQ(oracle::error_code([&] { apply_dropout(v, 1.0, rng, true); }), ErrorCode::InvalidParam);
    EXPECT_EQ(oracle::error_code([&] { apply_dropout(v, -0.1, rng, true); }), ErrorCode::InvalidParam);
}
