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

#include "astec/pipeline.hpp"
#include "astec/synth.hpp"
#include "astec/theorem.hpp"
#include "oracles.hpp"

using namespace astec;

namespace {

// Independent evaluation of the end-to-end quantities from raw loops.
struct Direct {
    double gap, norm_v, cos_v, cos_x;
};

std::vector<double> relu_residual(const DenseMatrix& R, const std::vector<double>& v) {
    std::vector<double> out(v);
    for (std::size_t i = 0; i < v.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) s += R(i, j) * v[j];
        out[i] += s > 0.0 ? s : 0.0;
    }
    return out;
}

double cos_of(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return aa > 0.0 && bb > 0.0 ? ab / std::sqrt(aa * bb) : 0.0;
}

Direct direct(const DenseMatrix& R, const std::vector<double>& v, const std::vector<std::vector<double>>& pos) {
    const std::size_t D = v.size();
    const auto xh = relu_residual(R, v);
    std::vector<double> mu0(D, 0.0), mu(D, 0.0);
    for (const auto& p : pos) {
        const auto px = relu_residual(R, p);
        for (std::size_t k = 0; k < D; ++k) {
            mu0[k] += p[k] / static_cast<double>(pos.size());
            mu[k] += px[k] / static_cast<double>(pos.size());
        }
    }
    double g = 0.0, n = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
        g += (xh[k] - v[k]) * (xh[k] - v[k]);
        n += v[k] * v[k];
    }
    return {std::sqrt(g), std::sqrt(n), cos_of(v, mu0), cos_of(xh, mu)};
}

std::vector<double> nonneg(Rng& rng, std::size_t D) {
    std::vector<double> v(D);
    for (auto& x : v) x = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.0, 3.0);
    v[rng.index(D)] += 0.1;
    return v;
}

DenseMatrix random_matrix(Rng& rng, std::size_t D) {
    DenseMatrix R(D, D);
    for (auto& x : R.data()) x = rng.uniform(-1.0, 1.0);
    return R;
}

}  // namespace

TEST(Epsilon, Examples) {
    EXPECT_NEAR(eps_for(0.1, 1), 0.21, 1e-15);
    EXPECT_EQ(eps_for(0.0, 50), 0.0);
    EXPECT_NEAR(eps_for(0.5, 4), 3.0, 1e-15);
}

TEST(Residuals, ExactSpectralNorms) {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const std::size_t D = 1 + rng.index(10);
        const double sigma = rng.uniform(0.01, 1.0);
        const auto R = random_residual(D, sigma, rng);
        EXPECT_NEAR(oracle::sigma_max(R), sigma, 1e-9);
        EXPECT_NEAR(sigma_max_exact(R), sigma, 1e-12);
        const auto v = nonneg(rng, D);
        const auto T = make_tight_residual(v, sigma);
        EXPECT_NEAR(oracle::sigma_max(T), sigma, 1e-9);
    }
}

TEST(FeatureBound, ZeroResidualAndZeroInput) {
    const DenseMatrix R(3, 3);
    const std::vector<double> v{1.0, 2.0, 2.0};
    const auto r = feature_bound_row(R, 0.5, v);
    EXPECT_EQ(r.gap, 0.0);
    EXPECT_DOUBLE_EQ(r.margin, 1.5);
    Rng rng(2);
    const auto z = feature_bound_row(random_matrix(rng, 3), 0.5, std::vector<double>(3, 0.0));
    EXPECT_EQ(z.gap, 0.0);
    EXPECT_EQ(z.margin, 0.0);
}

TEST(FeatureBound, ThousandDrawsAtFullBudget) {
    Rng rng(3);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t D = 1 + rng.index(12);
        const double lambda = rng.uniform(0.05, 1.0);
        const auto R = random_residual(D, lambda, rng);
        std::vector<double> v(D);
        for (auto& x : v) x = rng.uniform(-2.0, 2.0);
        const auto r = feature_bound_row(R, lambda, v);
        const auto d = direct(R, v, {v});
        EXPECT_NEAR(r.gap, d.gap, 1e-12);
        EXPECT_GE(r.margin, -kBoundSlack);
        EXPECT_LE(d.gap, lambda * d.norm_v + kBoundSlack);
    }
}

TEST(FeatureBound, RankOneWitnessAttainsEquality) {
    Rng rng(4);
    for (int t = 0; t < 500; ++t) {
        const std::size_t D = 1 + rng.index(12);
        const double lambda = rng.uniform(0.05, 1.0);
        const auto v = nonneg(rng, D);
        const auto r = feature_bound_row(make_tight_residual(v, lambda), lambda, v);
        EXPECT_NEAR(r.gap, lambda * r.norm_v, 1e-12 * std::max(1.0, r.norm_v));
    }
}

TEST(CosineBound, ZeroLambdaPinches) {
    Rng rng(5);
    const DenseMatrix R(6, 6);
    for (int t = 0; t < 100; ++t) {
        const auto v = nonneg(rng, 6);
        std::vector<std::vector<double>> pos{nonneg(rng, 6), nonneg(rng, 6), nonneg(rng, 6)};
        BoundInstance in{&R, 0.0, v, {}};
        for (const auto& p : pos) in.pos.emplace_back(p);
        const auto [c, m] = bound_rows(in);
        EXPECT_EQ(c.eps, 0.0);
        EXPECT_EQ(c.cos_xhat, c.cos_v);
        EXPECT_EQ(m.mu_gap_margin, 0.0);
        EXPECT_EQ(m.mu_lower_margin, 0.0);
        EXPECT_EQ(m.x_lower_margin, 0.0);
        EXPECT_EQ(m.inner_margin, 0.0);
    }
}

TEST(CosineBound, SinglePositiveLambdaTenthTenThousandDraws) {
    Rng rng(6);
    for (int t = 0; t < 10000; ++t) {
        const std::size_t D = 1 + rng.index(8);
        const auto R = random_residual(D, 0.1 * (1.0 - rng.uniform()), rng);
        const auto v = nonneg(rng, D);
        const std::vector<std::vector<double>> pos{nonneg(rng, D)};
        BoundInstance in{&R, 0.1, v, {pos[0]}};
        const auto [c, m] = bound_rows(in);
        ASSERT_NEAR(c.eps, 0.21, 1e-15);
        const auto d = direct(R, v, pos);
        EXPECT_NEAR(c.cos_v, d.cos_v, 1e-12);
        EXPECT_NEAR(c.cos_xhat, d.cos_x, 1e-12);
        EXPECT_LE(d.cos_v / 1.21, d.cos_x + kBoundSlack);
        EXPECT_LE(d.cos_x, d.cos_v + 0.21 + kBoundSlack);
        EXPECT_GE(m.min_margin(), -kBoundSlack);
    }
}

TEST(CosineBound, NegativeIntermediateFeaturesRejected) {
    const DenseMatrix R(2, 2);
    const std::vector<double> v{1.0, -0.5}, p{1.0, 1.0};
    BoundInstance in{&R, 0.5, v, {p}};
    EXPECT_EQ(oracle::error_code([&] { bound_rows(in); }), ErrorCode::InvalidParam);
}

TEST(RandomSuite, HundredThousandDrawsNoViolations) {
    RandomSuiteConfig cfg;
    cfg.instances = 100000;
    const auto rep = run_random_suite(cfg);
    RecordProperty("excluded", std::to_string(rep.excluded));
    RecordProperty("min_cosine_margin", std::to_string(rep.min_cosine_margin));
    EXPECT_EQ(rep.instances, 100000u);
    EXPECT_EQ(rep.violations(), 0u);
    EXPECT_LT(rep.excluded, rep.instances / 20);
    EXPECT_LT(rep.max_tight_gap, 1e-9);
    EXPECT_GE(rep.min_feature_margin, -kBoundSlack);
}

// ---------------------------------------------------------------------------
// Trained models

class TrainedModel : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        data_ = new Dataset(synth_dataset({6, 60, 5, 20, 0.05, 4}));
        auto cfg = desk_preset();
        cfg.surrogate.dim = 24;
        cfg.surrogate.num_meta = 12;
        cfg.surrogate.epochs = 4;
        cfg.extreme.epochs = 4;
        cfg.extreme.lambda = 0.3;
        cfg.reranker.enabled = false;
        state_ = new PipelineState(run_pipeline(*data_, cfg));
    }
    static void TearDownTestSuite() {
        delete data_;
        delete state_;
    }
    static Dataset* data_;
    static PipelineState* state_;
};
Dataset* TrainedModel::data_ = nullptr;
PipelineState* TrainedModel::state_ = nullptr;

TEST_F(TrainedModel, AllBoundsHold) {
    const auto& m = *state_->extreme;
    const double lambda = effective_lambda(m.R);
    EXPECT_GE(lambda, 0.3);
    EXPECT_LE(oracle::sigma_max(m.R.R), lambda * (1.0 + 1e-9));
    std::vector<std::uint32_t> pts;
    for (std::uint32_t i = 0; i < data_->num_points; i += 3) pts.push_back(i);
    std::vector<LabelId> labels;
    for (LabelId l = 0; l < data_->num_labels; ++l) labels.push_back(l);
    const auto f = check_feature_bound(m, lambda, *data_, pts);
    EXPECT_EQ(f.size(), pts.size());
    const auto c = check_cosine_bounds(m, lambda, *data_, labels, pts);
    const auto im = check_intermediate_bounds(m, lambda, *data_, labels, pts);
    EXPECT_EQ(c.size(), im.size());
    EXPECT_GT(c.size(), 0u);
    for (const auto& r : im) EXPECT_GE(r.mu_gap_margin, -kBoundSlack);
}

TEST_F(TrainedModel, OverBudgetResidualIsRejected) {
    auto m = *state_->extreme;
    for (std::size_t i = 0; i < m.R.R.rows(); ++i) m.R.R(i, i) += 2.0;
    const std::vector<std::uint32_t> pts{0, 1};
    EXPECT_EQ(oracle::error_code([&] { check_feature_bound(m, 0.3, *data_, pts); }), ErrorCode::BoundViolated);
}

TEST_F(TrainedModel, OverlapCurveDecreasesWithLambda) {
    OverlapConfig oc;
    oc.anns = AnnsConfig{16, 100, 100, 16, 16, 4, 8};
    oc.caps = ShortlistCaps{16, 16, 0, 24};
    oc.extreme.train.epochs = 4;
    const std::vector<double> lambdas{0.0, 0.1, 0.3, 0.5, 1.0};
    const auto curve = shortlist_overlap_vs_lambda(*data_, *state_->E, lambdas, oc);
    ASSERT_EQ(curve.size(), lambdas.size());
    EXPECT_EQ(curve[0].overlap, 1.0);
    EXPECT_EQ(curve[0].sigma, 0.0);
    for (std::size_t k = 0; k < curve.size(); ++k) {
        RecordProperty("overlap_" + std::to_string(k), std::to_string(curve[k].overlap));
        EXPECT_LE(curve[k].sigma, lambdas[k] * (1.0 + 1e-6));
        if (k > 0) {
            EXPECT_LE(curve[k].overlap, curve[k - 1].overlap + 0.02) << "lambda " << lambdas[k];
        }
    }
    EXPECT_LE(curve[4].overlap, curve[1].overlap + 0.02);
}
