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

// Numerical checks of the feature-drift and cosine-similarity bounds that
// hold for x^ = v + ReLU(R v) with ||R||_op <= lambda and v >= 0:
//
//   ||x^ - v|| <= lambda ||v||
//   C(v, mu0) / (1 + eps) <= C(x^, mu) <= C(v, mu0) + eps,   eps = (1 + lambda sqrt|P|)^2 - 1
//
// plus the lemma-level inequalities used to derive them.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "astec/error.hpp"
#include "astec/extreme.hpp"
#include "astec/linalg.hpp"
#include "astec/nn.hpp"
#include "astec/sampler.hpp"
#include "astec/types.hpp"
#include "astec/util.hpp"

namespace astec {

inline constexpr double kBoundSlack = 1e-9;

/// Largest singular value by full SVD.
inline double sigma_max_exact(const DenseMatrix& m) {
    if (m.rows() == 0 || m.cols() == 0) return 0.0;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> M(m.data().data(),
                                                                                                  static_cast<Eigen::Index>(m.rows()),
                                                                                                  static_cast<Eigen::Index>(m.cols()));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    return svd.singularValues()(0);
}

inline double eps_for(double lambda, std::size_t num_pos) {
    const double a = 1.0 + lambda * std::sqrt(static_cast<double>(num_pos));
    return a * a - 1.0;
}

/// Rank-one R = lambda v v^T / ||v||^2: sigma_max(R) = lambda and ||x^ - v|| = lambda ||v|| for v >= 0.
inline DenseMatrix make_tight_residual(std::span<const double> v, double lambda) {
    const std::size_t D = v.size();
    DenseMatrix R(D, D);
    const double n2 = dot(v, v);
    if (n2 == 0.0) return R;
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) R(i, j) = lambda * v[i] * v[j] / n2;
    return R;
}

/// Gaussian matrix rescaled so that its largest singular value is exactly `sigma`.
inline DenseMatrix random_residual(std::size_t D, double sigma, Rng& rng) {
    DenseMatrix R(D, D);
    std::normal_distribution<double> g;
    std::mt19937_64 eng(rng.next());
    for (auto& x : R.data()) x = g(eng);
    const double s = sigma_max_exact(R);
    if (s > 0.0) R *= sigma / s;
    return R;
}

struct FeatureBoundRow {
    std::uint32_t point = 0;
    double lambda = 0.0;
    double norm_v = 0.0;
    double gap = 0.0;  // ||x^ - v||
    double margin = 0.0;  // lambda ||v|| - gap
};

struct CosineBoundRow {
    std::uint32_t point = 0;
    LabelId label = 0;
    double lambda = 0.0;
    std::size_t num_pos = 0;
    double eps = 0.0;
    double feature_ratio = 0.0;  // ||x^ - v|| / ||v||
    double cos_v = 0.0;          // C(v, mu0)
    double cos_xhat = 0.0;       // C(x^, mu)
    double lower_margin = 0.0;   // C(x^, mu) - C(v, mu0) / (1 + eps)
    double upper_margin = 0.0;   // C(v, mu0) + eps - C(x^, mu)
    bool excluded = false;       // a zero vector makes the cosine undefined
};

struct IntermediateBoundRow {
    LabelId label = 0;
    std::uint32_t point = 0;
    double lambda = 0.0;
    std::size_t num_pos = 0;
    // Each margin is (right side - left side) of one inequality and must be >= -slack.
    double mu_gap_margin = 0.0;      // lambda sqrt|P| ||mu0|| - ||mu - mu0||
    double mu_upper_margin = 0.0;    // (1 + lambda sqrt|P|) ||mu0|| - ||mu||
    double mu_lower_margin = 0.0;    // ||mu|| - ||mu0||
    double x_upper_margin = 0.0;     // (1 + lambda) ||v|| - ||x^||
    double x_lower_margin = 0.0;     // ||x^|| - ||v||
    double inner_margin = 0.0;       // x^.mu - v.mu0

    [[nodiscard]] double min_margin() const {
        return std::min({mu_gap_margin, mu_upper_margin, mu_lower_margin, x_upper_margin, x_lower_margin, inner_margin});
    }
};

inline nlohmann::json to_json(const FeatureBoundRow& r) {
    return {{"kind", "feature"}, {"point", r.point}, {"lambda", r.lambda}, {"norm_v", r.norm_v}, {"gap", r.gap}, {"margin", r.margin}};
}

inline nlohmann::json to_json(const CosineBoundRow& r) {
    return {{"kind", "cosine"},          {"point", r.point},        {"label", r.label},
            {"lambda", r.lambda},        {"num_pos", r.num_pos},    {"eps", r.eps},
            {"feature_ratio", r.feature_ratio}, {"cos_v", r.cos_v}, {"cos_xhat", r.cos_xhat},
            {"lower_margin", r.lower_margin},   {"upper_margin", r.upper_margin}, {"excluded", r.excluded}};
}

inline nlohmann::json to_json(const IntermediateBoundRow& r) {
    return {{"kind", "intermediate"},         {"label", r.label},
            {"point", r.point},               {"lambda", r.lambda},
            {"num_pos", r.num_pos},           {"mu_gap_margin", r.mu_gap_margin},
            {"mu_upper_margin", r.mu_upper_margin}, {"mu_lower_margin", r.mu_lower_margin},
            {"x_upper_margin", r.x_upper_margin},   {"x_lower_margin", r.x_lower_margin},
            {"inner_margin", r.inner_margin}};
}

inline void require_nonnegative(std::span<const double> v) {
    for (double x : v)
        if (x < 0.0) throw Error(ErrorCode::InvalidParam, "intermediate features must be elementwise nonnegative");
}

/// One query v against a label with intermediate positives `pos` (rows of a matrix).
struct BoundInstance {
    const DenseMatrix* R = nullptr;
    double lambda = 0.0;
    std::span<const double> v;
    std::vector<std::span<const double>> pos;
};

inline FeatureBoundRow feature_bound_row(const DenseMatrix& R, double lambda, std::span<const double> v) {
    ResidualBlock b;
    b.R = R;
    const auto xh = residual_forward(v, b);
    double gap2 = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) gap2 += (xh[k] - v[k]) * (xh[k] - v[k]);
    FeatureBoundRow r;
    r.lambda = lambda;
    r.norm_v = norm2(v);
    r.gap = std::sqrt(gap2);
    r.margin = lambda * r.norm_v - r.gap;
    return r;
}

/// Evaluates both the end-to-end cosine bounds and the lemma-level inequalities.
inline std::pair<CosineBoundRow, IntermediateBoundRow> bound_rows(const BoundInstance& in) {
    const std::size_t D = in.v.size();
    require_nonnegative(in.v);
    ResidualBlock b;
    b.R = *in.R;
    const auto xh = residual_forward(in.v, b);
    std::vector<double> mu0(D, 0.0), mu(D, 0.0);
    for (auto p : in.pos) {
        require_nonnegative(p);
        axpy(1.0, p, mu0);
        axpy(1.0, residual_forward(p, b), mu);
    }
    const double P = static_cast<double>(in.pos.size());
    if (P > 0)
        for (std::size_t k = 0; k < D; ++k) {
            mu0[k] /= P;
            mu[k] /= P;
        }
    CosineBoundRow c;
    c.lambda = in.lambda;
    c.num_pos = in.pos.size();
    c.eps = eps_for(in.lambda, c.num_pos);
    const double nv = norm2(in.v), nx = norm2(xh), nm0 = norm2(mu0), nm = norm2(mu);
    double gap2 = 0.0, mgap2 = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
        gap2 += (xh[k] - in.v[k]) * (xh[k] - in.v[k]);
        mgap2 += (mu[k] - mu0[k]) * (mu[k] - mu0[k]);
    }
    c.excluded = nv == 0.0 || nm0 == 0.0;
    c.feature_ratio = nv > 0.0 ? std::sqrt(gap2) / nv : 0.0;
    c.cos_v = cosine(in.v, mu0);
    c.cos_xhat = cosine(xh, mu);
    c.lower_margin = c.excluded ? 0.0 : c.cos_xhat - c.cos_v / (1.0 + c.eps);
    c.upper_margin = c.excluded ? 0.0 : c.cos_v + c.eps - c.cos_xhat;

    IntermediateBoundRow m;
    m.lambda = in.lambda;
    m.num_pos = in.pos.size();
    const double sq = std::sqrt(P);
    m.mu_gap_margin = in.lambda * sq * nm0 - std::sqrt(mgap2);
    m.mu_upper_margin = (1.0 + in.lambda * sq) * nm0 - nm;
    m.mu_lower_margin = nm - nm0;
    m.x_upper_margin = (1.0 + in.lambda) * nv - nx;
    m.x_lower_margin = nx - nv;
    m.inner_margin = dot(xh, mu) - dot(in.v, mu0);
    return {c, m};
}

/// Lambda for a trained block: the configured budget, or the exact spectral norm when larger.
inline double effective_lambda(const ResidualBlock& b) { return std::max(b.lambda, sigma_max_exact(b.R)); }

inline void require_spectral(const DenseMatrix& R, double lambda) {
    const double s = sigma_max_exact(R);
    if (s > lambda + kBoundSlack)
        throw Error(ErrorCode::BoundViolated, "sigma_max(R) = " + std::to_string(s) + " exceeds lambda = " + std::to_string(lambda));
}

/// ||x^_i - v_i|| <= lambda ||v_i|| for each point of `ids`.
inline std::vector<FeatureBoundRow> check_feature_bound(const FeatureClassifier& m, double lambda, const Dataset& d,
                                                        std::span<const std::uint32_t> ids) {
    require_spectral(m.R.R, lambda);
    std::vector<FeatureBoundRow> rows;
    for (auto i : ids) {
        const auto v = embed_bag(d.features[i], m.E);
        auto r = feature_bound_row(m.R.R, lambda, v);
        r.point = i;
        if (r.margin < -kBoundSlack)
            throw Error(ErrorCode::BoundViolated, "feature bound fails at point " + std::to_string(i) + " by " + std::to_string(-r.margin));
        rows.push_back(r);
    }
    return rows;
}

namespace detail {

inline std::vector<std::pair<CosineBoundRow, IntermediateBoundRow>> label_bound_rows(const FeatureClassifier& m, double lambda,
                                                                                     const Dataset& d, std::span<const LabelId> labels,
                                                                                     std::span<const std::uint32_t> points) {
    require_spectral(m.R.R, lambda);
    const auto l2p = d.label_to_points();
    std::vector<std::vector<double>> v(d.num_points);
    auto vec = [&](std::uint32_t i) -> const std::vector<double>& {
        if (v[i].empty()) v[i] = embed_bag(d.features[i], m.E);
        return v[i];
    };
    std::vector<std::pair<CosineBoundRow, IntermediateBoundRow>> out;
    for (LabelId l : labels) {
        if (l >= d.num_labels) throw Error(ErrorCode::IndexOutOfRange, "label " + std::to_string(l), 0, l);
        if (l2p[l].empty()) continue;
        BoundInstance in;
        in.R = &m.R.R;
        in.lambda = lambda;
        for (auto i : l2p[l]) in.pos.emplace_back(vec(i));
        for (auto i : points) {
            in.v = vec(i);
            auto rows = bound_rows(in);
            rows.first.point = rows.second.point = i;
            rows.first.label = rows.second.label = l;
            out.push_back(rows);
        }
    }
    return out;
}

}  // namespace detail

/// Two-sided cosine bound for every (point, label) pair.
inline std::vector<CosineBoundRow> check_cosine_bounds(const FeatureClassifier& m, double lambda, const Dataset& d,
                                                       std::span<const LabelId> labels, std::span<const std::uint32_t> points) {
    std::vector<CosineBoundRow> out;
    for (auto& [c, _] : detail::label_bound_rows(m, lambda, d, labels, points)) {
        if (!c.excluded && (c.lower_margin < -kBoundSlack || c.upper_margin < -kBoundSlack))
            throw Error(ErrorCode::BoundViolated, "cosine bound fails at point " + std::to_string(c.point) + ", label " +
                                                      std::to_string(c.label));
        out.push_back(c);
    }
    return out;
}

/// Lemma-level inequalities for every (point, label) pair.
inline std::vector<IntermediateBoundRow> check_intermediate_bounds(const FeatureClassifier& m, double lambda, const Dataset& d,
                                                                   std::span<const LabelId> labels,
                                                                   std::span<const std::uint32_t> points) {
    std::vector<IntermediateBoundRow> out;
    for (auto& [_, r] : detail::label_bound_rows(m, lambda, d, labels, points)) {
        if (r.min_margin() < -kBoundSlack)
            throw Error(ErrorCode::BoundViolated, "intermediate bound fails at point " + std::to_string(r.point) + ", label " +
                                                      std::to_string(r.label));
        out.push_back(r);
    }
    return out;
}

struct RandomSuiteConfig {
    std::size_t instances = 100000;
    std::vector<double> lambdas{0.1, 0.3, 0.5, 1.0};
    std::size_t max_dim = 8;
    std::size_t max_pos = 8;
    std::uint64_t seed = 1;
};

struct RandomSuiteReport {
    std::size_t instances = 0;
    std::size_t excluded = 0;
    std::size_t feature_violations = 0;
    std::size_t cosine_violations = 0;
    std::size_t intermediate_violations = 0;
    double min_feature_margin = std::numeric_limits<double>::infinity();
    double min_cosine_margin = std::numeric_limits<double>::infinity();
    double min_intermediate_margin = std::numeric_limits<double>::infinity();
    double max_tight_gap = 0.0;  // | ||x^ - v|| - lambda ||v|| | over equality witnesses

    [[nodiscard]] std::size_t violations() const noexcept {
        return feature_violations + cosine_violations + intermediate_violations;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"kind", "random_suite"},
                {"instances", instances},
                {"excluded", excluded},
                {"feature_violations", feature_violations},
                {"cosine_violations", cosine_violations},
                {"intermediate_violations", intermediate_violations},
                {"min_feature_margin", min_feature_margin},
                {"min_cosine_margin", min_cosine_margin},
                {"min_intermediate_margin", min_intermediate_margin},
                {"max_tight_gap", max_tight_gap}};
    }
};

/// Randomized falsification over (R, v, P_l) with sigma_max(R) <= lambda. Every fourth instance
/// uses the rank-one equality witness; the rest draw sigma uniformly in (0, lambda].
inline RandomSuiteReport run_random_suite(const RandomSuiteConfig& cfg) {
    if (cfg.lambdas.empty() || cfg.max_dim < 1 || cfg.max_pos < 1) throw Error(ErrorCode::InvalidParam, "empty random suite");
    RandomSuiteReport rep;
    Rng rng(cfg.seed);
    std::normal_distribution<double> g;
    std::mt19937_64 eng(rng.next());
    auto nonneg = [&](std::size_t D) {
        std::vector<double> v(D);
        const double sparsity = 0.6 * rng.uniform();
        for (auto& x : v) x = rng.uniform() < sparsity ? 0.0 : std::abs(g(eng)) * std::exp(2.0 * g(eng));
        // an all-zero vector is kept in 2% of draws
        if (rng.uniform() >= 0.02 && std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
            v[rng.index(D)] = std::abs(g(eng)) + 1e-3;
        return v;
    };
    for (std::size_t n = 0; n < cfg.instances; ++n) {
        const double lambda = cfg.lambdas[n % cfg.lambdas.size()];
        const std::size_t D = 1 + rng.index(cfg.max_dim);
        const std::size_t P = 1 + rng.index(cfg.max_pos);
        std::vector<std::vector<double>> pos;
        for (std::size_t k = 0; k < P; ++k) pos.push_back(nonneg(D));
        auto v = rng.uniform() < 0.25 ? pos[rng.index(P)] : nonneg(D);
        const bool tight = n % 4 == 3;
        DenseMatrix R = tight ? make_tight_residual(v, lambda) : random_residual(D, lambda * (1.0 - rng.uniform()), rng);
        BoundInstance in;
        in.R = &R;
        in.lambda = lambda;
        in.v = v;
        for (const auto& p : pos) in.pos.emplace_back(p);
        const auto f = feature_bound_row(R, lambda, v);
        const auto [c, m] = bound_rows(in);
        ++rep.instances;
        rep.min_feature_margin = std::min(rep.min_feature_margin, f.margin);
        if (f.margin < -kBoundSlack) ++rep.feature_violations;
        if (tight) rep.max_tight_gap = std::max(rep.max_tight_gap, std::abs(f.gap - lambda * f.norm_v));
        if (c.excluded) {
            ++rep.excluded;
        } else {
            const double cm = std::min(c.lower_margin, c.upper_margin);
            rep.min_cosine_margin = std::min(rep.min_cosine_margin, cm);
            if (cm < -kBoundSlack) ++rep.cosine_violations;
        }
        rep.min_intermediate_margin = std::min(rep.min_intermediate_margin, m.min_margin());
        if (m.min_margin() < -kBoundSlack) ++rep.intermediate_violations;
    }
    return rep;
}

struct OverlapPoint {
    double lambda = 0.0;
    double overlap = 0.0;
    double sigma = 0.0;
};

struct OverlapConfig {
    AnnsConfig anns;
    ShortlistCaps caps{300, 300, 0, 500};
    ExtremeConfig extreme;
    std::size_t threads = 1;
    std::uint64_t seed = 1;
};

/// For each lambda: train R (E frozen) on shortlists built from v, then compare shortlists built
/// from v against shortlists built from x^ (each with its own indices). lambda = 0 keeps R = 0.
inline std::vector<OverlapPoint> shortlist_overlap_vs_lambda(const Dataset& d, const EmbeddingBank& E, std::span<const double> lambdas,
                                                             const OverlapConfig& cfg) {
    const auto cv = embed_corpus(d, E, nullptr, cfg.threads);
    const auto idx_v = build_negative_index(d, cv, cfg.anns, cfg.seed);
    const auto sl_v = build_shortlists(d, cv, idx_v, cfg.caps, cfg.anns, ShortlistMode::Training, true, cfg.seed, cfg.threads);
    const auto negatives = sl_v.label_sets();
    std::vector<OverlapPoint> out;
    for (double lambda : lambdas) {
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::InvalidParam, "lambda must lie in [0, 1]");
        ResidualBlock R = ResidualBlock::zeros(E.dim(), lambda);
        if (lambda > 0.0) {
            ExtremeConfig ec = cfg.extreme;
            ec.train.lambda = lambda;
            ec.fine_tune_E = false;
            ec.freeze_R = false;
            R = train_extreme(d, E, negatives, ec).model.R;
        }
        const auto cx = embed_corpus(d, E, &R, cfg.threads);
        const auto idx_x = build_negative_index(d, cx, cfg.anns, cfg.seed);
        const auto sl_x = build_shortlists(d, cx, idx_x, cfg.caps, cfg.anns, ShortlistMode::Training, true, cfg.seed, cfg.threads);
        out.push_back({lambda, shortlist_overlap(sl_v, sl_x), sigma_max_exact(R.R)});
    }
    return out;
}

}  // namespace astec
