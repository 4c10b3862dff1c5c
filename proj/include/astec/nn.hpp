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

// Feature architecture and its training primitives:
//
//     v  = ReLU(sum_t x_t e_t)          embedding bag
//     x^ = v + ReLU(R v)                 residual block, ||R||_op <= lambda
//     l  = sum_l log(1 + exp(-y_l w_l.x^))
//
// Gradients are derived by hand; the ReLU subgradient at 0 is 0.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "astec/error.hpp"
#include "astec/linalg.hpp"
#include "astec/types.hpp"
#include "astec/util.hpp"

namespace astec {

/// Token embeddings, stored token-major (row t is e_t) for cache-friendly bags.
struct EmbeddingBank {
    DenseMatrix table;  // V x D

    [[nodiscard]] std::size_t dim() const noexcept { return table.cols(); }
    [[nodiscard]] std::size_t vocab() const noexcept { return table.rows(); }
    /// Logical shape (D, V).
    [[nodiscard]] std::pair<std::size_t, std::size_t> shape() const noexcept { return {dim(), vocab()}; }
};

/// Residual matrix with its spectral budget and cached power-iteration vectors.
struct ResidualBlock {
    DenseMatrix R;
    double lambda = 0.5;
    std::vector<double> u, v;
    double sigma_estimate = 0.0;  // power-iteration sigma_max of R after the last projection

    static ResidualBlock zeros(std::size_t dim, double lambda) {
        ResidualBlock b;
        b.R = DenseMatrix(dim, dim);
        b.lambda = lambda;
        return b;
    }
    [[nodiscard]] std::size_t dim() const noexcept { return R.rows(); }
};

/// Per-label linear scorers, stored label-major (row l is w_l).
struct ClassifierBank {
    DenseMatrix weights;  // K x D

    [[nodiscard]] std::size_t num_labels() const noexcept { return weights.rows(); }
    [[nodiscard]] std::size_t dim() const noexcept { return weights.cols(); }
};

inline double sigmoid(double z) noexcept {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) noexcept { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

inline void relu_inplace(std::span<double> v) noexcept {
    for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

inline EmbeddingBank random_embeddings(std::size_t vocab, std::size_t dim, std::uint64_t seed) {
    if (dim < 1) throw Error(ErrorCode::InvalidParam, "embedding dim must be >= 1");
    EmbeddingBank E{DenseMatrix(vocab, dim)};
    Rng rng(seed);
    const double a = 1.0 / std::sqrt(static_cast<double>(dim));
    for (auto& x : E.table.data()) x = rng.uniform(-a, a);
    return E;
}

/// Xavier/Glorot uniform: U(-sqrt(6/(fan_in+fan_out)), +...).
inline ClassifierBank xavier_classifiers(std::size_t num_labels, std::size_t dim, std::uint64_t seed) {
    ClassifierBank W{DenseMatrix(num_labels, dim)};
    Rng rng(seed);
    const double a = std::sqrt(6.0 / static_cast<double>(num_labels + dim));
    for (auto& x : W.weights.data()) x = rng.uniform(-a, a);
    return W;
}

/// sum_t x_t e_t, before the ReLU.
inline std::vector<double> embed_pre(const SparseVector& x, const EmbeddingBank& E) {
    std::vector<double> out(E.dim(), 0.0);
    for (std::size_t k = 0; k < x.nnz(); ++k) {
        const auto t = x.indices[k];
        if (t >= E.vocab()) throw Error(ErrorCode::IndexOutOfRange, "token " + std::to_string(t), 0, t);
        axpy(x.values[k], E.table.row(t), out);
    }
    return out;
}

inline std::vector<double> embed_bag(const SparseVector& x, const EmbeddingBank& E) {
    auto v = embed_pre(x, E);
    relu_inplace(v);
    return v;
}

/// x^ = v + ReLU(R v).
inline std::vector<double> residual_forward(std::span<const double> v, const ResidualBlock& block) {
    auto r = matvec(block.R, v);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = v[i] + (r[i] > 0.0 ? r[i] : 0.0);
    return r;
}

struct PowerIterationOptions {
    std::size_t min_iters = 1;
    std::size_t max_iters = 1000;
    double rel_tol = 1e-10;
};

/// Estimate sigma_max(R) by power iteration warm-started from the cached (u, v),
/// and rescale R onto the ball ||R||_op <= lambda when the estimate exceeds it.
/// Returns the estimate taken before rescaling.
inline double project_spectral(ResidualBlock& block, const PowerIterationOptions& opt = {}) {
    const std::size_t D = block.dim();
    if (block.v.size() != D) {
        Rng rng(derive_seed(0x5bec, D));
        block.v.assign(D, 0.0);
        for (auto& x : block.v) x = rng.uniform(-1.0, 1.0);
        normalize(block.v);
        block.u.assign(D, 0.0);
    }
    double sigma = 0.0, prev = -1.0;
    for (std::size_t it = 0; it < opt.max_iters; ++it) {
        auto u = matvec(block.R, block.v);
        if (normalize(u) == 0.0) {
            sigma = 0.0;
            break;
        }
        auto v = matvec_t(block.R, u);
        sigma = normalize(v);
        block.u = std::move(u);
        block.v = std::move(v);
        if (it + 1 >= opt.min_iters && std::abs(sigma - prev) <= opt.rel_tol * sigma) break;
        prev = sigma;
    }
    block.sigma_estimate = std::min(sigma, block.lambda);
    if (sigma > block.lambda) block.R *= block.lambda / sigma;
    return sigma;
}

/// Converge the cached singular vectors before training starts.
inline void warm_up_power_iteration(ResidualBlock& block, std::size_t iters = 50) {
    PowerIterationOptions opt;
    opt.min_iters = iters;
    opt.max_iters = iters;
    project_spectral(block, opt);
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout mask: 0 or 1/(1-p) per coordinate. Empty means identity.
struct DropoutMask {
    std::vector<double> scale;
    [[nodiscard]] bool identity() const noexcept { return scale.empty(); }
};

inline DropoutMask make_dropout_mask(std::size_t dim, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidParam, "dropout p must lie in [0,1)");
    if (p == 0.0) return {};
    DropoutMask m;
    m.scale.resize(dim);
    const double keep = 1.0 / (1.0 - p);
    for (auto& s : m.scale) s = rng.uniform() < p ? 0.0 : keep;
    return m;
}

inline void apply_mask(std::span<double> v, const DropoutMask& m) noexcept {
    if (m.identity()) return;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= m.scale[i];
}

/// Training mode zeroes each coordinate with probability p and rescales the
/// survivors by 1/(1-p); inference mode is the identity.
inline std::vector<double> apply_dropout(std::span<const double> v, double p, Rng& rng, bool training) {
    if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidParam, "dropout p must lie in [0,1)");
    std::vector<double> out(v.begin(), v.end());
    if (training) apply_mask(out, make_dropout_mask(v.size(), p, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

/// Intermediate activations of one point, kept for the backward pass.
struct FeatureForward {
    std::vector<double> pre;   // sum_t x_t e_t
    std::vector<double> v_d;   // dropout(ReLU(pre))
    std::vector<double> r;     // R v_d
    std::vector<double> xhat;  // v_d + dropout(ReLU(r))
};

inline FeatureForward forward_features(const SparseVector& x, const EmbeddingBank& E, const ResidualBlock& block,
                                       const DropoutMask& m1 = {}, const DropoutMask& m2 = {}) {
    FeatureForward f;
    f.pre = embed_pre(x, E);
    f.v_d = f.pre;
    relu_inplace(f.v_d);
    apply_mask(f.v_d, m1);
    f.r = matvec(block.R, f.v_d);
    f.xhat = f.r;
    relu_inplace(f.xhat);
    apply_mask(f.xhat, m2);
    for (std::size_t i = 0; i < f.xhat.size(); ++i) f.xhat[i] += f.v_d[i];
    return f;
}

/// Sparse row-gradient accumulator keyed by row id (label or token).
class RowAccumulator {
  public:
    RowAccumulator() = default;
    RowAccumulator(std::size_t num_rows, std::size_t dim) : dim_(dim), slot_(num_rows, -1) {}

    void add(std::uint32_t row, double scale, std::span<const double> g) {
        auto& s = slot_[row];
        if (s < 0) {
            s = static_cast<std::int64_t>(rows_.size());
            rows_.push_back(row);
            values_.resize(values_.size() + dim_, 0.0);
        }
        axpy(scale, g, {values_.data() + static_cast<std::size_t>(s) * dim_, dim_});
    }

    /// Make `row` present with a zero gradient (it counts as touched).
    void touch(std::uint32_t row) {
        if (slot_[row] < 0) {
            slot_[row] = static_cast<std::int64_t>(rows_.size());
            rows_.push_back(row);
            values_.resize(values_.size() + dim_, 0.0);
        }
    }

    void merge(const RowAccumulator& other) {
        for (std::size_t k = 0; k < other.rows_.size(); ++k) add(other.rows_[k], 1.0, other.grad(k));
    }

    void clear() {
        for (auto r : rows_) slot_[r] = -1;
        rows_.clear();
        values_.clear();
    }

    [[nodiscard]] std::size_t touched() const noexcept { return rows_.size(); }
    [[nodiscard]] std::uint32_t row_id(std::size_t k) const noexcept { return rows_[k]; }
    [[nodiscard]] std::span<const double> grad(std::size_t k) const noexcept { return {values_.data() + k * dim_, dim_}; }
    [[nodiscard]] const std::vector<std::uint32_t>& rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

    void scale_all(double s) noexcept {
        for (auto& v : values_) v *= s;
    }

  private:
    std::size_t dim_ = 0;
    std::vector<std::int64_t> slot_;
    std::vector<std::uint32_t> rows_;
    std::vector<double> values_;
};

/// Gradient sinks for one mini-batch.
struct GradAccumulator {
    double loss = 0.0;
    DenseMatrix grad_R;
    RowAccumulator grad_W;
    RowAccumulator grad_E;
    bool want_R = true;
    bool want_E = true;

    GradAccumulator() = default;
    GradAccumulator(std::size_t dim, std::size_t num_labels, std::size_t vocab, bool want_r, bool want_e)
        : grad_R(dim, dim), grad_W(num_labels, dim), grad_E(want_e ? vocab : 0, dim), want_R(want_r), want_E(want_e) {}

    void clear() {
        loss = 0.0;
        grad_R.fill(0.0);
        grad_W.clear();
        grad_E.clear();
    }

    void merge(const GradAccumulator& o) {
        loss += o.loss;
        for (std::size_t k = 0; k < grad_R.size(); ++k) grad_R.data()[k] += o.grad_R.data()[k];
        grad_W.merge(o.grad_W);
        if (want_E) grad_E.merge(o.grad_E);
    }
};

/// Add scale * d(loss)/d(params) of one point into `acc`; returns the point's loss.
/// Labels in `pos` take y = +1, labels in `neg` take y = -1.
inline double accumulate_point_grads(const SparseVector& x, const EmbeddingBank& E, const ResidualBlock& block,
                                     const ClassifierBank& W, std::span<const LabelId> pos, std::span<const LabelId> neg,
                                     const DropoutMask& m1, const DropoutMask& m2, double scale, GradAccumulator& acc) {
    const std::size_t D = E.dim();
    const FeatureForward f = forward_features(x, E, block, m1, m2);

    std::vector<double> g_xhat(D, 0.0);
    double loss = 0.0;
    auto visit = [&](LabelId l, double y) {
        const auto w = W.weights.row(l);
        const double z = dot(w, f.xhat);
        loss += softplus(-y * z);
        // d/dz softplus(-y z) = sigma(z) - [y = +1]
        const double dz = y > 0 ? -sigmoid(-z) : sigmoid(z);
        acc.grad_W.add(l, scale * dz, f.xhat);
        axpy(dz, w, g_xhat);
    };
    for (LabelId l : pos) visit(l, +1.0);
    for (LabelId l : neg) visit(l, -1.0);
    acc.loss += scale * loss;

    // residual path: xhat = v_d + m2 * relu(r), r = R v_d. relu'(0) is taken as 1 here so that
    // a zero-initialized R is not a stationary point.
    std::vector<double> g_r(D, 0.0);
    for (std::size_t i = 0; i < D; ++i) {
        const double s2 = m2.identity() ? 1.0 : m2.scale[i];
        g_r[i] = f.r[i] >= 0.0 ? g_xhat[i] * s2 : 0.0;
    }
    if (acc.want_R)
        for (std::size_t i = 0; i < D; ++i)
            if (g_r[i] != 0.0) axpy(scale * g_r[i], f.v_d, acc.grad_R.row(i));

    if (acc.want_E) {
        auto g_v = matvec_t(block.R, g_r);
        for (std::size_t i = 0; i < D; ++i) {
            const double s1 = m1.identity() ? 1.0 : m1.scale[i];
            g_v[i] = f.pre[i] > 0.0 ? (g_v[i] + g_xhat[i]) * s1 : 0.0;
        }
        for (std::size_t k = 0; k < x.nnz(); ++k) acc.grad_E.add(x.indices[k], scale * x.values[k], g_v);
    }
    return loss;
}

/// Loss and exact gradients for a single point, as separate dense/sparse pieces.
struct PointGradients {
    double loss = 0.0;
    DenseMatrix grad_R;
    std::vector<std::pair<LabelId, std::vector<double>>> grad_W;
    std::vector<std::pair<FeatureId, std::vector<double>>> grad_E;
};

inline PointGradients logistic_loss_and_grads(const SparseVector& x, const EmbeddingBank& E, const ResidualBlock& block,
                                              const ClassifierBank& W, std::span<const LabelId> pos,
                                              std::span<const LabelId> neg, const DropoutMask& m1 = {},
                                              const DropoutMask& m2 = {}) {
    for (LabelId l : pos)
        if (std::find(neg.begin(), neg.end(), l) != neg.end())
            throw Error(ErrorCode::InvalidParam, "label " + std::to_string(l) + " is both positive and negative");
    GradAccumulator acc(E.dim(), W.num_labels(), E.vocab(), true, true);
    PointGradients out;
    out.loss = accumulate_point_grads(x, E, block, W, pos, neg, m1, m2, 1.0, acc);
    out.grad_R = acc.grad_R;
    for (std::size_t k = 0; k < acc.grad_W.touched(); ++k) {
        auto g = acc.grad_W.grad(k);
        out.grad_W.emplace_back(acc.grad_W.row_id(k), std::vector<double>(g.begin(), g.end()));
    }
    for (std::size_t k = 0; k < acc.grad_E.touched(); ++k) {
        auto g = acc.grad_E.grad(k);
        out.grad_E.emplace_back(acc.grad_E.row_id(k), std::vector<double>(g.begin(), g.end()));
    }
    return out;
}

/// Loss only (no gradients), same forward as training.
inline double logistic_loss(const SparseVector& x, const EmbeddingBank& E, const ResidualBlock& block, const ClassifierBank& W,
                            std::span<const LabelId> pos, std::span<const LabelId> neg, const DropoutMask& m1 = {},
                            const DropoutMask& m2 = {}) {
    const auto f = forward_features(x, E, block, m1, m2);
    double loss = 0.0;
    for (LabelId l : pos) loss += softplus(-dot(W.weights.row(l), f.xhat));
    for (LabelId l : neg) loss += softplus(dot(W.weights.row(l), f.xhat));
    return loss;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t t = 0;
};

/// Bias-corrected Adam on a dense parameter array.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st, const AdamConfig& cfg) {
    if (grads.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "adam_step: grads vs params");
    if (st.m.empty()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    if (st.m.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "adam_step: state vs params");
    ++st.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        params[i] -= cfg.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + cfg.eps);
    }
}

/// Adam over the rows of a matrix where only rows with a gradient are updated.
/// Moments of untouched rows are not decayed; bias correction uses the global step.
class LazyRowAdam {
  public:
    LazyRowAdam() = default;
    LazyRowAdam(std::size_t rows, std::size_t dim) : dim_(dim), m_(rows * dim, 0.0), v_(rows * dim, 0.0) {}

    void step(DenseMatrix& params, const RowAccumulator& grads, const AdamConfig& cfg) {
        if (params.cols() != dim_ || params.size() != m_.size())
            throw Error(ErrorCode::ShapeMismatch, "LazyRowAdam: params shape");
        ++t_;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < grads.touched(); ++k) {
            const std::size_t base = static_cast<std::size_t>(grads.row_id(k)) * dim_;
            const auto g = grads.grad(k);
            auto p = params.row(grads.row_id(k));
            for (std::size_t j = 0; j < dim_; ++j) {
                double& m = m_[base + j];
                double& v = v_[base + j];
                m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[j];
                v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[j] * g[j];
                p[j] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
            }
        }
    }

    [[nodiscard]] std::uint64_t steps() const noexcept { return t_; }

  private:
    std::size_t dim_ = 0;
    std::vector<double> m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace astec
