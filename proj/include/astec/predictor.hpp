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

// Inference: ANNS shortlist, classifier scores fused with shortlist
// similarities and (optionally) re-ranker scores, then top-k.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "astec/extreme.hpp"
#include "astec/reranker.hpp"
#include "astec/sampler.hpp"

namespace astec {

struct PredictConfig {
    double alpha = 0.5;
    double beta = 0.7;
    std::size_t top_k = 5;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::ConfigError, "alpha must lie in [0, 1]");
        if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorCode::ConfigError, "beta must lie in [0, 1]");
        if (top_k < 1) throw Error(ErrorCode::ConfigError, "top_k must be >= 1");
    }
};

/// Everything needed at prediction time.
struct AstecModel {
    ExtremeModel base;
    NegativeIndex index;
    AnnsConfig anns;
    ShortlistCaps caps;
    std::optional<RerankerModel> reranker;
};

struct Prediction {
    std::vector<ScoredLabel> top;  // descending, ties by lower id
    std::size_t shortlist_size = 0;
    bool empty_document = false;
};

/// ybar_l = beta * yhat_l + (1 - beta) * ytilde_l with yhat_l = alpha*sigma(w.x^) + (1-alpha)*sigma(s);
/// beta is treated as 1 without a re-ranker, and ytilde_l = 0 for labels outside its coverage.
inline Prediction predict(const SparseVector& x, const AstecModel& m, const PredictConfig& cfg) {
    Prediction p;
    auto v = embed_bag(x, m.base.E);
    auto unit = v;
    if (normalize(unit) == 0.0) {
        p.empty_document = true;
        return p;
    }
    const auto xh = residual_forward(v, m.base.R);
    ShortlistCaps caps = m.caps;
    caps.random = 0;
    Rng unused(0);
    const auto sl = shortlist_for(m.index, ShortlistQuery{unit, {}, -1, false}, caps, m.anns, unused);
    p.shortlist_size = sl.size();
    std::vector<double> xt;
    if (m.reranker) xt = residual_forward(embed_bag(x, m.reranker->model.E), m.reranker->model.R);
    std::vector<ScoredLabel> scored;
    scored.reserve(sl.size());
    for (const auto& e : sl) {
        double y = base_score(cfg.alpha, dot(m.base.W.weights.row(e.label), xh), e.score);
        if (m.reranker) {
            const double yt = m.reranker->covers(e.label) ? sigmoid(dot(m.reranker->model.W.weights.row(e.label), xt)) : 0.0;
            y = cfg.beta * y + (1.0 - cfg.beta) * yt;
        }
        scored.push_back({e.label, y});
    }
    const std::size_t k = std::min(cfg.top_k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), ranks_before);
    scored.resize(k);
    p.top = std::move(scored);
    return p;
}

struct LatencyReport {
    double mean_us = 0.0;
    double p50_us = 0.0;
    double p99_us = 0.0;
    std::size_t max_shortlist = 0;
    std::size_t cap = 0;
    bool cap_respected = true;
    std::size_t empty_documents = 0;
    std::size_t short_rows = 0;  // fewer than top_k entries
};

struct BatchPrediction {
    std::vector<Prediction> rows;
    LatencyReport latency;

    [[nodiscard]] ScoredRows to_scored_rows(std::size_t num_labels) const {
        ScoredRows s;
        s.num_labels = num_labels;
        for (const auto& r : rows) s.rows.push_back(r.top);
        return s;
    }
};

/// Value at quantile q of sorted samples (nearest rank).
inline double nearest_rank(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    r = std::clamp<std::size_t>(r, 1, sorted.size());
    return sorted[r - 1];
}

inline BatchPrediction predict_batch(std::span<const SparseVector> points, const AstecModel& m, const PredictConfig& cfg,
                                     std::size_t threads = 1) {
    cfg.validate();
    BatchPrediction out;
    out.rows.resize(points.size());
    std::vector<double> us(points.size(), 0.0);
    parallel_for(points.size(), threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t i = lo; i < hi; ++i) {
            Stopwatch sw;
            out.rows[i] = predict(points[i], m, cfg);
            us[i] = sw.us();
        }
    });
    auto& L = out.latency;
    L.cap = m.caps.total;
    for (const auto& r : out.rows) {
        L.max_shortlist = std::max(L.max_shortlist, r.shortlist_size);
        if (r.empty_document) ++L.empty_documents;
        if (r.top.size() < cfg.top_k) ++L.short_rows;
    }
    L.cap_respected = L.max_shortlist <= L.cap;
    if (!us.empty()) {
        double total = 0.0;
        for (double t : us) total += t;
        L.mean_us = total / static_cast<double>(us.size());
        std::sort(us.begin(), us.end());
        L.p50_us = nearest_rank(us, 0.50);
        L.p99_us = nearest_rank(us, 0.99);
    }
    return out;
}

/// Weighted per-label mean of member scores (a missing label scores 0), re-ranked to top_k.
inline ScoredRows ensemble_average(std::span<const ScoredRows> members, std::span<const double> weights, std::size_t top_k) {
    if (members.empty()) throw Error(ErrorCode::InvalidParam, "ensemble needs at least one member");
    if (!weights.empty() && weights.size() != members.size()) throw Error(ErrorCode::InvalidParam, "one weight per member");
    const std::size_t L = members.front().num_labels, N = members.front().rows.size();
    for (const auto& mem : members) {
        if (mem.num_labels != L) throw Error(ErrorCode::LabelSpaceMismatch, "ensemble members disagree on the label space");
        if (mem.rows.size() != N) throw Error(ErrorCode::ShapeMismatch, "ensemble members disagree on the point count");
    }
    double wsum = 0.0;
    for (std::size_t j = 0; j < members.size(); ++j) wsum += weights.empty() ? 1.0 : weights[j];
    if (!(wsum > 0.0)) throw Error(ErrorCode::InvalidParam, "ensemble weights must sum to a positive value");
    ScoredRows out;
    out.num_labels = L;
    out.rows.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        std::map<LabelId, double> acc;
        for (std::size_t j = 0; j < members.size(); ++j) {
            const double w = weights.empty() ? 1.0 : weights[j];
            for (const auto& e : members[j].rows[i]) acc[e.label] += w * e.score;
        }
        std::vector<ScoredLabel> row;
        for (const auto& [l, s] : acc) row.push_back({l, s / wsum});
        const std::size_t k = std::min(top_k, row.size());
        std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end(), ranks_before);
        row.resize(k);
        out.rows[i] = std::move(row);
    }
    return out;
}

}  // namespace astec
