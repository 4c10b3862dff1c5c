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

// Ranking metrics for multi-label prediction: P@k, nDCG@k, their
// propensity-scored variants, recall@k and label-frequency quantiles.
// Positions are 1-based and logarithms are natural.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "astec/error.hpp"
#include "astec/types.hpp"
#include "astec/xc_format.hpp"

namespace astec {

struct PropensityModel {
    double A = 0.55;
    double B = 1.5;
    double C = 0.0;
    std::size_t num_points = 0;
    std::vector<double> p;  // per label
};

/// p_l = 1 / (1 + C exp(-A ln(N_l + B))), C = (ln N - 1)(B + 1)^A.
inline PropensityModel propensities(const Dataset& train, double A = 0.55, double B = 1.5) {
    if (!(A > 0.0) || !(B > 0.0)) throw Error(ErrorCode::InvalidParam, "propensity parameters A and B must be > 0");
    if (train.num_points < 1) throw Error(ErrorCode::InvalidParam, "propensities need at least one training point");
    PropensityModel m;
    m.A = A;
    m.B = B;
    m.num_points = train.num_points;
    m.C = (std::log(static_cast<double>(train.num_points)) - 1.0) * std::pow(B + 1.0, A);
    const auto freq = train.label_frequencies();
    m.p.resize(train.num_labels);
    for (std::size_t l = 0; l < train.num_labels; ++l)
        m.p[l] = 1.0 / (1.0 + m.C * std::exp(-A * std::log(static_cast<double>(freq[l]) + B)));
    return m;
}

/// First k entries of `row` by descending score, ties by lower label id.
inline std::vector<ScoredLabel> rank_k(std::span<const ScoredLabel> row, std::size_t k) {
    std::vector<ScoredLabel> r(row.begin(), row.end());
    std::sort(r.begin(), r.end(), ranks_before);
    if (r.size() > k) r.resize(k);
    return r;
}

namespace detail {

inline void require_k(std::size_t k) {
    if (k < 1) throw Error(ErrorCode::InvalidParam, "k must be >= 1");
}

inline double inv_p(const PropensityModel& prop, LabelId l) {
    if (l >= prop.p.size()) throw Error(ErrorCode::MissingPropensity, "no propensity for label " + std::to_string(l), 0, l);
    return 1.0 / prop.p[l];
}

}  // namespace detail

/// (1/k) sum_{top-k} y_l.
inline double precision_at_k(std::span<const ScoredLabel> row, std::span<const LabelId> truth, std::size_t k) {
    detail::require_k(k);
    double s = 0.0;
    for (const auto& e : rank_k(row, k))
        if (contains_sorted(truth, e.label)) s += 1.0;
    return s / static_cast<double>(k);
}

/// (1/k) sum_{r=1..k} y_(r) / ln(r + 1).
inline double dcg_at_k(std::span<const ScoredLabel> row, std::span<const LabelId> truth, std::size_t k) {
    detail::require_k(k);
    const auto top = rank_k(row, k);
    double s = 0.0;
    for (std::size_t r = 0; r < top.size(); ++r)
        if (contains_sorted(truth, top[r].label)) s += 1.0 / std::log(static_cast<double>(r) + 2.0);
    return s / static_cast<double>(k);
}

/// DCG@k / sum_{r=1..min(k, |y|)} 1 / ln(r + 1).
inline double ndcg_at_k(std::span<const ScoredLabel> row, std::span<const LabelId> truth, std::size_t k) {
    detail::require_k(k);
    const std::size_t m = std::min(k, truth.size());
    if (m == 0) return 0.0;
    double norm = 0.0;
    for (std::size_t r = 1; r <= m; ++r) norm += 1.0 / std::log(static_cast<double>(r) + 1.0);
    return dcg_at_k(row, truth, k) / norm;
}

/// Raw (1/k) sum_{top-k} y_l / p_l.
inline double psp_at_k(std::span<const ScoredLabel> row, std::span<const LabelId> truth, const PropensityModel& prop, std::size_t k) {
    detail::require_k(k);
    double s = 0.0;
    for (const auto& e : rank_k(row, k))
        if (contains_sorted(truth, e.label)) s += detail::inv_p(prop, e.label);
    return s / static_cast<double>(k);
}

/// Raw (1/k) sum_{r=1..k} y_(r) / (p_(r) ln(r + 1)).
inline double psdcg_at_k(std::span<const ScoredLabel> row, std::span<const LabelId> truth, const PropensityModel& prop,
                         std::size_t k) {
    detail::require_k(k);
    const auto top = rank_k(row, k);
    double s = 0.0;
    for (std::size_t r = 0; r < top.size(); ++r)
        if (contains_sorted(truth, top[r].label))
            s += detail::inv_p(prop, top[r].label) / std::log(static_cast<double>(r) + 2.0);
    return s / static_cast<double>(k);
}

/// PSDCG@k / sum_{r=1..k} 1 / ln(r + 1).
inline double psndcg_at_k(std::span<const ScoredLabel> row, std::span<const LabelId> truth, const PropensityModel& prop,
                          std::size_t k) {
    detail::require_k(k);
    double norm = 0.0;
    for (std::size_t r = 1; r <= k; ++r) norm += 1.0 / std::log(static_cast<double>(r) + 1.0);
    return psdcg_at_k(row, truth, prop, k) / norm;
}

/// The true labels ranked by 1/p_l (ties by lower id), scored as a prediction.
inline std::vector<ScoredLabel> ideal_propensity_ranking(std::span<const LabelId> truth, const PropensityModel& prop) {
    std::vector<ScoredLabel> r;
    for (LabelId l : truth) r.push_back({l, detail::inv_p(prop, l)});
    std::sort(r.begin(), r.end(), ranks_before);
    return r;
}

/// PSP@k divided by the PSP@k of the ideal ranking; 0 when there is nothing to find.
inline double psp_at_k_normalized(std::span<const ScoredLabel> row, std::span<const LabelId> truth, const PropensityModel& prop,
                                  std::size_t k) {
    const double ideal = psp_at_k(ideal_propensity_ranking(truth, prop), truth, prop, k);
    return ideal > 0.0 ? psp_at_k(row, truth, prop, k) / ideal : 0.0;
}

/// PSDCG@k divided by the PSDCG@k of the ideal ranking.
inline double psndcg_at_k_normalized(std::span<const ScoredLabel> row, std::span<const LabelId> truth, const PropensityModel& prop,
                                     std::size_t k) {
    const double ideal = psdcg_at_k(ideal_propensity_ranking(truth, prop), truth, prop, k);
    return ideal > 0.0 ? psdcg_at_k(row, truth, prop, k) / ideal : 0.0;
}

/// |top-k n y| / |y|.
inline double recall_at_k(std::span<const ScoredLabel> row, std::span<const LabelId> truth, std::size_t k) {
    detail::require_k(k);
    if (truth.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : rank_k(row, k))
        if (contains_sorted(truth, e.label)) s += 1.0;
    return s / static_cast<double>(truth.size());
}

/// Bin of every label when labels are sorted by descending training frequency (ties by id)
/// and cut into `bins` equal parts; bin 0 holds the most frequent labels.
inline std::vector<std::size_t> frequency_bins(std::span<const std::size_t> freq, std::size_t bins) {
    if (bins < 1) throw Error(ErrorCode::InvalidParam, "bins must be >= 1");
    const std::size_t L = freq.size();
    std::vector<LabelId> order(L);
    for (LabelId l = 0; l < L; ++l) order[l] = l;
    std::stable_sort(order.begin(), order.end(), [&](LabelId a, LabelId b) { return freq[a] > freq[b]; });
    std::vector<std::size_t> bin(L, 0);
    for (std::size_t r = 0; r < L; ++r) bin[order[r]] = r * bins / L;
    return bin;
}

inline void check_prediction_shape(const ScoredRows& pred, const Dataset& truth) {
    if (pred.rows.size() != truth.num_points)
        throw Error(ErrorCode::ShapeMismatch, "prediction has " + std::to_string(pred.rows.size()) + " rows, truth has " +
                                                  std::to_string(truth.num_points) + " points");
    if (pred.num_labels != truth.num_labels) throw Error(ErrorCode::LabelSpaceMismatch, "prediction and truth label counts differ");
}

/// Per-bin contribution to the dataset P@k; the bins sum to P@k.
inline std::vector<double> quantile_breakdown(const ScoredRows& pred, const Dataset& truth, const Dataset& train, std::size_t bins,
                                              std::size_t k = 5) {
    check_prediction_shape(pred, truth);
    const auto freq = train.label_frequencies();
    if (freq.size() != truth.num_labels) throw Error(ErrorCode::LabelSpaceMismatch, "train and truth label counts differ");
    const auto bin = frequency_bins(freq, bins);
    std::vector<double> out(bins, 0.0);
    std::size_t counted = 0;
    for (std::size_t i = 0; i < truth.num_points; ++i)
        if (!truth.labels[i].empty()) ++counted;
    if (counted == 0) return out;
    const double w = 1.0 / (static_cast<double>(k) * static_cast<double>(counted));
    for (std::size_t i = 0; i < truth.num_points; ++i) {
        if (truth.labels[i].empty()) continue;
        for (const auto& e : rank_k(pred.rows[i], k))
            if (contains_sorted(truth.labels[i], e.label)) out[bin[e.label]] += w;
    }
    return out;
}

struct MetricConfig {
    std::vector<std::size_t> ks{1, 3, 5};
    double A = 0.55;
    double B = 1.5;
    std::size_t bins = 5;
};

struct MetricReport {
    std::vector<std::size_t> ks;
    std::vector<double> P, N, PSP, PSN, PSP_raw, PSN_raw, R;
    std::vector<double> quantile_p5;
    std::size_t points_evaluated = 0;
    std::size_t points_without_labels = 0;

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        auto put = [&](const std::string& name, const std::vector<double>& vals) {
            for (std::size_t a = 0; a < ks.size(); ++a) j[name + "@" + std::to_string(ks[a])] = vals[a];
        };
        put("P", P);
        put("N", N);
        put("PSP", PSP);
        put("PSN", PSN);
        put("PSP_raw", PSP_raw);
        put("PSN_raw", PSN_raw);
        put("R", R);
        j["quantile_P@5"] = quantile_p5;
        j["points_evaluated"] = points_evaluated;
        j["points_without_labels"] = points_without_labels;
        return j;
    }
};

/// Dataset means over points with at least one true label.
inline MetricReport evaluate(const ScoredRows& pred, const Dataset& truth, const Dataset& train, const MetricConfig& cfg = {}) {
    check_prediction_shape(pred, truth);
    if (train.num_labels != truth.num_labels) throw Error(ErrorCode::MissingPropensity, "train label space does not cover truth");
    for (auto k : cfg.ks) detail::require_k(k);
    const auto prop = propensities(train, cfg.A, cfg.B);
    MetricReport r;
    r.ks = cfg.ks;
    const std::size_t nk = cfg.ks.size();
    for (auto* v : {&r.P, &r.N, &r.PSP, &r.PSN, &r.PSP_raw, &r.PSN_raw, &r.R}) v->assign(nk, 0.0);
    for (std::size_t i = 0; i < truth.num_points; ++i) {
        const auto& y = truth.labels[i];
        if (y.empty()) {
            ++r.points_without_labels;
            continue;
        }
        ++r.points_evaluated;
        const auto& row = pred.rows[i];
        for (std::size_t a = 0; a < nk; ++a) {
            const auto k = cfg.ks[a];
            r.P[a] += precision_at_k(row, y, k);
            r.N[a] += ndcg_at_k(row, y, k);
            r.PSP[a] += psp_at_k_normalized(row, y, prop, k);
            r.PSN[a] += psndcg_at_k_normalized(row, y, prop, k);
            r.PSP_raw[a] += psp_at_k(row, y, prop, k);
            r.PSN_raw[a] += psndcg_at_k(row, y, prop, k);
            r.R[a] += recall_at_k(row, y, k);
        }
    }
    if (r.points_evaluated > 0) {
        const double n = static_cast<double>(r.points_evaluated);
        for (auto* v : {&r.P, &r.N, &r.PSP, &r.PSN, &r.PSP_raw, &r.PSN_raw, &r.R})
            for (auto& x : *v) x /= n;
    }
    r.quantile_p5 = quantile_breakdown(pred, truth, train, cfg.bins, 5);
    return r;
}

}  // namespace astec
