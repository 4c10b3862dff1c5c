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

// Extreme-task training: the residual block and the full 1-vs-all classifier
// bank, restricted per point to positives plus shortlisted negatives.

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "astec/nn.hpp"
#include "astec/sampler.hpp"
#include "astec/trainer.hpp"
#include "astec/xast.hpp"

namespace astec {

struct ExtremeConfig {
    TrainConfig train;
    bool fine_tune_E = false;
    bool freeze_R = false;
    double alpha = 0.5;  // fusion weight used for held-out P@1
};

using ExtremeModel = FeatureClassifier;

struct ExtremeResult {
    ExtremeModel model;
    std::vector<EpochLog> log;
};

/// alpha * sigma(w.x^) + (1 - alpha) * sigma(s).
inline double base_score(double alpha, double z, double s) noexcept { return alpha * sigmoid(z) + (1.0 - alpha) * sigmoid(s); }

/// Fraction of points (with labels) whose best-scoring shortlist entry is positive.
inline double shortlist_precision_at_1(const Dataset& d, const FeatureClassifier& m, const Shortlist& sl, double alpha,
                                       std::span<const std::uint32_t> ids) {
    std::size_t hits = 0, counted = 0;
    for (auto i : ids) {
        if (d.labels[i].empty()) continue;
        ++counted;
        const auto xh = residual_forward(embed_bag(d.features[i], m.E), m.R);
        ScoredLabel best{0, -1.0};
        bool any = false;
        for (const auto& e : sl.rows[i]) {
            ScoredLabel c{e.label, base_score(alpha, dot(m.W.weights.row(e.label), xh), e.score)};
            if (!any || ranks_before(c, best)) best = c;
            any = true;
        }
        if (any && contains_sorted(d.labels[i], best.label)) ++hits;
    }
    return counted ? static_cast<double>(hits) / static_cast<double>(counted) : 0.0;
}

/// Minimize sum_i sum_{l in P_i u N_i} log(1 + exp(-y_il w_l.x^_i)) with ||R||_op <= lambda.
/// `negatives` holds N_i (sorted) for every point; `eval` supplies prediction-mode rows for held-out P@1.
inline ExtremeResult train_extreme(const Dataset& d, const EmbeddingBank& E, const std::vector<std::vector<LabelId>>& negatives,
                                   const ExtremeConfig& cfg, const Shortlist* eval = nullptr, const StepCallback& on_step = {},
                                   const ClassifierBank* init_W = nullptr) {
    cfg.train.validate();
    if (negatives.size() != d.num_points)
        throw Error(ErrorCode::MissingShortlist, "shortlist covers " + std::to_string(negatives.size()) + " of " +
                                                     std::to_string(d.num_points) + " points");
    if (E.vocab() != d.num_features) throw Error(ErrorCode::DimMismatch, "embedding vocabulary vs dataset features");
    ExtremeResult out;
    auto& m = out.model;
    m.E = E;
    m.R = ResidualBlock::zeros(E.dim(), cfg.train.lambda);
    m.W = init_W ? *init_W : xavier_classifiers(d.num_labels, E.dim(), derive_seed(cfg.train.seed, 0x5a));
    if (m.W.num_labels() != d.num_labels || m.W.dim() != E.dim()) throw Error(ErrorCode::ShapeMismatch, "initial classifiers");

    auto [train_ids, held_ids] = heldout_split(d.num_points, cfg.train.heldout_fraction, cfg.train.seed);
    TrainConfig tc = cfg.train;
    tc.train_E = cfg.fine_tune_E;
    tc.train_R = !cfg.freeze_R;
    HeldoutEvaluator evaluate;
    if (eval) {
        if (eval->size() != d.num_points) throw Error(ErrorCode::MissingShortlist, "evaluation shortlist rows vs points");
        evaluate = [&](const FeatureClassifier& fc, std::span<const std::uint32_t> ids) {
            return shortlist_precision_at_1(d, fc, *eval, cfg.alpha, ids);
        };
    }
    out.log = train_feature_classifier(d, LabelSets{d.labels, &negatives}, m, tc, train_ids, held_ids, evaluate, on_step);
    return out;
}

struct CostAudit {
    std::size_t max_touched_per_point = 0;
    std::size_t max_touched_per_batch = 0;
    std::size_t bound = 0;  // shortlist cap + max |P_i|
    bool pass = false;
};

/// Checks max_i |S_i| <= cap + max_i |P_i| over every logged epoch.
inline CostAudit per_step_cost_audit(std::span<const EpochLog> log, std::size_t shortlist_cap, std::size_t max_positives) {
    CostAudit a;
    for (const auto& e : log) {
        a.max_touched_per_point = std::max(a.max_touched_per_point, e.max_labels_per_point);
        a.max_touched_per_batch = std::max(a.max_touched_per_batch, e.max_labels_per_batch);
    }
    a.bound = shortlist_cap + max_positives;
    a.pass = a.max_touched_per_point <= a.bound;
    return a;
}

inline void save_feature_classifier(xast::Container& c, const std::string& prefix, const FeatureClassifier& m) {
    c.put_matrix(prefix + ".E", m.E.table);
    c.put_matrix(prefix + ".R", m.R.R);
    c.put_scalar(prefix + ".lambda", m.R.lambda);
    c.put_vector<double>(prefix + ".u", m.R.u);
    c.put_vector<double>(prefix + ".v", m.R.v);
    c.put_scalar(prefix + ".sigma", m.R.sigma_estimate);
    c.put_matrix(prefix + ".W", m.W.weights);
}

inline FeatureClassifier load_feature_classifier(const xast::Container& c, const std::string& prefix) {
    FeatureClassifier m;
    m.E.table = c.get_matrix(prefix + ".E");
    m.R.R = c.get_matrix(prefix + ".R");
    m.R.lambda = c.get_scalar(prefix + ".lambda");
    m.R.u = c.get<double>(prefix + ".u");
    m.R.v = c.get<double>(prefix + ".v");
    m.R.sigma_estimate = c.get_scalar(prefix + ".sigma");
    m.W.weights = c.get_matrix(prefix + ".W");
    if (m.R.R.rows() != m.E.dim() || m.R.R.cols() != m.E.dim() || m.W.dim() != m.E.dim())
        throw Error(ErrorCode::FormatError, prefix + ": inconsistent model shapes");
    return m;
}

}  // namespace astec
