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

// Re-ranker: a second model with its own E, R, W trained on each point's
// positives plus the base model's top-k mistakes.

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "astec/extreme.hpp"

namespace astec {

struct RerankerTrainSet {
    std::vector<std::vector<LabelId>> sets;       // S~_i = P_i u top-k(i), sorted
    std::vector<std::vector<LabelId>> negatives;  // S~_i \ P_i, sorted
    double mean_mined = 0.0;
};

struct RerankerModel {
    FeatureClassifier model;
    std::vector<bool> covered;  // label appears in some S~_i

    [[nodiscard]] bool covers(LabelId l) const { return l < covered.size() && covered[l]; }
};

/// Top-k of the base fusion alpha*sigma(w.x^) + (1-alpha)*sigma(s) over each point's shortlist row.
inline std::vector<std::vector<ScoredLabel>> base_topk(const Dataset& d, const ExtremeModel& m, const Shortlist& sl, double alpha,
                                                       std::size_t k, std::size_t threads = 1) {
    if (sl.size() != d.num_points) throw Error(ErrorCode::MissingShortlist, "shortlist rows vs points");
    std::vector<std::vector<ScoredLabel>> out(d.num_points);
    parallel_for(d.num_points, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t i = lo; i < hi; ++i) {
            const auto xh = residual_forward(embed_bag(d.features[i], m.E), m.R);
            std::vector<ScoredLabel> row;
            for (const auto& e : sl.rows[i]) row.push_back({e.label, base_score(alpha, dot(m.W.weights.row(e.label), xh), e.score)});
            const std::size_t kk = std::min(k, row.size());
            std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(kk), row.end(), ranks_before);
            row.resize(kk);
            out[i] = std::move(row);
        }
    });
    return out;
}

/// S~_i = P_i u {top-k predictions of the base model}.
inline RerankerTrainSet mine_mispredictions(const ExtremeModel& m, const Shortlist& sl, const Dataset& d, std::size_t k,
                                            double alpha = 0.5, std::size_t threads = 1) {
    RerankerTrainSet ts;
    const auto top = base_topk(d, m, sl, alpha, k, threads);
    ts.sets.resize(d.num_points);
    ts.negatives.resize(d.num_points);
    double mined = 0.0;
    for (std::size_t i = 0; i < d.num_points; ++i) {
        auto& s = ts.sets[i];
        s = d.labels[i];
        for (const auto& p : top[i])
            if (!contains_sorted(d.labels[i], p.label)) {
                ts.negatives[i].push_back(p.label);
                s.push_back(p.label);
            }
        std::sort(s.begin(), s.end());
        std::sort(ts.negatives[i].begin(), ts.negatives[i].end());
        mined += static_cast<double>(ts.negatives[i].size());
    }
    ts.mean_mined = d.num_points ? mined / static_cast<double>(d.num_points) : 0.0;
    return ts;
}

/// Same machinery as the extreme stage over S~_i; E~ starts as a copy of `E` and is trained.
inline RerankerModel train_reranker(const Dataset& d, const RerankerTrainSet& ts, const EmbeddingBank& E, const ExtremeConfig& cfg,
                                    std::vector<EpochLog>* log = nullptr, const StepCallback& on_step = {}) {
    if (ts.negatives.size() != d.num_points) throw Error(ErrorCode::MissingShortlist, "re-ranker sets vs points");
    ExtremeConfig rc = cfg;
    rc.fine_tune_E = true;
    rc.train.seed = derive_seed(cfg.train.seed, 0x7e7a);
    auto res = train_extreme(d, E, ts.negatives, rc, nullptr, on_step);
    if (log) *log = std::move(res.log);
    RerankerModel r;
    r.model = std::move(res.model);
    r.covered.assign(d.num_labels, false);
    for (const auto& s : ts.sets)
        for (LabelId l : s) r.covered[l] = true;
    return r;
}

inline void save_reranker(xast::Container& c, const RerankerModel& r) {
    save_feature_classifier(c, "rerank", r.model);
    std::vector<std::uint8_t> cov(r.covered.begin(), r.covered.end());
    c.put_vector<std::uint8_t>("rerank.covered", cov);
}

inline RerankerModel load_reranker(const xast::Container& c) {
    RerankerModel r;
    r.model = load_feature_classifier(c, "rerank");
    for (auto b : c.get<std::uint8_t>("rerank.covered")) r.covered.push_back(b != 0);
    return r;
}

}  // namespace astec
