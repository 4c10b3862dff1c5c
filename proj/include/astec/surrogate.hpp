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

// Surrogate-task training: learn token embeddings by predicting meta-labels
// (label clusters) with a full 1-vs-all logistic loss. The residual matrix and
// meta-classifiers used here are thrown away; only E is returned.

#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "astec/clustering.hpp"
#include "astec/nn.hpp"
#include "astec/trainer.hpp"

namespace astec {

struct SurrogateConfig {
    std::size_t dim = 64;
    std::size_t num_meta = 8192;  // L_hat
    TrainConfig train;
};

struct IntermediateModel {
    EmbeddingBank E;
};

struct SurrogateResult {
    IntermediateModel model;
    std::vector<EpochLog> log;
};

/// Token vectors keyed by token id.
using TokenVectors = std::unordered_map<std::uint32_t, std::vector<double>>;

/// Text file of "token_id v_1 ... v_D" lines.
inline TokenVectors read_token_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    TokenVectors out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::uint32_t id;
        if (!(ls >> id)) continue;
        std::vector<double> v;
        double x;
        while (ls >> x) v.push_back(x);
        out[id] = std::move(v);
    }
    return out;
}

/// Tokens found in `pretrained` take those vectors; the rest are U(-1/sqrt(D), 1/sqrt(D)).
inline EmbeddingBank init_embeddings(std::size_t vocab, std::size_t dim, const TokenVectors* pretrained, std::uint64_t seed) {
    EmbeddingBank E = random_embeddings(vocab, dim, seed);
    if (!pretrained) return E;
    for (const auto& [id, vec] : *pretrained) {
        if (vec.size() != dim)
            throw Error(ErrorCode::DimMismatch, "token " + std::to_string(id) + " has " + std::to_string(vec.size()) +
                                                    " dims, expected " + std::to_string(dim));
        if (id >= vocab) throw Error(ErrorCode::IndexOutOfRange, "token " + std::to_string(id), 0, id);
        std::copy(vec.begin(), vec.end(), E.table.row(id).begin());
    }
    return E;
}

/// Fraction of points (with at least one meta positive) whose top-scoring meta-label is positive.
inline double meta_precision_at_1(const Dataset& d, const MetaLabelMap& meta, const FeatureClassifier& m,
                                  std::span<const std::uint32_t> ids) {
    std::size_t hits = 0, counted = 0;
    for (auto i : ids) {
        if (meta.point_meta[i].empty()) continue;
        const auto v = embed_bag(d.features[i], m.E);
        const auto xh = residual_forward(v, m.R);
        std::size_t best = 0;
        double best_s = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < m.W.num_labels(); ++k) {
            const double s = dot(m.W.weights.row(k), xh);
            if (s > best_s) {
                best_s = s;
                best = k;
            }
        }
        ++counted;
        if (contains_sorted(meta.point_meta[i], static_cast<LabelId>(best))) ++hits;
    }
    return counted ? static_cast<double>(hits) / static_cast<double>(counted) : 0.0;
}

/// Minimize sum_i sum_k log(1 + exp(-yhat_ik w_k.x^0_i)) subject to ||R0||_op <= lambda.
/// R0 starts at zero so the initial feature map is x^0 = v.
inline SurrogateResult train_surrogate(const Dataset& d, const MetaLabelMap& meta, const SurrogateConfig& cfg,
                                       const EmbeddingBank* init_E = nullptr, const StepCallback& on_step = {}) {
    cfg.train.validate();
    if (cfg.dim < 1) throw Error(ErrorCode::ConfigError, "dim must be >= 1");
    if (meta.point_meta.size() != d.num_points) throw Error(ErrorCode::ConfigError, "meta-labels do not match the dataset");
    if (init_E && (init_E->dim() != cfg.dim || init_E->vocab() != d.num_features))
        throw Error(ErrorCode::DimMismatch, "initial embeddings have the wrong shape");

    FeatureClassifier m;
    m.E = init_E ? *init_E : random_embeddings(d.num_features, cfg.dim, derive_seed(cfg.train.seed, 0xe0));
    m.R = ResidualBlock::zeros(cfg.dim, cfg.train.lambda);
    m.W = xavier_classifiers(meta.num_meta, cfg.dim, derive_seed(cfg.train.seed, 0x3a));

    auto [train_ids, held_ids] = heldout_split(d.num_points, cfg.train.heldout_fraction, cfg.train.seed);
    TrainConfig tc = cfg.train;
    tc.train_E = true;
    tc.train_R = true;
    LabelSets sets{meta.point_meta, nullptr};
    HeldoutEvaluator eval = [&](const FeatureClassifier& fc, std::span<const std::uint32_t> ids) {
        return meta_precision_at_1(d, meta, fc, ids);
    };
    SurrogateResult out;
    out.log = train_feature_classifier(d, sets, m, tc, train_ids, held_ids, eval, on_step);
    out.model.E = std::move(m.E);
    return out;
}

}  // namespace astec
