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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "astec/error.hpp"
#include "astec/types.hpp"
#include "astec/util.hpp"

namespace astec {

struct SynthSpec {
    std::size_t num_clusters = 16;
    std::size_t docs_per_cluster = 200;
    std::size_t labels_per_cluster = 8;
    std::size_t vocab_per_cluster = 32;
    double noise = 0.05;
    std::uint64_t seed = 1;
};

/// Ground truth of a planted dataset.
struct SynthTruth {
    std::vector<std::uint32_t> doc_cluster;    // per point
    std::vector<std::uint32_t> label_cluster;  // per label
    std::vector<std::uint32_t> token_cluster;  // per feature
};

/// Share of in-block token draws taken from one of the document's label slices.
inline constexpr double kLabelSliceRate = 0.8;

/// Planted-cluster dataset. Cluster c owns a contiguous block of documents,
/// labels and vocabulary. Each document carries 1-3 labels of its cluster and
/// 3-10 token draws. A draw is off-block with probability `noise`; otherwise it
/// comes from the slice of the block owned by one of the document's labels
/// (probability kLabelSliceRate) or uniformly from the whole block. Feature values are
/// l2-normalized 1+ln(count) weights.
inline Dataset synth_dataset(const SynthSpec& spec, SynthTruth* truth = nullptr) {
    if (spec.num_clusters < 1 || spec.docs_per_cluster < 1 || spec.labels_per_cluster < 1 || spec.vocab_per_cluster < 1)
        throw Error(ErrorCode::InvalidParam, "synth_dataset counts must be >= 1");
    if (!(spec.noise >= 0.0 && spec.noise < 1.0)) throw Error(ErrorCode::InvalidParam, "noise must lie in [0,1)");

    const std::size_t C = spec.num_clusters, vpc = spec.vocab_per_cluster, lpc = spec.labels_per_cluster;
    Dataset d;
    d.num_points = C * spec.docs_per_cluster;
    d.num_features = C * vpc;
    d.num_labels = C * lpc;
    d.features.reserve(d.num_points);
    d.labels.reserve(d.num_points);
    if (truth) {
        truth->doc_cluster.clear();
        truth->label_cluster.resize(d.num_labels);
        truth->token_cluster.resize(d.num_features);
        for (std::size_t l = 0; l < d.num_labels; ++l) truth->label_cluster[l] = static_cast<std::uint32_t>(l / lpc);
        for (std::size_t t = 0; t < d.num_features; ++t) truth->token_cluster[t] = static_cast<std::uint32_t>(t / vpc);
    }

    Rng rng(spec.seed);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t k = 0; k < spec.docs_per_cluster; ++k) {
            const std::size_t num_labels = std::min<std::size_t>(lpc, 1 + rng.index(3));
            std::vector<LabelId> local;
            while (local.size() < num_labels) {
                const auto j = static_cast<LabelId>(rng.index(lpc));
                if (std::find(local.begin(), local.end(), j) == local.end()) local.push_back(j);
            }
            const std::size_t num_tokens = 3 + rng.index(8);
            std::map<std::uint32_t, double> counts;
            for (std::size_t t = 0; t < num_tokens; ++t) {
                std::size_t token;
                if (C > 1 && rng.uniform() < spec.noise) {
                    const std::size_t other = (c + 1 + rng.index(C - 1)) % C;
                    token = other * vpc + rng.index(vpc);
                } else if (rng.uniform() < kLabelSliceRate) {
                    const std::size_t j = local[rng.index(local.size())];
                    const std::size_t lo = j * vpc / lpc;
                    const std::size_t hi = std::max(lo + 1, (j + 1) * vpc / lpc);
                    token = c * vpc + std::min(vpc - 1, lo + rng.index(hi - lo));
                } else {
                    token = c * vpc + rng.index(vpc);
                }
                counts[static_cast<std::uint32_t>(token)] += 1.0;
            }
            SparseVector x;
            double norm = 0.0;
            for (auto [tok, cnt] : counts) {
                const double w = 1.0 + std::log(cnt);
                x.indices.push_back(tok);
                x.values.push_back(w);
                norm += w * w;
            }
            norm = std::sqrt(norm);
            for (auto& v : x.values) v /= norm;

            std::vector<LabelId> labels;
            for (auto j : local) labels.push_back(static_cast<LabelId>(c * lpc + j));
            std::sort(labels.begin(), labels.end());
            d.features.push_back(std::move(x));
            d.labels.push_back(std::move(labels));
            if (truth) truth->doc_cluster.push_back(static_cast<std::uint32_t>(c));
        }
    }
    return d;
}

/// Seeded split of point ids into (train, test) with `test_fraction` held out.
inline std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> split_points(std::size_t n, double test_fraction,
                                                                                        std::uint64_t seed) {
    auto perm = epoch_permutation(seed, 0x5917, n);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    std::vector<std::uint32_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::uint32_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

}  // namespace astec
