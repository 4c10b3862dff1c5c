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

// Label clustering for the surrogate task: normalized label centroids, an
// optional random-walk label correlation, and recursive balanced 2-means
// splitting into a fixed number of meta-labels.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "astec/error.hpp"
#include "astec/types.hpp"
#include "astec/util.hpp"

namespace astec {

struct LabelCentroids {
    std::size_t num_features = 0;
    std::vector<SparseVector> rows;   // one per label, unit norm or empty
    std::vector<LabelId> empty_labels;  // labels without training positives
};

/// mu_l = normalize(mean of x_i over the positives of l).
inline LabelCentroids compute_centroids(const Dataset& d) {
    LabelCentroids out;
    out.num_features = d.num_features;
    out.rows.resize(d.num_labels);
    const auto l2p = d.label_to_points();
    std::vector<double> acc(d.num_features, 0.0);
    std::vector<std::uint32_t> touched;
    for (LabelId l = 0; l < d.num_labels; ++l) {
        const auto& pts = l2p[l];
        if (pts.empty()) {
            out.empty_labels.push_back(l);
            continue;
        }
        touched.clear();
        for (auto i : pts) {
            const auto& x = d.features[i];
            for (std::size_t k = 0; k < x.nnz(); ++k) {
                if (acc[x.indices[k]] == 0.0) touched.push_back(x.indices[k]);
                acc[x.indices[k]] += x.values[k];
                // a running sum can return to exactly zero; keep the index anyway
            }
        }
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        SparseVector mu;
        const double inv = 1.0 / static_cast<double>(pts.size());
        double norm = 0.0;
        for (auto t : touched) {
            const double v = acc[t] * inv;
            acc[t] = 0.0;
            if (v == 0.0) continue;
            mu.indices.push_back(t);
            mu.values.push_back(v);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm > 0) {
            for (auto& v : mu.values) v /= norm;
        } else {
            mu = {};
            out.empty_labels.push_back(l);
        }
        out.rows[l] = std::move(mu);
    }
    std::sort(out.empty_labels.begin(), out.empty_labels.end());
    return out;
}

/// Row-stochastic label correlation; row l holds C_lp over p.
struct LabelCorrelation {
    std::vector<SparseVector> rows;
};

/// Random walks on the label/point bipartite graph. Each hop moves from the
/// current label to a uniform positive point of it and then to a uniform label
/// of that point; every landing is counted. Rows keep the `max_entries` most
/// visited labels and are l1-normalized.
inline LabelCorrelation estimate_correlation(const Dataset& d, std::size_t walks_per_label, std::size_t walk_len,
                                             std::uint64_t seed, std::size_t max_entries = 100) {
    if (walks_per_label < 1 || walk_len < 1) throw Error(ErrorCode::InvalidParam, "walks_per_label and walk_len must be >= 1");
    const auto l2p = d.label_to_points();
    LabelCorrelation C;
    C.rows.resize(d.num_labels);
    std::map<LabelId, std::size_t> counts;
    for (LabelId l = 0; l < d.num_labels; ++l) {
        if (l2p[l].empty()) continue;
        Rng rng(derive_seed(seed, l));
        counts.clear();
        for (std::size_t w = 0; w < walks_per_label; ++w) {
            LabelId cur = l;
            for (std::size_t h = 0; h < walk_len; ++h) {
                const auto& pts = l2p[cur];
                const auto i = pts[rng.index(pts.size())];
                const auto& ls = d.labels[i];
                cur = ls[rng.index(ls.size())];
                ++counts[cur];
            }
        }
        std::vector<std::pair<LabelId, std::size_t>> entries(counts.begin(), counts.end());
        if (entries.size() > max_entries) {
            std::stable_sort(entries.begin(), entries.end(), [](auto& a, auto& b) { return a.second > b.second; });
            entries.resize(max_entries);
            std::sort(entries.begin(), entries.end());
        }
        double total = 0.0;
        for (auto& e : entries) total += static_cast<double>(e.second);
        auto& row = C.rows[l];
        for (auto& [p, c] : entries) {
            row.indices.push_back(p);
            row.values.push_back(static_cast<double>(c) / total);
        }
    }
    return C;
}

namespace detail {

inline SparseVector dense_to_sparse(std::span<const double> v) {
    SparseVector s;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] != 0.0) {
            s.indices.push_back(static_cast<std::uint32_t>(i));
            s.values.push_back(v[i]);
        }
    return s;
}

inline void add_into(std::span<double> dense, const SparseVector& x, double scale = 1.0) {
    for (std::size_t k = 0; k < x.nnz(); ++k) dense[x.indices[k]] += scale * x.values[k];
}

inline void normalize_dense(std::span<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0)
        for (auto& x : v) x /= n;
}

}  // namespace detail

/// rep'_l = normalize(rep_l + sum_p C_lp rep_p) for the given labels.
inline std::vector<SparseVector> correlate_representations(std::span<const SparseVector> reps, const LabelCorrelation& C,
                                                           std::size_t num_features) {
    std::vector<SparseVector> out(reps.size());
    std::vector<double> acc(num_features, 0.0);
    for (std::size_t l = 0; l < reps.size(); ++l) {
        if (reps[l].empty()) continue;
        std::fill(acc.begin(), acc.end(), 0.0);
        detail::add_into(acc, reps[l]);
        const auto& row = C.rows[l];
        for (std::size_t k = 0; k < row.nnz(); ++k) detail::add_into(acc, reps[row.indices[k]], row.values[k]);
        detail::normalize_dense(acc);
        out[l] = detail::dense_to_sparse(acc);
    }
    return out;
}

struct SplitResult {
    std::vector<LabelId> left, right;  // sorted
    SparseVector mu_pos, mu_neg;
    std::vector<double> objective;  // after each mean update
    std::size_t iterations = 0;
    double final_objective = 0.0;
};

/// k-means++ restarts per split.
inline constexpr std::size_t kSplitRestarts = 8;

/// Balanced spherical 2-means. Seeds by k-means++, then alternates a balanced
/// assignment (rank labels by sim(mu+) - sim(mu-), top half to the left, ties by
/// lower id) with a normalized mean update, until the assignment repeats or
/// `max_iters` is reached. `reps` is indexed by label id.
inline SplitResult balanced_2means_split(std::span<const LabelId> labels, std::span<const SparseVector> reps,
                                         const LabelCorrelation* C, std::uint64_t seed, std::size_t num_features,
                                         std::size_t max_iters = 50, std::size_t restarts = kSplitRestarts) {
    if (labels.size() < 2) throw Error(ErrorCode::InvalidParam, "balanced split needs at least 2 labels");
    std::vector<SparseVector> smoothed;
    if (C) {
        smoothed.resize(reps.size());
        std::vector<double> acc(num_features, 0.0);
        for (LabelId l : labels) {
            std::fill(acc.begin(), acc.end(), 0.0);
            detail::add_into(acc, reps[l]);
            const auto& row = C->rows[l];
            for (std::size_t k = 0; k < row.nnz(); ++k) detail::add_into(acc, reps[row.indices[k]], row.values[k]);
            detail::normalize_dense(acc);
            smoothed[l] = detail::dense_to_sparse(acc);
        }
        reps = smoothed;
    }

    std::vector<LabelId> order(labels.begin(), labels.end());
    std::sort(order.begin(), order.end());
    std::vector<LabelId> candidates;
    for (LabelId l : order)
        if (!reps[l].empty()) candidates.push_back(l);
    if (candidates.empty()) throw Error(ErrorCode::DegenerateInput, "all label representations are zero");

    // Each restart draws its own k-means++ seeds; the best final objective wins.
    auto run = [&](std::uint64_t run_seed) {
        // k-means++ seeding on unit vectors: D^2 = 2 - 2 cos
        Rng rng(run_seed);
        const LabelId first = candidates[rng.index(candidates.size())];
        LabelId second = first;
        {
            std::vector<double> w(candidates.size());
            double total = 0.0;
            for (std::size_t k = 0; k < candidates.size(); ++k) {
                w[k] = std::max(0.0, 2.0 - 2.0 * dot(reps[candidates[k]], reps[first]));
                total += w[k];
            }
            if (total > 0) {
                double r = rng.uniform() * total;
                for (std::size_t k = 0; k < candidates.size(); ++k) {
                    if (w[k] <= 0) continue;
                    second = candidates[k];
                    r -= w[k];
                    if (r < 0) break;
                }
            } else {
                for (LabelId l : order)
                    if (l != first) {
                        second = l;
                        break;
                    }
            }
        }

        std::vector<double> mu_pos(num_features, 0.0), mu_neg(num_features, 0.0);
        detail::add_into(mu_pos, reps[first]);
        detail::add_into(mu_neg, reps[second]);

        const std::size_t n = order.size(), n_left = (n + 1) / 2;
        std::vector<char> side(n, 2), prev_side;
        std::vector<std::pair<double, std::size_t>> diff(n);
        SplitResult out;
        for (std::size_t it = 0; it < max_iters; ++it) {
            for (std::size_t k = 0; k < n; ++k) {
                const auto& r = reps[order[k]];
                diff[k] = {dot(r, mu_pos) - dot(r, mu_neg), k};
            }
            // k is ascending in label id, so it breaks ties by lower id
            std::sort(diff.begin(), diff.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
            prev_side = side;
            for (std::size_t r = 0; r < n; ++r) side[diff[r].second] = r < n_left ? 1 : 0;
            out.iterations = it + 1;
            if (side == prev_side) break;

            std::fill(mu_pos.begin(), mu_pos.end(), 0.0);
            std::fill(mu_neg.begin(), mu_neg.end(), 0.0);
            for (std::size_t k = 0; k < n; ++k) detail::add_into(side[k] ? mu_pos : mu_neg, reps[order[k]]);
            detail::normalize_dense(mu_pos);
            detail::normalize_dense(mu_neg);
            double obj = 0.0;
            for (std::size_t k = 0; k < n; ++k) obj += dot(reps[order[k]], side[k] ? mu_pos : mu_neg);
            out.objective.push_back(obj);
        }
        for (std::size_t k = 0; k < n; ++k) (side[k] ? out.left : out.right).push_back(order[k]);
        out.mu_pos = detail::dense_to_sparse(mu_pos);
        out.mu_neg = detail::dense_to_sparse(mu_neg);
        out.final_objective = out.objective.back();
        return out;
    };
    SplitResult best;
    for (std::size_t r = 0; r < std::max<std::size_t>(1, restarts); ++r) {
        auto cand = run(r == 0 ? seed : derive_seed(seed, r));
        if (r == 0 || cand.final_objective > best.final_objective) best = std::move(cand);
    }
    return best;
}

/// Sum over both sides of the similarity to that side's normalized mean.
inline double split_objective(std::span<const LabelId> left, std::span<const LabelId> right, std::span<const SparseVector> reps,
                              std::size_t num_features) {
    double total = 0.0;
    for (auto side : {left, right}) {
        std::vector<double> mu(num_features, 0.0);
        for (LabelId l : side) detail::add_into(mu, reps[l]);
        detail::normalize_dense(mu);
        for (LabelId l : side) total += dot(reps[l], mu);
    }
    return total;
}

struct ClusterNode {
    std::vector<LabelId> labels;
    int left = -1, right = -1;
    std::size_t depth = 0;
    SparseVector mu_pos, mu_neg;  // split means of internal nodes
    [[nodiscard]] bool is_leaf() const noexcept { return left < 0; }
};

struct ClusterTree {
    std::vector<ClusterNode> nodes;  // nodes[0] is the root
    std::vector<int> leaf_nodes;     // cluster id -> node
    std::vector<LabelId> empty_labels;
    std::size_t num_labels = 0;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t num_leaves() const noexcept { return leaf_nodes.size(); }

    [[nodiscard]] std::size_t depth() const noexcept {
        std::size_t d = 0;
        for (int id : leaf_nodes) d = std::max(d, nodes[id].depth);
        return d;
    }

    [[nodiscard]] std::vector<std::vector<LabelId>> leaves() const {
        std::vector<std::vector<LabelId>> out;
        for (int id : leaf_nodes) out.push_back(nodes[id].labels);
        return out;
    }

    /// Cluster id per label; labels without positives go to cluster 0.
    [[nodiscard]] std::vector<std::uint32_t> label_to_cluster() const {
        std::vector<std::uint32_t> out(num_labels, std::numeric_limits<std::uint32_t>::max());
        for (std::size_t c = 0; c < leaf_nodes.size(); ++c)
            for (LabelId l : nodes[leaf_nodes[c]].labels) out[l] = static_cast<std::uint32_t>(c);
        for (LabelId l : empty_labels) out[l] = 0;
        return out;
    }
};

/// Recursively split the non-empty labels until `num_leaves` clusters exist.
/// Shallowest leaves are split first, larger before smaller, so a power-of-two
/// target yields a complete tree.
inline ClusterTree build_cluster_tree(const LabelCentroids& cent, const LabelCorrelation* C, std::size_t num_leaves,
                                      std::uint64_t seed) {
    std::vector<LabelId> nonempty;
    for (LabelId l = 0; l < cent.rows.size(); ++l)
        if (!cent.rows[l].empty()) nonempty.push_back(l);
    if (num_leaves < 1 || num_leaves > nonempty.size())
        throw Error(ErrorCode::InvalidParam, "L_hat must lie in [1, " + std::to_string(nonempty.size()) + "]");

    std::vector<SparseVector> smoothed;
    std::span<const SparseVector> reps = cent.rows;
    if (C) {
        smoothed = correlate_representations(cent.rows, *C, cent.num_features);
        reps = smoothed;
    }

    ClusterTree tree;
    tree.num_labels = cent.rows.size();
    tree.seed = seed;
    tree.empty_labels = cent.empty_labels;
    tree.nodes.push_back({nonempty, -1, -1, 0, {}, {}});
    std::vector<int> leaves{0};
    while (leaves.size() < num_leaves) {
        std::size_t pick = leaves.size();
        for (std::size_t k = 0; k < leaves.size(); ++k) {
            const auto& cand = tree.nodes[leaves[k]];
            if (cand.labels.size() < 2) continue;
            if (pick == leaves.size()) {
                pick = k;
                continue;
            }
            const auto& best = tree.nodes[leaves[pick]];
            if (cand.depth < best.depth || (cand.depth == best.depth && cand.labels.size() > best.labels.size())) pick = k;
        }
        const int id = leaves[pick];
        auto split = balanced_2means_split(tree.nodes[id].labels, reps, nullptr, derive_seed(seed, static_cast<std::uint64_t>(id)),
                                           cent.num_features);
        const std::size_t depth = tree.nodes[id].depth + 1;
        const int lid = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({std::move(split.left), -1, -1, depth, {}, {}});
        tree.nodes.push_back({std::move(split.right), -1, -1, depth, {}, {}});
        tree.nodes[id].left = lid;
        tree.nodes[id].right = lid + 1;
        tree.nodes[id].mu_pos = std::move(split.mu_pos);
        tree.nodes[id].mu_neg = std::move(split.mu_neg);
        leaves[pick] = lid;
        leaves.insert(leaves.begin() + static_cast<std::ptrdiff_t>(pick) + 1, lid + 1);
    }
    tree.leaf_nodes = std::move(leaves);
    return tree;
}

inline nlohmann::json tree_to_json(const ClusterTree& tree) {
    nlohmann::json j;
    j["leaves"] = tree.leaves();
    j["depth"] = tree.depth();
    j["seed"] = tree.seed;
    j["L_hat"] = tree.num_leaves();
    j["num_labels"] = tree.num_labels;
    j["empty_labels"] = tree.empty_labels;
    return j;
}

/// Rebuild a (flat) tree from its JSON leaves; split means are not stored.
inline ClusterTree tree_from_json(const nlohmann::json& j) {
    ClusterTree tree;
    tree.seed = j.at("seed").get<std::uint64_t>();
    tree.num_labels = j.value("num_labels", std::size_t{0});
    tree.empty_labels = j.value("empty_labels", std::vector<LabelId>{});
    const auto leaves = j.at("leaves").get<std::vector<std::vector<LabelId>>>();
    const auto depth = j.at("depth").get<std::size_t>();
    tree.nodes.push_back({{}, -1, -1, 0, {}, {}});
    for (const auto& leaf : leaves) {
        tree.leaf_nodes.push_back(static_cast<int>(tree.nodes.size()));
        tree.nodes.push_back({leaf, -1, -1, depth, {}, {}});
        tree.nodes[0].labels.insert(tree.nodes[0].labels.end(), leaf.begin(), leaf.end());
        for (LabelId l : leaf) tree.num_labels = std::max<std::size_t>(tree.num_labels, l + 1);
    }
    if (leaves.size() == 1) tree.leaf_nodes = {0};
    std::sort(tree.nodes[0].labels.begin(), tree.nodes[0].labels.end());
    return tree;
}

struct MetaLabelMap {
    std::size_t num_meta = 0;
    std::vector<std::uint32_t> label_to_cluster;
    std::vector<std::vector<LabelId>> point_meta;  // sorted meta positives per point
};

inline MetaLabelMap make_meta_labels(const Dataset& d, const ClusterTree& tree) {
    MetaLabelMap m;
    m.num_meta = tree.num_leaves();
    m.label_to_cluster = tree.label_to_cluster();
    m.point_meta.resize(d.num_points);
    for (std::size_t i = 0; i < d.num_points; ++i) {
        auto& meta = m.point_meta[i];
        for (LabelId l : d.labels[i]) {
            if (l >= m.label_to_cluster.size() || m.label_to_cluster[l] == std::numeric_limits<std::uint32_t>::max())
                throw Error(ErrorCode::UncoveredLabel, "label " + std::to_string(l) + " of point " + std::to_string(i), i, l);
            meta.push_back(m.label_to_cluster[l]);
        }
        std::sort(meta.begin(), meta.end());
        meta.erase(std::unique(meta.begin(), meta.end()), meta.end());
    }
    return m;
}

struct FrequentLabelSelection {
    std::vector<LabelId> labels;  // sorted ids
    double token_coverage = 0.0;  // fraction of features seen in a covered point
};

/// The `count` most frequent labels (ties by lower id).
inline FrequentLabelSelection select_frequent_labels(const Dataset& d, std::size_t count) {
    if (count > d.num_labels) throw Error(ErrorCode::InvalidParam, "L_hat exceeds the number of labels");
    const auto freq = d.label_frequencies();
    std::vector<LabelId> order(d.num_labels);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](LabelId a, LabelId b) { return freq[a] > freq[b]; });
    FrequentLabelSelection out;
    out.labels.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.labels.begin(), out.labels.end());
    std::vector<char> seen(d.num_features, 0);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < d.num_points; ++i) {
        const bool hit = std::any_of(d.labels[i].begin(), d.labels[i].end(),
                                     [&](LabelId l) { return std::binary_search(out.labels.begin(), out.labels.end(), l); });
        if (!hit) continue;
        for (auto t : d.features[i].indices)
            if (!seen[t]) {
                seen[t] = 1;
                ++covered;
            }
    }
    out.token_coverage = d.num_features ? static_cast<double>(covered) / static_cast<double>(d.num_features) : 0.0;
    return out;
}

}  // namespace astec
