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
#include <map>
#include <set>

#include "astec/clustering.hpp"
#include "astec/synth.hpp"
#include "oracles.hpp"

using namespace astec;

namespace {

Dataset make_dataset(std::size_t V, std::size_t L, std::vector<std::pair<std::vector<std::pair<std::uint32_t, double>>, std::vector<LabelId>>> rows) {
    Dataset d;
    d.num_features = V;
    d.num_labels = L;
    for (auto& [feats, labels] : rows) {
        SparseVector x;
        for (auto [i, v] : feats) {
            x.indices.push_back(i);
            x.values.push_back(v);
        }
        d.features.push_back(std::move(x));
        d.labels.push_back(std::move(labels));
    }
    d.num_points = d.features.size();
    return d;
}

SparseVector dense_sv(std::vector<double> v) {
    SparseVector s;
    for (std::uint32_t i = 0; i < v.size(); ++i)
        if (v[i] != 0.0) {
            s.indices.push_back(i);
            s.values.push_back(v[i]);
        }
    return s;
}

double value_at(const SparseVector& s, std::uint32_t i) {
    for (std::size_t k = 0; k < s.nnz(); ++k)
        if (s.indices[k] == i) return s.values[k];
    return 0.0;
}

// Sum over both sides of rep_l . normalize(sum of the side's reps), in dense arithmetic.
double objective_oracle(const std::vector<std::vector<double>>& reps, const std::vector<int>& side) {
    const std::size_t D = reps[0].size();
    double total = 0.0;
    for (int s : {0, 1}) {
        std::vector<double> mu(D, 0.0);
        for (std::size_t l = 0; l < reps.size(); ++l)
            if (side[l] == s)
                for (std::size_t d = 0; d < D; ++d) mu[d] += reps[l][d];
        double n = 0.0;
        for (double x : mu) n += x * x;
        n = std::sqrt(n);
        for (std::size_t l = 0; l < reps.size(); ++l)
            if (side[l] == s && n > 0.0)
                for (std::size_t d = 0; d < D; ++d) total += reps[l][d] * mu[d] / n;
    }
    return total;
}

void expect_balanced(const ClusterTree& tree) {
    for (const auto& n : tree.nodes) {
        if (n.is_leaf()) continue;
        const auto a = tree.nodes[n.left].labels.size(), b = tree.nodes[n.right].labels.size();
        EXPECT_LE(a > b ? a - b : b - a, 1u);
        EXPECT_EQ(a + b, n.labels.size());
    }
}

}  // namespace

TEST(Centroids, SinglePoint) {
    const auto d = make_dataset(2, 1, {{{{0, 3.0}, {1, 4.0}}, {0}}});
    const auto c = compute_centroids(d);
    EXPECT_NEAR(value_at(c.rows[0], 0), 0.6, 1e-12);
    EXPECT_NEAR(value_at(c.rows[0], 1), 0.8, 1e-12);
}

TEST(Centroids, TwoPointsShareALabel) {
    const auto d = make_dataset(2, 1, {{{{0, 1.0}}, {0}}, {{{1, 1.0}}, {0}}});
    const auto c = compute_centroids(d);
    EXPECT_NEAR(value_at(c.rows[0], 0), 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(value_at(c.rows[0], 1), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Centroids, UnusedLabelIsZeroAndReported) {
    const auto d = make_dataset(2, 2, {{{{0, 1.0}}, {0}}});
    const auto c = compute_centroids(d);
    EXPECT_TRUE(c.rows[1].empty());
    EXPECT_EQ(c.empty_labels, std::vector<LabelId>{1});
}

TEST(Centroids, UnitNormAgainstDenseMean) {
    const auto d = synth_dataset({4, 30, 5, 20, 0.1, 3});
    const auto c = compute_centroids(d);
    const auto l2p = d.label_to_points();
    for (LabelId l = 0; l < d.num_labels; ++l) {
        if (l2p[l].empty()) continue;
        std::vector<double> mean(d.num_features, 0.0);
        for (auto i : l2p[l])
            for (std::size_t k = 0; k < d.features[i].nnz(); ++k) mean[d.features[i].indices[k]] += d.features[i].values[k];
        double n = 0.0;
        for (double x : mean) n += x * x;
        n = std::sqrt(n);
        double cn = 0.0;
        for (std::uint32_t t = 0; t < d.num_features; ++t) {
            EXPECT_NEAR(value_at(c.rows[l], t), mean[t] / n, 1e-12);
            cn += value_at(c.rows[l], t) * value_at(c.rows[l], t);
        }
        EXPECT_NEAR(std::sqrt(cn), 1.0, 1e-6);
    }
}

TEST(Correlation, Reachability) {
    const auto d = make_dataset(1, 3, {{{{0, 1.0}}, {0, 1}}, {{{0, 1.0}}, {0, 1}}, {{{0, 1.0}}, {2}}});
    const auto C = estimate_correlation(d, 50, 2, 1);
    EXPECT_GT(value_at(C.rows[0], 1), 0.0);
    EXPECT_EQ(value_at(C.rows[0], 2), 0.0);
    EXPECT_EQ(value_at(C.rows[2], 0), 0.0);
}

TEST(Correlation, SingleLabelIsIdentity) {
    const auto d = make_dataset(1, 1, {{{{0, 1.0}}, {0}}, {{{0, 1.0}}, {0}}});
    const auto C = estimate_correlation(d, 10, 3, 1);
    EXPECT_EQ(C.rows[0].indices, std::vector<std::uint32_t>{0});
    EXPECT_DOUBLE_EQ(C.rows[0].values[0], 1.0);
}

TEST(Correlation, ChainMatchesExactTwoHopTransitionWithin3Sigma) {
    // points {0,1} and {1,2}: 0 and 2 only meet through 1
    const auto d = make_dataset(1, 3, {{{{0, 1.0}}, {0, 1}}, {{{0, 1.0}}, {1, 2}}});
    const std::size_t walks = 4000;
    const auto C = estimate_correlation(d, walks, 2, 17);

    // one-hop transition T[l][p] enumerated from the data
    const auto l2p = d.label_to_points();
    double T[3][3] = {};
    for (LabelId l = 0; l < 3; ++l)
        for (auto i : l2p[l])
            for (LabelId p : d.labels[i]) T[l][p] += 1.0 / static_cast<double>(l2p[l].size() * d.labels[i].size());
    double T2[3][3] = {};
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) T2[a][c] += T[a][b] * T[b][c];

    EXPECT_GT(value_at(C.rows[0], 2), 0.0);
    for (LabelId l = 0; l < 3; ++l) {
        double row = 0.0;
        for (LabelId p = 0; p < 3; ++p) {
            // X = landings on p in one walk; C_lp estimates E[X] / 2
            const double ex = T[l][p] + T2[l][p];
            const double ex2 = ex + 2.0 * T[l][p] * T[p][p];
            const double sd = std::sqrt((ex2 - ex * ex) / static_cast<double>(walks)) / 2.0;
            EXPECT_NEAR(value_at(C.rows[l], p), ex / 2.0, 3.0 * sd + 1e-12) << l << "->" << p;
            row += value_at(C.rows[l], p);
        }
        EXPECT_NEAR(row, 1.0, 1e-6);
    }
}

TEST(Correlation, RowsAreStochasticOnSynthData) {
    const auto d = synth_dataset({4, 40, 6, 20, 0.05, 2});
    const auto C = estimate_correlation(d, 400, 2, 5);
    for (const auto& r : C.rows) {
        double s = 0.0;
        for (double v : r.values) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        if (!r.empty()) {
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
        EXPECT_LE(r.nnz(), 100u);
    }
}

TEST(Split, WellSeparatedPairs) {
    const double e = 0.05;
    std::vector<SparseVector> reps{dense_sv({1, 0}), dense_sv({1, e}), dense_sv({0, 1}), dense_sv({e, 1})};
    for (auto& r : reps) {
        const double n = r.norm();
        for (auto& v : r.values) v /= n;
    }
    const std::vector<LabelId> labels{0, 1, 2, 3};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto s = balanced_2means_split(labels, reps, nullptr, seed, 2);
        std::set<std::vector<LabelId>> sides{s.left, s.right};
        EXPECT_EQ(sides, (std::set<std::vector<LabelId>>{{0, 1}, {2, 3}}));
    }
}

TEST(Split, OddCountIsTwoOne) {
    std::vector<SparseVector> reps{dense_sv({1, 0}), dense_sv({0, 1}), dense_sv({0.6, 0.8})};
    const std::vector<LabelId> labels{0, 1, 2};
    const auto s = balanced_2means_split(labels, reps, nullptr, 3, 2);
    EXPECT_EQ(s.left.size(), 2u);
    EXPECT_EQ(s.right.size(), 1u);
}

TEST(Split, DegenerateAndTooSmall) {
    std::vector<SparseVector> reps(3);
    const std::vector<LabelId> labels{0, 1, 2};
    EXPECT_EQ(oracle::error_code([&] { balanced_2means_split(labels, reps, nullptr, 1, 2); }), ErrorCode::DegenerateInput);
    const std::vector<LabelId> one{0};
    EXPECT_EQ(oracle::error_code([&] { balanced_2means_split(one, reps, nullptr, 1, 2); }), ErrorCode::InvalidParam);
}

TEST(Split, BeatsRandomBalancedSplitsOnEightVectors) {
    const std::size_t D = 6;
    const auto m = oracle::random_unit_rows(8, D, 2024);
    std::vector<std::vector<double>> dense(8, std::vector<double>(D));
    std::vector<SparseVector> reps;
    for (std::size_t l = 0; l < 8; ++l) {
        for (std::size_t d = 0; d < D; ++d) dense[l][d] = m(l, d);
        reps.push_back(dense_sv(dense[l]));
    }
    const std::vector<LabelId> labels{0, 1, 2, 3, 4, 5, 6, 7};
    const auto s = balanced_2means_split(labels, reps, nullptr, 7, D);
    std::vector<int> side(8, 0);
    for (auto l : s.left) side[l] = 1;
    const double got = objective_oracle(dense, side);
    EXPECT_NEAR(got, split_objective(s.left, s.right, reps, D), 1e-12);

    Rng rng(99);
    for (int t = 0; t < 1000; ++t) {
        std::vector<int> perm{0, 1, 2, 3, 4, 5, 6, 7};
        rng.shuffle(perm);
        std::vector<int> rs(8, 0);
        for (int k = 0; k < 4; ++k) rs[perm[k]] = 1;
        EXPECT_GE(got, objective_oracle(dense, rs) - 1e-12);
    }
}

TEST(Split, ObjectiveIsMonotone) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto m = oracle::random_unit_rows(40, 8, seed);
        std::vector<SparseVector> reps;
        std::vector<LabelId> labels;
        for (std::size_t l = 0; l < 40; ++l) {
            reps.push_back(dense_sv(std::vector<double>(m.row(l).begin(), m.row(l).end())));
            labels.push_back(static_cast<LabelId>(l));
        }
        const auto s = balanced_2means_split(labels, reps, nullptr, seed, 8);
        for (std::size_t k = 1; k < s.objective.size(); ++k) EXPECT_GE(s.objective[k], s.objective[k - 1] - 1e-12);
        EXPECT_LE(s.iterations, 50u);
    }
}

TEST(Tree, EightSeparableLabelsIntoFour) {
    // labels 2k and 2k+1 live on feature k
    LabelCentroids c;
    c.num_features = 4;
    for (LabelId l = 0; l < 8; ++l) {
        std::vector<double> v(4, 0.0);
        v[l / 2] = 1.0;
        c.rows.push_back(dense_sv(v));
    }
    const auto tree = build_cluster_tree(c, nullptr, 4, 1);
    ASSERT_EQ(tree.num_leaves(), 4u);
    for (const auto& leaf : tree.leaves()) {
        ASSERT_EQ(leaf.size(), 2u);
        EXPECT_EQ(leaf[0] / 2, leaf[1] / 2);
    }
    expect_balanced(tree);
}

TEST(Tree, SingleLeaf) {
    const auto d = synth_dataset({3, 20, 4, 10, 0.0, 1});
    const auto tree = build_cluster_tree(compute_centroids(d), nullptr, 1, 1);
    ASSERT_EQ(tree.num_leaves(), 1u);
    EXPECT_EQ(tree.leaves()[0].size(), 12u);
}

TEST(Tree, SynthSixteenClustersPurity) {
    SynthTruth truth;
    const auto d = synth_dataset({16, 200, 8, 32, 0.05, 1}, &truth);
    const auto tree = build_cluster_tree(compute_centroids(d), nullptr, 16, 1);
    ASSERT_EQ(tree.num_leaves(), 16u);
    std::size_t agree = 0, total = 0;
    std::set<std::uint32_t> majorities;
    for (const auto& leaf : tree.leaves()) {
        std::map<std::uint32_t, std::size_t> count;
        for (auto l : leaf) ++count[truth.label_cluster[l]];
        auto best = std::max_element(count.begin(), count.end(), [](auto& a, auto& b) { return a.second < b.second; });
        majorities.insert(best->first);
        agree += best->second;
        total += leaf.size();
    }
    // distinct majorities make the per-leaf majority the best one-to-one matching
    EXPECT_EQ(majorities.size(), 16u);
    EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.95);
}

TEST(Tree, BalanceCoverageAndDeterminism) {
    const auto d = synth_dataset({5, 30, 7, 16, 0.1, 4});
    auto d2 = d;
    d2.num_labels += 3;  // three labels without positives
    const auto cent = compute_centroids(d2);
    for (std::size_t leaves : {2u, 3u, 8u, 13u, 35u}) {
        const auto a = build_cluster_tree(cent, nullptr, leaves, 9);
        const auto b = build_cluster_tree(cent, nullptr, leaves, 9);
        EXPECT_EQ(a.leaves(), b.leaves());
        EXPECT_EQ(a.num_leaves(), leaves);
        expect_balanced(a);
        std::vector<int> seen(d2.num_labels, 0);
        for (const auto& leaf : a.leaves())
            for (auto l : leaf) ++seen[l];
        for (LabelId l = 0; l < d2.num_labels; ++l) EXPECT_EQ(seen[l], l < d.num_labels ? 1 : 0);
        EXPECT_EQ(a.empty_labels, (std::vector<LabelId>{35, 36, 37}));
        const auto map = a.label_to_cluster();
        for (LabelId l : a.empty_labels) EXPECT_EQ(map[l], 0u);
    }
    EXPECT_EQ(oracle::error_code([&] { build_cluster_tree(cent, nullptr, 36, 1); }), ErrorCode::InvalidParam);
    EXPECT_EQ(oracle::error_code([&] { build_cluster_tree(cent, nullptr, 0, 1); }), ErrorCode::InvalidParam);
}

TEST(Tree, CorrelationSmoothingKeepsInvariants) {
    const auto d = synth_dataset({4, 40, 6, 20, 0.05, 2});
    const auto cent = compute_centroids(d);
    const auto C = estimate_correlation(d, 400, 2, 5);
    const auto tree = build_cluster_tree(cent, &C, 8, 3);
    EXPECT_EQ(tree.num_leaves(), 8u);
    expect_balanced(tree);
}

TEST(Tree, JsonRoundTrip) {
    const auto d = synth_dataset({4, 20, 4, 10, 0.05, 2});
    const auto tree = build_cluster_tree(compute_centroids(d), nullptr, 4, 3);
    const auto j = tree_to_json(tree);
    EXPECT_EQ(j.at("L_hat").get<std::size_t>(), 4u);
    const auto back = tree_from_json(j);
    EXPECT_EQ(back.leaves(), tree.leaves());
    EXPECT_EQ(back.label_to_cluster(), tree.label_to_cluster());
}

TEST(MetaLabels, Examples) {
    LabelCentroids c;
    c.num_features = 1;
    c.rows.assign(8, dense_sv({1.0}));
    auto tree = build_cluster_tree(c, nullptr, 1, 1);
    const auto d = make_dataset(1, 8, {{{{0, 1.0}}, {3, 7}}, {{{0, 1.0}}, {}}});
    const auto m = make_meta_labels(d, tree);
    EXPECT_EQ(m.point_meta[0], std::vector<LabelId>{0});
    EXPECT_TRUE(m.point_meta[1].empty());
}

TEST(MetaLabels, BruteForceRecount) {
    const auto d = synth_dataset({6, 30, 5, 12, 0.1, 8});
    const auto tree = build_cluster_tree(compute_centroids(d), nullptr, 8, 2);
    const auto m = make_meta_labels(d, tree);
    const auto leaves = tree.leaves();
    std::size_t meta_total = 0;
    std::set<std::uint32_t> used;
    for (std::size_t i = 0; i < d.num_points; ++i) {
        std::set<std::uint32_t> expect;
        for (auto l : d.labels[i])
            for (std::uint32_t k = 0; k < leaves.size(); ++k)
                if (std::find(leaves[k].begin(), leaves[k].end(), l) != leaves[k].end()) expect.insert(k);
        EXPECT_EQ(m.point_meta[i], std::vector<LabelId>(expect.begin(), expect.end()));
        EXPECT_LE(m.point_meta[i].size(), d.labels[i].size());
        meta_total += m.point_meta[i].size();
        used.insert(expect.begin(), expect.end());
    }
    EXPECT_LE(meta_total, d.total_positives());
    EXPECT_EQ(used.size(), leaves.size());
}

TEST(MetaLabels, UncoveredLabel) {
    const auto d = make_dataset(1, 2, {{{{0, 1.0}}, {0}}});
    const auto tree = build_cluster_tree(compute_centroids(d), nullptr, 1, 1);
    auto d2 = make_dataset(1, 3, {{{{0, 1.0}}, {2}}});
    EXPECT_EQ(oracle::error_code([&] { make_meta_labels(d2, tree); }), ErrorCode::UncoveredLabel);
}

TEST(FrequentLabels, TieByLowerId) {
    // frequencies (5, 3, 3, 1)
    std::vector<std::pair<std::vector<std::pair<std::uint32_t, double>>, std::vector<LabelId>>> rows;
    const int freq[4] = {5, 3, 3, 1};
    for (LabelId l = 0; l < 4; ++l)
        for (int k = 0; k < freq[l]; ++k) rows.push_back({{{l, 1.0}}, {l}});
    const auto d = make_dataset(5, 4, rows);
    EXPECT_EQ(select_frequent_labels(d, 2).labels, (std::vector<LabelId>{0, 1}));
    const auto all = select_frequent_labels(d, 4);
    EXPECT_EQ(all.labels, (std::vector<LabelId>{0, 1, 2, 3}));
    EXPECT_DOUBLE_EQ(all.token_coverage, 4.0 / 5.0);
}

TEST(FrequentLabels, CoverageRecount) {
    const auto d = synth_dataset({6, 30, 5, 12, 0.1, 8});
    for (std::size_t k : {1u, 5u, 17u, 30u}) {
        const auto sel = select_frequent_labels(d, k);
        const std::set<LabelId> chosen(sel.labels.begin(), sel.labels.end());
        std::set<std::uint32_t> toks;
        for (std::size_t i = 0; i < d.num_points; ++i) {
            bool hit = false;
            for (auto l : d.labels[i]) hit |= chosen.count(l) > 0;
            if (hit) toks.insert(d.features[i].indices.begin(), d.features[i].indices.end());
        }
        EXPECT_DOUBLE_EQ(sel.token_coverage, static_cast<double>(toks.size()) / static_cast<double>(d.num_features));
    }
}
