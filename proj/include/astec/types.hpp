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
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace astec {

using LabelId = std::uint32_t;
using FeatureId = std::uint32_t;

/// Compressed sparse vector; indices strictly increasing.
struct SparseVector {
    std::vector<std::uint32_t> indices;
    std::vector<double> values;

    [[nodiscard]] std::size_t nnz() const noexcept { return indices.size(); }
    [[nodiscard]] bool empty() const noexcept { return indices.empty(); }

    [[nodiscard]] double norm() const noexcept {
        double s = 0.0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }

    [[nodiscard]] bool well_formed() const noexcept {
        if (indices.size() != values.size()) return false;
        for (std::size_t k = 1; k < indices.size(); ++k)
            if (indices[k] <= indices[k - 1]) return false;
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const SparseVector&, const SparseVector&) = default;
};

inline double dot(const SparseVector& x, std::span<const double> dense) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < x.nnz(); ++k) s += x.values[k] * dense[x.indices[k]];
    return s;
}

inline double dot(const SparseVector& a, const SparseVector& b) noexcept {
    double s = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.nnz() && j < b.nnz()) {
        if (a.indices[i] < b.indices[j]) {
            ++i;
        } else if (a.indices[i] > b.indices[j]) {
            ++j;
        } else {
            s += a.values[i++] * b.values[j++];
        }
    }
    return s;
}

/// Multi-label dataset: per point a sparse feature vector and a sorted list of
/// positive label ids. Every other label is implicitly negative.
struct Dataset {
    std::size_t num_points = 0;
    std::size_t num_features = 0;
    std::size_t num_labels = 0;
    std::vector<SparseVector> features;
    std::vector<std::vector<LabelId>> labels;

    /// Transpose of the label matrix: for each label the sorted ids of its positive points.
    [[nodiscard]] std::vector<std::vector<std::uint32_t>> label_to_points() const {
        std::vector<std::vector<std::uint32_t>> out(num_labels);
        for (std::size_t i = 0; i < labels.size(); ++i)
            for (LabelId l : labels[i]) out[l].push_back(static_cast<std::uint32_t>(i));
        return out;
    }

    [[nodiscard]] std::vector<std::size_t> label_frequencies() const {
        std::vector<std::size_t> freq(num_labels, 0);
        for (const auto& ls : labels)
            for (LabelId l : ls) ++freq[l];
        return freq;
    }

    [[nodiscard]] std::size_t total_positives() const noexcept {
        std::size_t n = 0;
        for (const auto& ls : labels) n += ls.size();
        return n;
    }

    /// Points selected by `ids`, in that order, sharing the feature/label spaces.
    [[nodiscard]] Dataset subset(std::span<const std::uint32_t> ids) const {
        Dataset out;
        out.num_points = ids.size();
        out.num_features = num_features;
        out.num_labels = num_labels;
        out.features.reserve(ids.size());
        out.labels.reserve(ids.size());
        for (auto i : ids) {
            out.features.push_back(features[i]);
            out.labels.push_back(labels[i]);
        }
        return out;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetStats {
    std::size_t num_points = 0;
    std::size_t num_features = 0;
    std::size_t num_labels = 0;
    std::size_t total_positives = 0;
    double avg_labels_per_point = 0.0;
    double avg_points_per_label = 0.0;
    double avg_features_per_point = 0.0;
};

inline DatasetStats compute_stats(const Dataset& d) {
    DatasetStats s;
    s.num_points = d.num_points;
    s.num_features = d.num_features;
    s.num_labels = d.num_labels;
    s.total_positives = d.total_positives();
    std::size_t nnz = 0;
    for (const auto& x : d.features) nnz += x.nnz();
    if (d.num_points > 0) {
        s.avg_labels_per_point = static_cast<double>(s.total_positives) / static_cast<double>(d.num_points);
        s.avg_features_per_point = static_cast<double>(nnz) / static_cast<double>(d.num_points);
    }
    // labels with no positives stay in the denominator
    if (d.num_labels > 0)
        s.avg_points_per_label = static_cast<double>(s.total_positives) / static_cast<double>(d.num_labels);
    return s;
}

/// (label, score) pair used by shortlists, rankings and predictions.
struct ScoredLabel {
    LabelId label = 0;
    double score = 0.0;
    friend bool operator==(const ScoredLabel&, const ScoredLabel&) = default;
};

/// Descending score, ties by lower label id.
inline bool ranks_before(const ScoredLabel& a, const ScoredLabel& b) noexcept {
    if (a.score != b.score) return a.score > b.score;
    return a.label < b.label;
}

inline bool contains_sorted(std::span<const LabelId> sorted, LabelId l) noexcept {
    return std::binary_search(sorted.begin(), sorted.end(), l);
}

}  // namespace astec
