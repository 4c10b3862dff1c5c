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

// Hard-negative shortlists from two ANNS indices: one over document vectors,
// one over label representatives. Uniform and unigram samplers are baselines.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "astec/error.hpp"
#include "astec/hnsw.hpp"
#include "astec/linalg.hpp"
#include "astec/nn.hpp"
#include "astec/types.hpp"
#include "astec/util.hpp"
#include "astec/xast.hpp"
#include "astec/xc_format.hpp"

namespace astec {

/// Per-point feature vectors: raw (for training) and unit-normalized (for indexing).
struct CorpusEmbedding {
    DenseMatrix raw;
    DenseMatrix unit;
    std::vector<bool> zero;  // raw vector is all zeros; excluded from indices

    [[nodiscard]] std::size_t size() const noexcept { return raw.rows(); }
};

/// v_i = embed_bag(x_i, E), or x^_i when `R` is given.
inline CorpusEmbedding embed_corpus(const Dataset& d, const EmbeddingBank& E, const ResidualBlock* R = nullptr,
                                    std::size_t threads = 1) {
    const std::size_t D = E.dim();
    CorpusEmbedding c{DenseMatrix(d.num_points, D), DenseMatrix(d.num_points, D), std::vector<bool>(d.num_points, false)};
    std::vector<char> zero(d.num_points, 0);
    parallel_for(d.num_points, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t i = lo; i < hi; ++i) {
            auto v = embed_bag(d.features[i], E);
            if (R) v = residual_forward(v, *R);
            std::copy(v.begin(), v.end(), c.raw.row(i).begin());
            if (normalize(v) == 0.0) zero[i] = 1;
            std::copy(v.begin(), v.end(), c.unit.row(i).begin());
        }
    });
    for (std::size_t i = 0; i < d.num_points; ++i) c.zero[i] = zero[i] != 0;
    return c;
}

struct LabelRepresentatives {
    DenseMatrix vectors;                 // unit rows
    std::vector<LabelId> owner;          // row -> label
    std::vector<std::uint32_t> centers;  // label -> extra k-means centers (0 for non-head labels)
    std::vector<bool> has_centroid;      // label has at least one nonzero positive

    [[nodiscard]] std::size_t size() const noexcept { return owner.size(); }
};

/// Spherical k-means over unit rows `pts`; returns unit centers.
inline std::vector<std::vector<double>> spherical_kmeans(const std::vector<std::span<const double>>& pts, std::size_t k,
                                                         std::uint64_t seed, std::size_t iters = 25) {
    if (pts.empty() || k == 0) return {};
    k = std::min(k, pts.size());
    const std::size_t D = pts.front().size();
    Rng rng(seed);
    std::vector<std::vector<double>> centers;
    const auto first = pts[rng.index(pts.size())];
    centers.emplace_back(first.begin(), first.end());
    std::vector<double> dist(pts.size());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double best = 2.0;
            for (const auto& c : centers) best = std::min(best, 1.0 - dot(pts[i], c));
            dist[i] = std::max(best, 0.0);
            total += dist[i];
        }
        std::size_t pick = rng.index(pts.size());
        if (total > 0.0) {
            double r = rng.uniform() * total;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (dist[i] <= 0.0) continue;
                pick = i;
                r -= dist[i];
                if (r < 0.0) break;
            }
        }
        centers.emplace_back(pts[pick].begin(), pts[pick].end());
    }
    std::vector<std::size_t> assign(pts.size(), k);
    for (std::size_t it = 0; it < iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            std::size_t best = 0;
            double best_s = -2.0;
            for (std::size_t c = 0; c < k; ++c) {
                const double s = dot(pts[i], centers[c]);
                if (s > best_s) {
                    best_s = s;
                    best = c;
                }
            }
            if (assign[i] != best) changed = true;
            assign[i] = best;
        }
        if (!changed) break;
        std::vector<std::vector<double>> sums(k, std::vector<double>(D, 0.0));
        for (std::size_t i = 0; i < pts.size(); ++i) axpy(1.0, pts[i], sums[assign[i]]);
        for (std::size_t c = 0; c < k; ++c)
            if (normalize(sums[c]) > 0.0) centers[c] = std::move(sums[c]);
    }
    return centers;
}

/// mu0_l = normalized mean of raw v over P_l; the `head_count` most frequent labels also get
/// `centers_per_head` spherical k-means centers over their positives when centers_per_head > 1.
inline LabelRepresentatives label_representatives(const Dataset& d, const CorpusEmbedding& c, std::size_t head_count,
                                                  std::size_t centers_per_head, std::uint64_t seed) {
    const std::size_t D = c.raw.cols();
    const auto l2p = d.label_to_points();
    LabelRepresentatives out;
    out.centers.assign(d.num_labels, 0);
    out.has_centroid.assign(d.num_labels, false);
    std::vector<std::vector<double>> rows;
    for (LabelId l = 0; l < d.num_labels; ++l) {
        std::vector<double> mu(D, 0.0);
        for (auto i : l2p[l]) axpy(1.0, c.raw.row(i), mu);
        if (normalize(mu) == 0.0) continue;
        out.has_centroid[l] = true;
        rows.push_back(std::move(mu));
        out.owner.push_back(l);
    }
    if (centers_per_head > 1 && head_count > 0) {
        const auto freq = d.label_frequencies();
        std::vector<LabelId> order(d.num_labels);
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(), [&](LabelId a, LabelId b) { return freq[a] > freq[b]; });
        for (std::size_t h = 0; h < std::min(head_count, order.size()); ++h) {
            const LabelId l = order[h];
            std::vector<std::span<const double>> pts;
            for (auto i : l2p[l])
                if (!c.zero[i]) pts.push_back(c.unit.row(i));
            if (pts.empty()) continue;
            auto centers = spherical_kmeans(pts, centers_per_head, derive_seed(seed, l));
            out.centers[l] = static_cast<std::uint32_t>(centers.size());
            for (auto& ctr : centers) {
                rows.push_back(std::move(ctr));
                out.owner.push_back(l);
            }
        }
    }
    out.vectors = DenseMatrix(rows.size(), D);
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), out.vectors.row(r).begin());
    return out;
}

enum class ShortlistSource : std::uint8_t { Doc = 0, Centroid = 1, Random = 2 };

struct ShortlistEntry {
    LabelId label = 0;
    double score = 0.0;
    ShortlistSource source = ShortlistSource::Doc;
};

struct ShortlistCaps {
    std::size_t doc_route = 300;
    std::size_t centroid_route = 300;
    std::size_t random = 50;
    std::size_t total = 500;

    void validate() const {
        if (random > 50) throw Error(ErrorCode::ConfigError, "random negatives are capped at 50");
        if (total < 1 || random > total) throw Error(ErrorCode::ConfigError, "shortlist total cap must be >= max(1, random)");
    }
};

struct AnnsConfig {
    std::size_t M = 16;
    std::size_t ef_construction = 200;
    std::size_t ef_search = 200;
    std::size_t doc_neighbors = 100;       // documents retrieved per query
    std::size_t centroid_neighbors = 300;  // representatives retrieved per query
    std::size_t head_count = 4;
    std::size_t centers_per_head = 8;
};

struct Shortlist {
    std::size_t num_labels = 0;
    std::vector<std::vector<ShortlistEntry>> rows;

    [[nodiscard]] std::size_t size() const noexcept { return rows.size(); }

    [[nodiscard]] std::vector<LabelId> labels_of(std::size_t i) const {
        std::vector<LabelId> ls;
        for (const auto& e : rows[i]) ls.push_back(e.label);
        std::sort(ls.begin(), ls.end());
        return ls;
    }

    /// Sorted label ids per point, for use as negative sets.
    [[nodiscard]] std::vector<std::vector<LabelId>> label_sets() const {
        std::vector<std::vector<LabelId>> out(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels_of(i);
        return out;
    }

    [[nodiscard]] ScoredRows to_scored_rows() const {
        ScoredRows s;
        s.num_labels = num_labels;
        for (const auto& row : rows) {
            std::vector<ScoredLabel> r;
            for (const auto& e : row) r.push_back({e.label, e.score});
            s.rows.push_back(std::move(r));
        }
        return s;
    }

    void save(xast::Container& c, const std::string& prefix) const {
        std::vector<std::int64_t> offsets{0};
        std::vector<std::uint32_t> labels;
        std::vector<double> scores;
        std::vector<std::uint8_t> sources;
        for (const auto& row : rows) {
            for (const auto& e : row) {
                labels.push_back(e.label);
                scores.push_back(e.score);
                sources.push_back(static_cast<std::uint8_t>(e.source));
            }
            offsets.push_back(static_cast<std::int64_t>(labels.size()));
        }
        c.put_vector<std::int64_t>(prefix + ".offsets", offsets);
        c.put_vector<std::uint32_t>(prefix + ".labels", labels);
        c.put_vector<double>(prefix + ".scores", scores);
        c.put_vector<std::uint8_t>(prefix + ".sources", sources);
        c.put_scalar(prefix + ".num_labels", static_cast<double>(num_labels));
    }

    static Shortlist load(const xast::Container& c, const std::string& prefix) {
        Shortlist s;
        s.num_labels = static_cast<std::size_t>(c.get_scalar(prefix + ".num_labels"));
        const auto offsets = c.get<std::int64_t>(prefix + ".offsets");
        const auto labels = c.get<std::uint32_t>(prefix + ".labels");
        const auto scores = c.get<double>(prefix + ".scores");
        const auto sources = c.get<std::uint8_t>(prefix + ".sources");
        if (offsets.empty() || scores.size() != labels.size() || sources.size() != labels.size() ||
            static_cast<std::size_t>(offsets.back()) != labels.size())
            throw Error(ErrorCode::FormatError, prefix + ": inconsistent shortlist tensors");
        for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
            std::vector<ShortlistEntry> row;
            for (auto k = offsets[i]; k < offsets[i + 1]; ++k) {
                const auto u = static_cast<std::size_t>(k);
                row.push_back({labels[u], scores[u], static_cast<ShortlistSource>(sources[u])});
            }
            s.rows.push_back(std::move(row));
        }
        return s;
    }
};

/// Both ANNS structures plus what is needed to turn neighbors into labels.
struct NegativeIndex {
    HnswIndex docs;  // external ids are document ids
    HnswIndex reps;  // external ids are representative rows
    LabelRepresentatives representatives;
    std::vector<std::vector<LabelId>> doc_labels;
    std::size_t num_labels = 0;
    bool has_docs = false;
    bool has_reps = false;

    void save(xast::Container& c) const {
        if (has_docs) docs.save(c, "anns.docs");
        if (has_reps) reps.save(c, "anns.reps");
        c.put_matrix("reps.vectors", representatives.vectors);
        c.put_vector<std::uint32_t>("reps.owner", representatives.owner);
        c.put_vector<std::uint32_t>("reps.centers", representatives.centers);
        std::vector<std::uint8_t> hc(representatives.has_centroid.begin(), representatives.has_centroid.end());
        c.put_vector<std::uint8_t>("reps.has_centroid", hc);
        std::vector<std::int64_t> offsets{0};
        std::vector<std::uint32_t> flat;
        for (const auto& ls : doc_labels) {
            flat.insert(flat.end(), ls.begin(), ls.end());
            offsets.push_back(static_cast<std::int64_t>(flat.size()));
        }
        c.put_vector<std::int64_t>("doc_labels.offsets", offsets);
        c.put_vector<std::uint32_t>("doc_labels.labels", flat);
        c.put_scalar("anns.num_labels", static_cast<double>(num_labels));
    }

    static NegativeIndex load(const xast::Container& c) {
        NegativeIndex n;
        n.has_docs = c.has("anns.docs.vectors");
        n.has_reps = c.has("anns.reps.vectors");
        if (n.has_docs) n.docs = HnswIndex::load(c, "anns.docs");
        if (n.has_reps) n.reps = HnswIndex::load(c, "anns.reps");
        n.representatives.vectors = c.get_matrix("reps.vectors");
        n.representatives.owner = c.get<std::uint32_t>("reps.owner");
        n.representatives.centers = c.get<std::uint32_t>("reps.centers");
        for (auto b : c.get<std::uint8_t>("reps.has_centroid")) n.representatives.has_centroid.push_back(b != 0);
        const auto offsets = c.get<std::int64_t>("doc_labels.offsets");
        const auto flat = c.get<std::uint32_t>("doc_labels.labels");
        for (std::size_t i = 0; i + 1 < offsets.size(); ++i)
            n.doc_labels.emplace_back(flat.begin() + offsets[i], flat.begin() + offsets[i + 1]);
        n.num_labels = static_cast<std::size_t>(c.get_scalar("anns.num_labels"));
        return n;
    }
};

/// Indexes the nonzero document vectors of `train` and the label representatives.
inline NegativeIndex build_negative_index(const Dataset& train, const CorpusEmbedding& c, const AnnsConfig& cfg, std::uint64_t seed) {
    NegativeIndex n;
    n.num_labels = train.num_labels;
    n.doc_labels = train.labels;
    n.representatives = label_representatives(train, c, cfg.head_count, cfg.centers_per_head, derive_seed(seed, 0x4e9));
    std::vector<std::uint32_t> keep;
    for (std::uint32_t i = 0; i < c.size(); ++i)
        if (!c.zero[i]) keep.push_back(i);
    const HnswParams hp{cfg.M, cfg.ef_construction, derive_seed(seed, 0xd0c)};
    if (!keep.empty()) {
        DenseMatrix m(keep.size(), c.unit.cols());
        for (std::size_t r = 0; r < keep.size(); ++r) std::copy(c.unit.row(keep[r]).begin(), c.unit.row(keep[r]).end(), m.row(r).begin());
        n.docs = HnswIndex::build(m, hp, keep);
        n.has_docs = true;
    }
    if (n.representatives.size() > 0) {
        n.reps = HnswIndex::build(n.representatives.vectors, {cfg.M, cfg.ef_construction, derive_seed(seed, 0x3e9)});
        n.has_reps = true;
    }
    return n;
}

struct ShortlistQuery {
    std::span<const double> unit;        // unit query vector, or all zeros
    std::span<const LabelId> positives;  // excluded when `exclude_positives`
    std::int64_t self = -1;              // document id skipped in the doc route
    bool exclude_positives = true;
};

/// Shortlist for one point. ANNS entries are ranked by score and truncated to
/// total - random; random negatives (score 0) follow.
inline std::vector<ShortlistEntry> shortlist_for(const NegativeIndex& idx, const ShortlistQuery& q, const ShortlistCaps& caps,
                                                 const AnnsConfig& cfg, Rng& rng) {
    const bool nonzero = std::any_of(q.unit.begin(), q.unit.end(), [](double x) { return x != 0.0; });
    auto excluded = [&](LabelId l) { return q.exclude_positives && contains_sorted(q.positives, l); };
    std::vector<ShortlistEntry> doc_route, cen_route;
    if (nonzero && idx.has_docs && cfg.doc_neighbors > 0) {
        const std::size_t k = std::min(idx.docs.size(), cfg.doc_neighbors + (q.self >= 0 ? 1 : 0));
        std::unordered_map<LabelId, double> best;
        for (const auto& nb : idx.docs.query(q.unit, k, cfg.ef_search)) {
            if (static_cast<std::int64_t>(nb.id) == q.self) continue;
            for (LabelId l : idx.doc_labels[nb.id]) {
                if (excluded(l)) continue;
                auto [it, fresh] = best.emplace(l, nb.sim);
                if (!fresh) it->second = std::max(it->second, nb.sim);
            }
        }
        for (const auto& [l, s] : best) doc_route.push_back({l, s, ShortlistSource::Doc});
    }
    if (nonzero && idx.has_reps && cfg.centroid_neighbors > 0) {
        const std::size_t k = std::min(idx.reps.size(), cfg.centroid_neighbors);
        std::unordered_map<LabelId, double> best;
        for (const auto& nb : idx.reps.query(q.unit, k, cfg.ef_search)) {
            const LabelId l = idx.representatives.owner[nb.id];
            if (excluded(l)) continue;
            auto [it, fresh] = best.emplace(l, nb.sim);
            if (!fresh) it->second = std::max(it->second, nb.sim);
        }
        for (const auto& [l, s] : best) cen_route.push_back({l, s, ShortlistSource::Centroid});
    }
    auto by_score = [](const ShortlistEntry& a, const ShortlistEntry& b) {
        return a.score != b.score ? a.score > b.score : a.label < b.label;
    };
    auto cap_route = [&](std::vector<ShortlistEntry>& r, std::size_t cap) {
        std::sort(r.begin(), r.end(), by_score);
        if (r.size() > cap) r.resize(cap);
    };
    cap_route(doc_route, caps.doc_route);
    cap_route(cen_route, caps.centroid_route);

    std::unordered_map<LabelId, std::size_t> pos;
    std::vector<ShortlistEntry> merged;
    for (auto* route : {&doc_route, &cen_route})
        for (const auto& e : *route) {
            auto [it, fresh] = pos.emplace(e.label, merged.size());
            if (fresh) merged.push_back(e);
            else if (e.score > merged[it->second].score) merged[it->second] = e;
        }
    cap_route(merged, caps.total - caps.random);

    const std::size_t want = std::min(caps.random, caps.total - merged.size());
    std::vector<LabelId> taken;
    for (const auto& e : merged) taken.push_back(e.label);
    std::sort(taken.begin(), taken.end());
    std::size_t available = idx.num_labels - taken.size();
    if (q.exclude_positives)
        for (LabelId l : q.positives)
            if (!contains_sorted(taken, l)) --available;
    const std::size_t n_random = std::min(want, available);
    std::vector<LabelId> randoms;
    for (std::size_t attempts = 0; randoms.size() < n_random && attempts < 64 * (n_random + 1); ++attempts) {
        const auto l = static_cast<LabelId>(rng.index(idx.num_labels));
        if (excluded(l) || contains_sorted(taken, l) || std::find(randoms.begin(), randoms.end(), l) != randoms.end()) continue;
        randoms.push_back(l);
    }
    for (LabelId l : randoms) merged.push_back({l, 0.0, ShortlistSource::Random});
    return merged;
}

enum class ShortlistMode { Training, Prediction };

/// Shortlists for every point of `d`. `self_indexed` says the points of `d` are the indexed documents.
inline Shortlist build_shortlists(const Dataset& d, const CorpusEmbedding& c, const NegativeIndex& idx, const ShortlistCaps& caps,
                                  const AnnsConfig& cfg, ShortlistMode mode, bool self_indexed, std::uint64_t seed,
                                  std::size_t threads = 1) {
    caps.validate();
    if (c.size() != d.num_points) throw Error(ErrorCode::ShapeMismatch, "embedding count vs dataset");
    Shortlist s;
    s.num_labels = idx.num_labels;
    s.rows.resize(d.num_points);
    parallel_for(d.num_points, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
        for (std::size_t i = lo; i < hi; ++i) {
            Rng rng(derive_seed(seed, i));
            ShortlistQuery q{c.unit.row(i), d.labels[i], self_indexed ? static_cast<std::int64_t>(i) : -1,
                             mode == ShortlistMode::Training};
            s.rows[i] = shortlist_for(idx, q, caps, cfg, rng);
        }
    });
    return s;
}

/// Per-point negatives of the requested sizes drawn uniformly (or by label frequency when
/// `unigram_freq` is given) without replacement from the non-positive labels.
inline Shortlist sample_baseline_shortlists(const Dataset& d, std::span<const std::size_t> sizes, std::uint64_t seed,
                                            const std::vector<std::size_t>* unigram_freq = nullptr) {
    if (sizes.size() != d.num_points) throw Error(ErrorCode::ShapeMismatch, "sizes per point");
    Shortlist s;
    s.num_labels = d.num_labels;
    s.rows.resize(d.num_points);
    std::discrete_distribution<std::size_t> uni;
    if (unigram_freq) {
        if (unigram_freq->size() != d.num_labels) throw Error(ErrorCode::ShapeMismatch, "frequencies per label");
        uni = std::discrete_distribution<std::size_t>(unigram_freq->begin(), unigram_freq->end());
    }
    for (std::size_t i = 0; i < d.num_points; ++i) {
        Rng rng(derive_seed(seed, i));
        std::mt19937_64 eng(rng.next());
        const auto& pos = d.labels[i];
        std::size_t available = d.num_labels - pos.size();
        if (unigram_freq) {
            available = 0;
            for (LabelId l = 0; l < d.num_labels; ++l)
                if ((*unigram_freq)[l] > 0 && !contains_sorted(pos, l)) ++available;
        }
        const std::size_t want = std::min(sizes[i], available);
        std::vector<LabelId> picked;
        for (std::size_t attempts = 0; picked.size() < want && attempts < 256 * (want + 1); ++attempts) {
            const auto l = static_cast<LabelId>(unigram_freq ? uni(eng) : rng.index(d.num_labels));
            if (contains_sorted(pos, l) || std::find(picked.begin(), picked.end(), l) != picked.end()) continue;
            picked.push_back(l);
        }
        for (LabelId l : picked) s.rows[i].push_back({l, 0.0, ShortlistSource::Random});
    }
    return s;
}

struct RecallReport {
    double mean_recall = 0.0;
    std::size_t points_counted = 0;
    std::vector<double> per_point;  // NaN for points without positives
};

/// Fraction of each point's true labels present in its shortlist, averaged over points with labels.
inline RecallReport shortlist_recall(const Shortlist& sl, const Dataset& truth) {
    if (sl.size() != truth.num_points) throw Error(ErrorCode::ShapeMismatch, "shortlist rows vs points");
    RecallReport r;
    r.per_point.assign(truth.num_points, std::numeric_limits<double>::quiet_NaN());
    double total = 0.0;
    for (std::size_t i = 0; i < truth.num_points; ++i) {
        const auto& pos = truth.labels[i];
        if (pos.empty()) continue;
        const auto have = sl.labels_of(i);
        std::size_t hit = 0;
        for (LabelId l : pos)
            if (contains_sorted(have, l)) ++hit;
        r.per_point[i] = static_cast<double>(hit) / static_cast<double>(pos.size());
        total += r.per_point[i];
        ++r.points_counted;
    }
    r.mean_recall = r.points_counted ? total / static_cast<double>(r.points_counted) : 0.0;
    return r;
}

/// Mean Jaccard overlap of label sets; two empty rows count as identical.
inline double shortlist_overlap(const Shortlist& a, const Shortlist& b) {
    if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "shortlists differ in row count");
    if (a.size() == 0) return 1.0;
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto x = a.labels_of(i), y = b.labels_of(i);
        std::vector<LabelId> inter;
        std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(inter));
        const std::size_t uni = x.size() + y.size() - inter.size();
        total += uni == 0 ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni);
    }
    return total / static_cast<double>(a.size());
}

}  // namespace astec
