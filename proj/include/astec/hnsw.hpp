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

// Hierarchical navigable small-world graph over unit vectors, cosine similarity.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "astec/error.hpp"
#include "astec/linalg.hpp"
#include "astec/util.hpp"
#include "astec/xast.hpp"

namespace astec {

struct Neighbor {
    std::uint32_t id = 0;  // external id
    double sim = 0.0;
};

struct HnswParams {
    std::size_t M = 16;
    std::size_t ef_construction = 200;
    std::uint64_t seed = 1;
};

class HnswIndex {
  public:
    HnswIndex() = default;

    /// Builds the index single-threaded. `ids` maps rows to external ids (defaults to row numbers).
    static HnswIndex build(const DenseMatrix& vectors, const HnswParams& p, std::vector<std::uint32_t> ids = {}) {
        if (p.M < 2) throw Error(ErrorCode::InvalidParam, "M must be >= 2");
        if (p.ef_construction < 1) throw Error(ErrorCode::InvalidParam, "efC must be >= 1");
        if (vectors.rows() < 1) throw Error(ErrorCode::InvalidParam, "cannot index zero vectors");
        if (!ids.empty() && ids.size() != vectors.rows()) throw Error(ErrorCode::ShapeMismatch, "ids vs vectors");
        HnswIndex h;
        h.params_ = p;
        h.vectors_ = vectors;
        h.ids_ = std::move(ids);
        if (h.ids_.empty()) {
            h.ids_.resize(vectors.rows());
            for (std::size_t i = 0; i < h.ids_.size(); ++i) h.ids_[i] = static_cast<std::uint32_t>(i);
        }
        Rng rng(derive_seed(p.seed, 0x4853));
        const double ml = 1.0 / std::log(static_cast<double>(p.M));
        h.links_.resize(vectors.rows());
        for (std::uint32_t n = 0; n < vectors.rows(); ++n) {
            double u = rng.uniform();
            if (u <= 0.0) u = 1e-300;
            const auto level = static_cast<std::size_t>(std::floor(-std::log(u) * ml));
            h.insert(n, level);
        }
        h.repair_reachability();
        return h;
    }

    [[nodiscard]] std::size_t size() const noexcept { return vectors_.rows(); }
    [[nodiscard]] std::size_t dim() const noexcept { return vectors_.cols(); }
    [[nodiscard]] const HnswParams& params() const noexcept { return params_; }
    [[nodiscard]] std::size_t max_level() const noexcept { return max_level_; }
    [[nodiscard]] std::uint32_t entry_point() const noexcept { return entry_; }
    [[nodiscard]] std::size_t levels_of(std::uint32_t node) const { return links_.at(node).size(); }
    [[nodiscard]] const std::vector<std::uint32_t>& neighbors(std::uint32_t node, std::size_t level) const {
        return links_.at(node).at(level);
    }
    [[nodiscard]] std::size_t max_degree(std::size_t level) const noexcept { return level == 0 ? 2 * params_.M : params_.M; }
    [[nodiscard]] std::uint32_t external_id(std::uint32_t node) const { return ids_.at(node); }
    [[nodiscard]] const DenseMatrix& vectors() const noexcept { return vectors_; }

    /// Top-k by cosine, descending, ties by lower external id. Exact when ef >= size().
    [[nodiscard]] std::vector<Neighbor> query(std::span<const double> q, std::size_t k, std::size_t ef) const {
        if (q.size() != dim()) throw Error(ErrorCode::DimMismatch, "query has the wrong dimension");
        if (size() == 0 || k == 0) return {};
        ef = std::max(ef, k);
        std::uint32_t cur = entry_;
        double cur_sim = sim(q, cur);
        for (std::size_t lev = max_level_; lev > 0; --lev) greedy(q, lev, cur, cur_sim);
        auto found = search_layer(q, {cur}, ef, 0);
        std::vector<Neighbor> out;
        out.reserve(found.size());
        for (const auto& c : found) out.push_back({ids_[c.id], c.sim});
        std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
            return a.sim != b.sim ? a.sim > b.sim : a.id < b.id;
        });
        if (out.size() > k) out.resize(k);
        return out;
    }

    /// Nodes reachable from the entry point on layer 0.
    [[nodiscard]] std::vector<bool> reachable() const {
        std::vector<bool> seen(size(), false);
        if (size() == 0) return seen;
        std::vector<std::uint32_t> stack{entry_};
        seen[entry_] = true;
        while (!stack.empty()) {
            auto n = stack.back();
            stack.pop_back();
            for (auto m : links_[n][0])
                if (!seen[m]) {
                    seen[m] = true;
                    stack.push_back(m);
                }
        }
        return seen;
    }

    void save(xast::Container& c, const std::string& prefix) const {
        c.put_matrix(prefix + ".vectors", vectors_);
        c.put_vector<std::uint32_t>(prefix + ".ids", ids_);
        c.put_vector<std::int64_t>(prefix + ".params",
                                   {static_cast<std::int64_t>(params_.M), static_cast<std::int64_t>(params_.ef_construction),
                                    static_cast<std::int64_t>(params_.seed), static_cast<std::int64_t>(entry_),
                                    static_cast<std::int64_t>(max_level_)});
        std::vector<std::uint32_t> levels, adj;
        std::vector<std::int64_t> offsets{0};
        for (const auto& node : links_) {
            levels.push_back(static_cast<std::uint32_t>(node.size()));
            for (const auto& lst : node) {
                adj.insert(adj.end(), lst.begin(), lst.end());
                offsets.push_back(static_cast<std::int64_t>(adj.size()));
            }
        }
        c.put_vector<std::uint32_t>(prefix + ".levels", levels);
        c.put_vector<std::int64_t>(prefix + ".offsets", offsets);
        c.put_vector<std::uint32_t>(prefix + ".adj", adj);
    }

    static HnswIndex load(const xast::Container& c, const std::string& prefix) {
        HnswIndex h;
        h.vectors_ = c.get_matrix(prefix + ".vectors");
        h.ids_ = c.get<std::uint32_t>(prefix + ".ids");
        const auto p = c.get<std::int64_t>(prefix + ".params");
        if (p.size() != 5) throw Error(ErrorCode::FormatError, prefix + ".params must have 5 entries");
        h.params_ = {static_cast<std::size_t>(p[0]), static_cast<std::size_t>(p[1]), static_cast<std::uint64_t>(p[2])};
        h.entry_ = static_cast<std::uint32_t>(p[3]);
        h.max_level_ = static_cast<std::size_t>(p[4]);
        const auto levels = c.get<std::uint32_t>(prefix + ".levels");
        const auto offsets = c.get<std::int64_t>(prefix + ".offsets");
        const auto adj = c.get<std::uint32_t>(prefix + ".adj");
        if (levels.size() != h.vectors_.rows() || h.ids_.size() != h.vectors_.rows())
            throw Error(ErrorCode::FormatError, prefix + ": inconsistent node counts");
        h.links_.resize(levels.size());
        std::size_t k = 0;
        for (std::size_t n = 0; n < levels.size(); ++n) {
            h.links_[n].resize(levels[n]);
            for (auto& lst : h.links_[n]) {
                if (k + 1 >= offsets.size()) throw Error(ErrorCode::FormatError, prefix + ": truncated adjacency");
                const auto lo = static_cast<std::size_t>(offsets[k]), hi = static_cast<std::size_t>(offsets[k + 1]);
                if (hi < lo || hi > adj.size()) throw Error(ErrorCode::FormatError, prefix + ": bad adjacency offsets");
                lst.assign(adj.begin() + static_cast<std::ptrdiff_t>(lo), adj.begin() + static_cast<std::ptrdiff_t>(hi));
                for (auto m : lst)
                    if (m >= levels.size()) throw Error(ErrorCode::FormatError, prefix + ": neighbor out of range");
                ++k;
            }
        }
        return h;
    }

  private:
    struct Cand {
        double sim;
        std::uint32_t id;
    };
    // "Better" means higher similarity, then lower node id.
    static bool better(const Cand& a, const Cand& b) noexcept { return a.sim != b.sim ? a.sim > b.sim : a.id < b.id; }
    struct WorstOnTop {
        bool operator()(const Cand& a, const Cand& b) const noexcept { return better(a, b); }
    };
    struct BestOnTop {
        bool operator()(const Cand& a, const Cand& b) const noexcept { return better(b, a); }
    };

    double sim(std::span<const double> q, std::uint32_t n) const noexcept { return dot(q, vectors_.row(n)); }
    double sim(std::uint32_t a, std::uint32_t b) const noexcept { return dot(vectors_.row(a), vectors_.row(b)); }

    void greedy(std::span<const double> q, std::size_t level, std::uint32_t& cur, double& cur_sim) const {
        bool moved = true;
        while (moved) {
            moved = false;
            for (auto m : links_[cur][level]) {
                const double s = sim(q, m);
                if (better({s, m}, {cur_sim, cur})) {
                    cur = m;
                    cur_sim = s;
                    moved = true;
                }
            }
        }
    }

    // Returns up to ef best nodes, sorted best first.
    std::vector<Cand> search_layer(std::span<const double> q, const std::vector<std::uint32_t>& entries, std::size_t ef,
                                   std::size_t level) const {
        std::vector<bool> visited(size(), false);
        std::priority_queue<Cand, std::vector<Cand>, BestOnTop> frontier;
        std::priority_queue<Cand, std::vector<Cand>, WorstOnTop> result;
        for (auto e : entries) {
            if (visited[e]) continue;
            visited[e] = true;
            Cand c{sim(q, e), e};
            frontier.push(c);
            result.push(c);
            if (result.size() > ef) result.pop();
        }
        while (!frontier.empty()) {
            const Cand c = frontier.top();
            frontier.pop();
            if (result.size() >= ef && better(result.top(), c)) break;
            for (auto m : links_[c.id][level]) {
                if (visited[m]) continue;
                visited[m] = true;
                Cand nc{sim(q, m), m};
                if (result.size() < ef || better(nc, result.top())) {
                    frontier.push(nc);
                    result.push(nc);
                    if (result.size() > ef) result.pop();
                }
            }
        }
        std::vector<Cand> out;
        out.reserve(result.size());
        while (!result.empty()) {
            out.push_back(result.top());
            result.pop();
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    // Diversity heuristic: keep a candidate unless it is closer to an already kept one than to the base.
    // Discarded candidates fill any remaining slots.
    std::vector<std::uint32_t> select_neighbors(const std::vector<Cand>& sorted, std::size_t m) const {
        std::vector<std::uint32_t> keep, dropped;
        for (const auto& c : sorted) {
            if (keep.size() >= m) break;
            bool ok = true;
            for (auto r : keep)
                if (sim(c.id, r) > c.sim) {
                    ok = false;
                    break;
                }
            (ok ? keep : dropped).push_back(c.id);
        }
        for (auto d : dropped) {
            if (keep.size() >= m) break;
            keep.push_back(d);
        }
        return keep;
    }

    void shrink(std::uint32_t n, std::size_t level) {
        auto& lst = links_[n][level];
        const std::size_t cap = max_degree(level);
        if (lst.size() <= cap) return;
        std::vector<Cand> cands;
        cands.reserve(lst.size());
        for (auto m : lst) cands.push_back({sim(n, m), m});
        std::sort(cands.begin(), cands.end(), better);
        lst = select_neighbors(cands, cap);
    }

    void insert(std::uint32_t n, std::size_t level) {
        links_[n].assign(level + 1, {});
        if (n == 0) {
            entry_ = 0;
            max_level_ = level;
            return;
        }
        const auto q = vectors_.row(n);
        std::uint32_t cur = entry_;
        double cur_sim = sim(q, cur);
        for (std::size_t lev = max_level_; lev > level; --lev) greedy(q, lev, cur, cur_sim);
        std::vector<std::uint32_t> eps{cur};
        for (std::size_t lev = std::min(level, max_level_) + 1; lev-- > 0;) {
            auto found = search_layer(q, eps, params_.ef_construction, lev);
            links_[n][lev] = select_neighbors(found, params_.M);
            for (auto m : links_[n][lev]) {
                links_[m][lev].push_back(n);
                shrink(m, lev);
            }
            eps.clear();
            for (const auto& c : found) eps.push_back(c.id);
        }
        if (level > max_level_) {
            max_level_ = level;
            entry_ = n;
        }
    }

    void repair_reachability() {
        for (std::size_t guard = 0; guard < 4 * size() + 4; ++guard) {
            const auto seen = reachable();
            auto it = std::find(seen.begin(), seen.end(), false);
            if (it == seen.end()) return;
            const auto u = static_cast<std::uint32_t>(it - seen.begin());
            std::vector<Cand> reached;
            for (std::uint32_t r = 0; r < size(); ++r)
                if (seen[r]) reached.push_back({sim(u, r), r});
            std::sort(reached.begin(), reached.end(), better);
            const std::size_t cap = max_degree(0);
            std::uint32_t host = reached.front().id;
            bool has_room = false;
            for (const auto& c : reached)
                if (links_[c.id][0].size() < cap) {
                    host = c.id;
                    has_room = true;
                    break;
                }
            auto& lst = links_[host][0];
            if (!has_room) lst.pop_back();
            lst.push_back(u);
            if (links_[u][0].size() < cap) links_[u][0].push_back(host);
        }
        throw Error(ErrorCode::DegenerateInput, "HNSW reachability repair did not converge");
    }

    HnswParams params_;
    DenseMatrix vectors_;
    std::vector<std::uint32_t> ids_;
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> level -> neighbors
    std::uint32_t entry_ = 0;
    std::size_t max_level_ = 0;
};

}  // namespace astec
