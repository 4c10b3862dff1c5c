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

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "astec/error.hpp"
#include "astec/nn.hpp"
#include "astec/types.hpp"
#include "astec/util.hpp"

namespace astec {

struct TrainConfig {
    double lambda = 0.5;
    double learning_rate = 0.005;
    std::size_t batch_size = 256;
    std::size_t epochs = 30;
    double dropout = 0.5;
    bool train_E = true;
    bool train_R = true;
    double heldout_fraction = 0.05;
    std::size_t threads = 1;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(lambda > 0.0 && lambda <= 1.0)) throw Error(ErrorCode::ConfigError, "lambda must lie in (0, 1]");
        if (!(learning_rate > 0.0)) throw Error(ErrorCode::ConfigError, "learning_rate must be > 0");
        if (batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::ConfigError, "dropout must lie in [0, 1)");
        if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0))
            throw Error(ErrorCode::ConfigError, "heldout_fraction must lie in [0, 1)");
    }
};

/// One line of the JSON-lines training log. Entry 0 is the evaluation at initialization.
struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double heldout_p1 = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
    std::size_t max_labels_per_point = 0;  // |positives| + |negatives| touched by one point
    std::size_t max_labels_per_batch = 0;  // classifier rows touched by one step
    double sigma_R = 0.0;
};

inline nlohmann::json to_json(const EpochLog& e) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    j["heldout_meta_p1"] = nullptr;
    if (std::isfinite(e.heldout_p1)) j["heldout_meta_p1"] = e.heldout_p1;
    j["wall_ms"] = e.wall_ms;
    j["max_labels_per_point"] = e.max_labels_per_point;
    j["max_labels_per_batch"] = e.max_labels_per_batch;
    j["sigma_R"] = e.sigma_R;
    return j;
}

/// Parameters trained by the core loop.
struct FeatureClassifier {
    EmbeddingBank E;
    ResidualBlock R;
    ClassifierBank W;
};

struct StepInfo {
    std::size_t epoch = 0;
    std::size_t step = 0;
    const FeatureClassifier* model = nullptr;
    std::size_t touched_labels = 0;
    double batch_loss = 0.0;
};

using StepCallback = std::function<void(const StepInfo&)>;
using HeldoutEvaluator = std::function<double(const FeatureClassifier&, std::span<const std::uint32_t>)>;

/// Per-point label sets for the logistic objective. When `negatives` is null,
/// every non-positive label is a negative (full 1-vs-all sum).
struct LabelSets {
    std::span<const std::vector<LabelId>> positives;
    const std::vector<std::vector<LabelId>>* negatives = nullptr;
};

/// Seeded (train, heldout) split of [0, n).
inline std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> heldout_split(std::size_t n, double fraction,
                                                                                         std::uint64_t seed) {
    auto perm = epoch_permutation(seed, 0x4e1d, n);
    auto n_held = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    if (n_held >= n) n_held = n - 1;
    std::vector<std::uint32_t> held(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_held));
    std::vector<std::uint32_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_held), perm.end());
    std::sort(held.begin(), held.end());
    std::sort(train.begin(), train.end());
    return {train, held};
}

namespace detail {

inline void complement_labels(std::span<const LabelId> pos, std::size_t num_labels, std::vector<LabelId>& out) {
    out.clear();
    std::size_t k = 0;
    for (LabelId l = 0; l < num_labels; ++l) {
        if (k < pos.size() && pos[k] == l) {
            ++k;
            continue;
        }
        out.push_back(l);
    }
}

}  // namespace detail

/// Mini-batch Adam on sum_{l in S_i} log(1 + exp(-y_il w_l.x^_i)), averaged over
/// the batch, with the spectral constraint re-imposed after every step.
/// Gradients touch only the classifier rows in S_i, R, and (when trained) the
/// embedding rows of the point's tokens.
inline std::vector<EpochLog> train_feature_classifier(const Dataset& d, const LabelSets& sets, FeatureClassifier& model,
                                                      const TrainConfig& cfg, std::span<const std::uint32_t> train_ids,
                                                      std::span<const std::uint32_t> heldout_ids,
                                                      const HeldoutEvaluator& evaluate = {}, const StepCallback& on_step = {}) {
    cfg.validate();
    const std::size_t D = model.E.dim(), K = model.W.num_labels(), V = model.E.vocab();
    if (model.R.dim() != D || model.W.dim() != D) throw Error(ErrorCode::ShapeMismatch, "model dims disagree");
    if (sets.positives.size() != d.num_points) throw Error(ErrorCode::ShapeMismatch, "positives per point");
    if (sets.negatives && sets.negatives->size() != d.num_points)
        throw Error(ErrorCode::MissingShortlist, "negative sets cover " + std::to_string(sets.negatives->size()) + " of " +
                                                     std::to_string(d.num_points) + " points");
    model.R.lambda = cfg.lambda;

    const AdamConfig adam{cfg.learning_rate};
    AdamState adam_R;
    LazyRowAdam adam_W(K, D);
    LazyRowAdam adam_E(cfg.train_E ? V : 0, D);
    warm_up_power_iteration(model.R);

    const std::size_t threads = std::max<std::size_t>(1, cfg.threads);
    std::vector<GradAccumulator> accs;
    for (std::size_t t = 0; t < threads; ++t) accs.emplace_back(D, K, V, cfg.train_R, cfg.train_E);
    std::vector<std::vector<LabelId>> scratch(threads);

    auto negatives_of = [&](std::uint32_t i, std::size_t t) -> std::span<const LabelId> {
        if (sets.negatives) return (*sets.negatives)[i];
        detail::complement_labels(sets.positives[i], K, scratch[t]);
        return scratch[t];
    };

    std::vector<EpochLog> log;
    {
        Stopwatch sw;
        EpochLog e;
        double total = 0.0;
        std::vector<LabelId> neg;
        for (auto i : train_ids) {
            std::span<const LabelId> ns = sets.negatives ? std::span<const LabelId>((*sets.negatives)[i]) : std::span<const LabelId>();
            if (!sets.negatives) {
                detail::complement_labels(sets.positives[i], K, neg);
                ns = neg;
            }
            total += logistic_loss(d.features[i], model.E, model.R, model.W, sets.positives[i], ns);
        }
        e.mean_loss = train_ids.empty() ? 0.0 : total / static_cast<double>(train_ids.size());
        if (evaluate && !heldout_ids.empty()) e.heldout_p1 = evaluate(model, heldout_ids);
        e.sigma_R = model.R.sigma_estimate;
        e.wall_ms = sw.ms();
        log.push_back(e);
    }

    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Stopwatch sw;
        EpochLog e;
        e.epoch = epoch;
        double epoch_loss = 0.0;
        const auto perm = epoch_permutation(cfg.seed, epoch, train_ids.size());
        for (std::size_t b = 0; b < perm.size(); b += cfg.batch_size) {
            const std::size_t bend = std::min(perm.size(), b + cfg.batch_size);
            const double scale = 1.0 / static_cast<double>(bend - b);
            std::vector<std::size_t> per_thread_max(threads, 0);
            for (auto& acc : accs) acc.clear();
            parallel_for(bend - b, threads, [&](std::size_t lo, std::size_t hi, std::size_t t) {
                auto& acc = accs[t];
                for (std::size_t k = b + lo; k < b + hi; ++k) {
                    const std::uint32_t i = train_ids[perm[k]];
                    Rng rng(derive_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 40) ^ i));
                    const auto m1 = make_dropout_mask(D, cfg.dropout, rng);
                    const auto m2 = make_dropout_mask(D, cfg.dropout, rng);
                    const auto ns = negatives_of(i, t);
                    per_thread_max[t] = std::max(per_thread_max[t], sets.positives[i].size() + ns.size());
                    accumulate_point_grads(d.features[i], model.E, model.R, model.W, sets.positives[i], ns, m1, m2, scale, acc);
                }
            });
            auto& acc = accs[0];
            for (std::size_t t = 1; t < threads; ++t) acc.merge(accs[t]);
            const double batch_loss = acc.loss / scale;
            if (!std::isfinite(batch_loss))
                throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                                                          ": batch loss " + std::to_string(batch_loss));
            epoch_loss += batch_loss;
            for (auto m : per_thread_max) e.max_labels_per_point = std::max(e.max_labels_per_point, m);
            e.max_labels_per_batch = std::max(e.max_labels_per_batch, acc.grad_W.touched());

            adam_W.step(model.W.weights, acc.grad_W, adam);
            if (cfg.train_E) adam_E.step(model.E.table, acc.grad_E, adam);
            if (cfg.train_R) {
                adam_step(model.R.R.data(), acc.grad_R.data(), adam_R, adam);
                project_spectral(model.R);
            }
            ++step;
            if (on_step) on_step({epoch, step, &model, acc.grad_W.touched(), batch_loss});
        }
        e.mean_loss = train_ids.empty() ? 0.0 : epoch_loss / static_cast<double>(train_ids.size());
        if (evaluate && !heldout_ids.empty()) e.heldout_p1 = evaluate(model, heldout_ids);
        e.sigma_R = model.R.sigma_estimate;
        e.wall_ms = sw.ms();
        log.push_back(e);
    }
    return log;
}

}  // namespace astec
