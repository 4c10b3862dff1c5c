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

// Four-stage orchestration (surrogate, shortlist, extreme, rerank), JSON
// configuration, and on-disk model bundles with resumable stages.

#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "astec/clustering.hpp"
#include "astec/extreme.hpp"
#include "astec/metrics.hpp"
#include "astec/predictor.hpp"
#include "astec/reranker.hpp"
#include "astec/sampler.hpp"
#include "astec/surrogate.hpp"
#include "astec/util.hpp"
#include "astec/xc_format.hpp"

namespace astec {

using ordered_json = nlohmann::ordered_json;

struct DataSection {
    std::string train;
    std::string test;
    bool tfidf = false;

    template <class F>
    void fields(F&& f) {
        f("train", train);
        f("test", test);
        f("tfidf", tfidf);
    }
};

struct SurrogateSection {
    std::size_t dim = 64;
    std::size_t num_meta = 64;
    double lambda = 0.5;
    double learning_rate = 0.02;
    std::size_t batch_size = 64;
    std::size_t epochs = 10;
    double dropout = 0.2;
    double heldout_fraction = 0.05;
    bool use_correlation = false;
    std::size_t walks_per_label = 20;
    std::size_t walk_len = 2;
    std::string pretrained;

    template <class F>
    void fields(F&& f) {
        f("dim", dim);
        f("num_meta", num_meta);
        f("lambda", lambda);
        f("learning_rate", learning_rate);
        f("batch_size", batch_size);
        f("epochs", epochs);
        f("dropout", dropout);
        f("heldout_fraction", heldout_fraction);
        f("use_correlation", use_correlation);
        f("walks_per_label", walks_per_label);
        f("walk_len", walk_len);
        f("pretrained", pretrained);
    }
};

struct AnnsSection {
    AnnsConfig anns{16, 200, 200, 16, 16, 4, 8};
    ShortlistCaps caps{16, 16, 4, 24};
    std::string sampler = "anns";  // anns | uniform | unigram

    template <class F>
    void fields(F&& f) {
        f("M", anns.M);
        f("ef_construction", anns.ef_construction);
        f("ef_search", anns.ef_search);
        f("doc_neighbors", anns.doc_neighbors);
        f("centroid_neighbors", anns.centroid_neighbors);
        f("head_count", anns.head_count);
        f("centers_per_head", anns.centers_per_head);
        f("cap_doc_route", caps.doc_route);
        f("cap_centroid_route", caps.centroid_route);
        f("cap_random", caps.random);
        f("cap_total", caps.total);
        f("sampler", sampler);
    }
};

struct ExtremeSection {
    double lambda = 0.5;
    double learning_rate = 0.02;
    std::size_t batch_size = 64;
    std::size_t epochs = 20;
    double dropout = 0.0;
    bool fine_tune_E = false;
    double heldout_fraction = 0.05;

    template <class F>
    void fields(F&& f) {
        f("lambda", lambda);
        f("learning_rate", learning_rate);
        f("batch_size", batch_size);
        f("epochs", epochs);
        f("dropout", dropout);
        f("fine_tune_E", fine_tune_E);
        f("heldout_fraction", heldout_fraction);
    }
};

struct RerankerSection {
    bool enabled = true;
    std::size_t k = 10;
    double lambda = 0.5;
    double learning_rate = 0.005;
    std::size_t batch_size = 64;
    std::size_t epochs = 2;
    double dropout = 0.2;

    template <class F>
    void fields(F&& f) {
        f("enabled", enabled);
        f("k", k);
        f("lambda", lambda);
        f("learning_rate", learning_rate);
        f("batch_size", batch_size);
        f("epochs", epochs);
        f("dropout", dropout);
    }
};

struct PredictSection {
    PredictConfig cfg;

    template <class F>
    void fields(F&& f) {
        f("alpha", cfg.alpha);
        f("beta", cfg.beta);
        f("top_k", cfg.top_k);
    }
};

struct MetricsSection {
    MetricConfig cfg;

    template <class F>
    void fields(F&& f) {
        f("ks", cfg.ks);
        f("A", cfg.A);
        f("B", cfg.B);
        f("bins", cfg.bins);
    }
};

struct PipelineConfig {
    DataSection data;
    SurrogateSection surrogate;
    AnnsSection anns;
    ExtremeSection extreme;
    RerankerSection reranker;
    PredictSection predict;
    MetricsSection metrics;
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    template <class F>
    void sections(F&& f) {
        f("data", data);
        f("surrogate", surrogate);
        f("anns", anns);
        f("extreme", extreme);
        f("reranker", reranker);
        f("predict", predict);
        f("metrics", metrics);
    }

    void validate() const;
};

namespace detail {

template <class Section>
ordered_json section_to_json(Section s) {
    ordered_json j = ordered_json::object();
    s.fields([&](const char* key, const auto& value) { j[key] = value; });
    return j;
}

template <class Section>
void section_from_json(const nlohmann::json& j, Section& s, const std::string& name) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, "section '" + name + "' must be an object");
    std::set<std::string> known;
    s.fields([&](const char* key, auto& value) {
        known.insert(key);
        if (!j.contains(key)) return;
        try {
            value = j.at(key).get<std::decay_t<decltype(value)>>();
        } catch (const nlohmann::json::exception&) {
            throw Error(ErrorCode::ConfigError, "bad value for " + name + "." + key + ": " + j.at(key).dump());
        }
    });
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw Error(ErrorCode::ConfigError, "unknown key " + name + "." + key);
}

}  // namespace detail

inline ordered_json config_to_json(PipelineConfig c) {
    ordered_json j;
    c.sections([&](const char* name, auto& s) { j[name] = detail::section_to_json(s); });
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    return j;
}

/// Overlays `j` on `base`; unknown keys are rejected.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {}) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
    std::set<std::string> known{"seed", "threads"};
    base.sections([&](const char* name, auto& s) {
        known.insert(name);
        if (j.contains(name)) detail::section_from_json(j.at(name), s, name);
    });
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
    try {
        if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("threads")) base.threads = j.at("threads").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("bad global value: ") + e.what());
    }
    base.validate();
    return base;
}

inline PipelineConfig load_config_file(const std::string& path, PipelineConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, "config " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j, std::move(base));
}

inline TrainConfig surrogate_train_config(const PipelineConfig& c) {
    TrainConfig t;
    t.lambda = c.surrogate.lambda;
    t.learning_rate = c.surrogate.learning_rate;
    t.batch_size = c.surrogate.batch_size;
    t.epochs = c.surrogate.epochs;
    t.dropout = c.surrogate.dropout;
    t.heldout_fraction = c.surrogate.heldout_fraction;
    t.threads = c.threads;
    t.seed = derive_seed(c.seed, 1);
    return t;
}

inline ExtremeConfig extreme_config(const PipelineConfig& c) {
    ExtremeConfig e;
    e.train.lambda = c.extreme.lambda;
    e.train.learning_rate = c.extreme.learning_rate;
    e.train.batch_size = c.extreme.batch_size;
    e.train.epochs = c.extreme.epochs;
    e.train.dropout = c.extreme.dropout;
    e.train.heldout_fraction = c.extreme.heldout_fraction;
    e.train.threads = c.threads;
    e.train.seed = derive_seed(c.seed, 3);
    e.fine_tune_E = c.extreme.fine_tune_E;
    e.alpha = c.predict.cfg.alpha;
    return e;
}

inline ExtremeConfig reranker_config(const PipelineConfig& c) {
    ExtremeConfig e;
    e.train.lambda = c.reranker.lambda;
    e.train.learning_rate = c.reranker.learning_rate;
    e.train.batch_size = c.reranker.batch_size;
    e.train.epochs = c.reranker.epochs;
    e.train.dropout = c.reranker.dropout;
    e.train.heldout_fraction = 0.0;
    e.train.threads = c.threads;
    e.train.seed = derive_seed(c.seed, 4);
    e.fine_tune_E = true;
    e.alpha = c.predict.cfg.alpha;
    return e;
}

inline void PipelineConfig::validate() const {
    if (surrogate.dim < 1) throw Error(ErrorCode::ConfigError, "surrogate.dim must be >= 1");
    if (surrogate.num_meta < 1) throw Error(ErrorCode::ConfigError, "surrogate.num_meta must be >= 1");
    surrogate_train_config(*this).validate();
    extreme_config(*this).train.validate();
    if (reranker.enabled) reranker_config(*this).train.validate();
    anns.caps.validate();
    if (anns.anns.M < 2) throw Error(ErrorCode::ConfigError, "anns.M must be >= 2");
    if (anns.sampler != "anns" && anns.sampler != "uniform" && anns.sampler != "unigram")
        throw Error(ErrorCode::ConfigError, "anns.sampler must be anns, uniform or unigram");
    predict.cfg.validate();
    if (metrics.cfg.bins < 1) throw Error(ErrorCode::ConfigError, "metrics.bins must be >= 1");
    for (auto k : metrics.cfg.ks)
        if (k < 1) throw Error(ErrorCode::ConfigError, "metrics.ks entries must be >= 1");
}

/// Desk-scale defaults, tuned for the planted benchmark.
inline PipelineConfig desk_preset() { return PipelineConfig{}; }

/// Full-scale settings: L_hat = 2^16, shortlist 500, HNSW (M, efC, efS) = (100, 300, 300).
inline PipelineConfig paper_preset() {
    PipelineConfig c;
    c.surrogate.dim = 300;
    c.surrogate.num_meta = 65536;
    c.surrogate.learning_rate = 0.005;
    c.surrogate.batch_size = 256;
    c.surrogate.epochs = 30;
    c.surrogate.dropout = 0.5;
    c.anns.anns = AnnsConfig{100, 300, 300, 300, 300, 4, 300};
    c.anns.caps = ShortlistCaps{300, 300, 50, 500};
    c.extreme.learning_rate = 0.002;
    c.extreme.batch_size = 256;
    c.extreme.epochs = 30;
    c.extreme.dropout = 0.5;
    c.reranker.learning_rate = 0.002;
    c.reranker.batch_size = 256;
    c.reranker.epochs = 30;
    c.reranker.dropout = 0.5;
    return c;
}

inline PipelineConfig preset(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "paper") return paper_preset();
    throw Error(ErrorCode::ConfigError, "unknown preset '" + name + "'");
}

enum class Stage { Surrogate = 0, Shortlist = 1, Extreme = 2, Rerank = 3 };
inline constexpr std::array<const char*, 4> kStageNames{"surrogate", "shortlist", "extreme", "rerank"};

inline Stage parse_stage(const std::string& s) {
    for (std::size_t k = 0; k < kStageNames.size(); ++k)
        if (s == kStageNames[k]) return static_cast<Stage>(k);
    throw Error(ErrorCode::ConfigError, "unknown stage '" + s + "'");
}

/// Comma-separated stage names, or "all".
inline std::vector<Stage> parse_stages(const std::string& list) {
    if (list == "all") return {Stage::Surrogate, Stage::Shortlist, Stage::Extreme, Stage::Rerank};
    std::vector<Stage> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(parse_stage(item));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline std::string hex64(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

/// Content hash per stage; each hash chains the one before it.
inline std::array<std::string, 4> stage_hashes(const PipelineConfig& c, const Dataset& train) {
    const auto data_h = fnv1a64(to_xc_string(train));
    auto j = config_to_json(c);
    const std::string base = hex64(data_h) + "|" + j["seed"].dump() + "|" + j["data"]["tfidf"].dump();
    std::array<std::string, 4> h;
    h[0] = hex64(fnv1a64(base + j["surrogate"].dump()));
    h[1] = hex64(fnv1a64(h[0] + j["anns"].dump()));
    h[2] = hex64(fnv1a64(h[1] + j["extreme"].dump() + j["predict"]["alpha"].dump()));
    h[3] = hex64(fnv1a64(h[2] + j["reranker"].dump()));
    return h;
}

struct StageReport {
    std::string name;
    bool resumed = false;
    double wall_ms = 0.0;
};

/// Artifacts of a pipeline run (or of a loaded bundle).
struct PipelineState {
    std::optional<EmbeddingBank> E;
    std::optional<ClusterTree> tree;
    std::optional<NegativeIndex> index;
    std::optional<Shortlist> train_shortlist;  // negatives used for training
    std::optional<Shortlist> eval_shortlist;   // prediction-mode rows for training points, self excluded
    std::optional<ExtremeModel> extreme;
    std::optional<RerankerModel> reranker;
    std::vector<EpochLog> surrogate_log, extreme_log, rerank_log;
    std::vector<StageReport> stages;
    double mean_mined = 0.0;
};

namespace bundle {

inline std::filesystem::path file(const std::string& dir, const std::string& name) { return std::filesystem::path(dir) / name; }

inline nlohmann::json read_manifest(const std::string& dir) {
    std::ifstream in(file(dir, "manifest.json"));
    if (!in) return nlohmann::json{{"stages", nlohmann::json::object()}};
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::FormatError, std::string("manifest.json: ") + e.what());
    }
    if (!j.contains("stages")) j["stages"] = nlohmann::json::object();
    return j;
}

inline void write_manifest(const std::string& dir, const nlohmann::json& j) {
    std::ofstream out(file(dir, "manifest.json"));
    if (!out) throw Error(ErrorCode::IoError, "cannot write manifest in " + dir);
    out << j.dump(2) << '\n';
}

inline void write_log(const std::string& dir, const std::string& name, const std::vector<EpochLog>& log) {
    std::ofstream out(file(dir, name));
    for (const auto& e : log) out << to_json(e).dump() << '\n';
}

inline void save_stage(const std::string& dir, Stage s, const PipelineState& st) {
    xast::Container c;
    switch (s) {
        case Stage::Surrogate: {
            c.put_matrix("surrogate.E", st.E->table);
            c.save(file(dir, "surrogate.xast").string());
            std::ofstream(file(dir, "tree.json")) << tree_to_json(*st.tree).dump() << '\n';
            write_log(dir, "surrogate_log.jsonl", st.surrogate_log);
            break;
        }
        case Stage::Shortlist:
            st.index->save(c);
            st.train_shortlist->save(c, "train_sl");
            st.eval_shortlist->save(c, "eval_sl");
            c.save(file(dir, "shortlist.xast").string());
            break;
        case Stage::Extreme:
            save_feature_classifier(c, "base", *st.extreme);
            c.save(file(dir, "extreme.xast").string());
            write_log(dir, "extreme_log.jsonl", st.extreme_log);
            break;
        case Stage::Rerank:
            if (st.reranker) save_reranker(c, *st.reranker);
            c.save(file(dir, "rerank.xast").string());
            write_log(dir, "rerank_log.jsonl", st.rerank_log);
            break;
    }
}

inline void load_stage(const std::string& dir, Stage s, PipelineState& st) {
    switch (s) {
        case Stage::Surrogate: {
            auto c = xast::Container::load(file(dir, "surrogate.xast").string());
            st.E = EmbeddingBank{c.get_matrix("surrogate.E")};
            std::ifstream in(file(dir, "tree.json"));
            nlohmann::json j;
            in >> j;
            st.tree = tree_from_json(j);
            break;
        }
        case Stage::Shortlist: {
            auto c = xast::Container::load(file(dir, "shortlist.xast").string());
            st.index = NegativeIndex::load(c);
            st.train_shortlist = Shortlist::load(c, "train_sl");
            st.eval_shortlist = Shortlist::load(c, "eval_sl");
            break;
        }
        case Stage::Extreme: {
            auto c = xast::Container::load(file(dir, "extreme.xast").string());
            st.extreme = load_feature_classifier(c, "base");
            break;
        }
        case Stage::Rerank: {
            auto c = xast::Container::load(file(dir, "rerank.xast").string());
            if (c.has("rerank.E")) st.reranker = load_reranker(c);
            break;
        }
    }
}

}  // namespace bundle

struct RunOptions {
    std::string bundle_dir;  // empty: keep everything in memory
    std::vector<Stage> stages{Stage::Surrogate, Stage::Shortlist, Stage::Extreme, Stage::Rerank};
    bool verbose = false;
};

namespace detail {

inline void run_surrogate(const Dataset& d, const PipelineConfig& c, PipelineState& st) {
    const auto cent = compute_centroids(d);
    std::optional<LabelCorrelation> corr;
    if (c.surrogate.use_correlation)
        corr = estimate_correlation(d, c.surrogate.walks_per_label, c.surrogate.walk_len, derive_seed(c.seed, 0xc0));
    const std::size_t nonempty = d.num_labels - cent.empty_labels.size();
    if (nonempty == 0) throw Error(ErrorCode::DegenerateInput, "no label has a training positive");
    const std::size_t l_hat = std::min(c.surrogate.num_meta, nonempty);
    st.tree = build_cluster_tree(cent, corr ? &*corr : nullptr, l_hat, derive_seed(c.seed, 0xc1));
    const auto meta = make_meta_labels(d, *st.tree);
    SurrogateConfig sc;
    sc.dim = c.surrogate.dim;
    sc.num_meta = l_hat;
    sc.train = surrogate_train_config(c);
    std::optional<EmbeddingBank> init;
    if (!c.surrogate.pretrained.empty()) {
        const auto tv = read_token_vectors(c.surrogate.pretrained);
        init = init_embeddings(d.num_features, sc.dim, &tv, derive_seed(c.seed, 0xe1));
    }
    auto res = train_surrogate(d, meta, sc, init ? &*init : nullptr);
    st.E = std::move(res.model.E);
    st.surrogate_log = std::move(res.log);
}

inline void run_shortlist(const Dataset& d, const PipelineConfig& c, PipelineState& st) {
    const auto corpus = embed_corpus(d, *st.E, nullptr, c.threads);
    st.index = build_negative_index(d, corpus, c.anns.anns, derive_seed(c.seed, 2));
    auto sl = build_shortlists(d, corpus, *st.index, c.anns.caps, c.anns.anns, ShortlistMode::Training, true,
                               derive_seed(c.seed, 0x51), c.threads);
    ShortlistCaps eval_caps = c.anns.caps;
    eval_caps.random = 0;
    st.eval_shortlist = build_shortlists(d, corpus, *st.index, eval_caps, c.anns.anns, ShortlistMode::Prediction, true,
                                         derive_seed(c.seed, 0x52), c.threads);
    if (c.anns.sampler != "anns") {
        std::vector<std::size_t> sizes(d.num_points);
        for (std::size_t i = 0; i < d.num_points; ++i) sizes[i] = sl.rows[i].size();
        const auto freq = d.label_frequencies();
        sl = sample_baseline_shortlists(d, sizes, derive_seed(c.seed, 0x53), c.anns.sampler == "unigram" ? &freq : nullptr);
    }
    st.train_shortlist = std::move(sl);
}

inline void run_extreme(const Dataset& d, const PipelineConfig& c, PipelineState& st) {
    auto res = train_extreme(d, *st.E, st.train_shortlist->label_sets(), extreme_config(c), &*st.eval_shortlist);
    st.extreme = std::move(res.model);
    st.extreme_log = std::move(res.log);
}

inline void run_rerank(const Dataset& d, const PipelineConfig& c, PipelineState& st) {
    st.reranker.reset();
    st.rerank_log.clear();
    if (!c.reranker.enabled) return;
    const auto ts = mine_mispredictions(*st.extreme, *st.eval_shortlist, d, c.reranker.k, c.predict.cfg.alpha, c.threads);
    st.mean_mined = ts.mean_mined;
    st.reranker = train_reranker(d, ts, *st.E, reranker_config(c), &st.rerank_log);
}

}  // namespace detail

/// Runs the requested stages in order. A stage that is not requested, or whose bundle artifact
/// matches the current config hash, is loaded instead; a missing prerequisite is an error.
inline PipelineState run_pipeline(const Dataset& train, const PipelineConfig& cfg, const RunOptions& opt = {}) {
    cfg.validate();
    const bool on_disk = !opt.bundle_dir.empty();
    if (on_disk) std::filesystem::create_directories(opt.bundle_dir);
    const auto hashes = stage_hashes(cfg, train);
    auto manifest = on_disk ? bundle::read_manifest(opt.bundle_dir) : nlohmann::json{{"stages", nlohmann::json::object()}};
    Dataset d = train;
    if (cfg.data.tfidf) recompute_tfidf(d);

    PipelineState st;
    if (opt.stages.empty()) return st;
    const auto last = static_cast<std::size_t>(*std::max_element(opt.stages.begin(), opt.stages.end()));
    bool upstream_fresh = false;
    for (std::size_t s = 0; s <= last; ++s) {
        const auto stage = static_cast<Stage>(s);
        const std::string name = kStageNames[s];
        const bool requested = std::find(opt.stages.begin(), opt.stages.end(), stage) != opt.stages.end();
        const auto& entry = manifest["stages"];
        const bool cached = on_disk && !upstream_fresh && entry.contains(name) && entry[name].value("hash", "") == hashes[s];
        Stopwatch sw;
        if (cached) {
            bundle::load_stage(opt.bundle_dir, stage, st);
            st.stages.push_back({name, true, sw.ms()});
            if (opt.verbose) std::cerr << "[astec] " << name << ": resumed from bundle\n";
            continue;
        }
        if (!requested)
            throw Error(ErrorCode::StagePrereqMissing, "stage '" + name + "' is needed but neither requested nor present in the bundle");
        try {
            switch (stage) {
                case Stage::Surrogate: detail::run_surrogate(d, cfg, st); break;
                case Stage::Shortlist: detail::run_shortlist(d, cfg, st); break;
                case Stage::Extreme: detail::run_extreme(d, cfg, st); break;
                case Stage::Rerank: detail::run_rerank(d, cfg, st); break;
            }
        } catch (const Error& e) {
            throw Error(e.code(), "stage " + name + ": " + e.what(), e.line(), e.id());
        }
        upstream_fresh = true;
        st.stages.push_back({name, false, sw.ms()});
        if (opt.verbose) {
            const std::vector<EpochLog>* log = stage == Stage::Surrogate ? &st.surrogate_log
                                               : stage == Stage::Extreme ? &st.extreme_log
                                               : stage == Stage::Rerank  ? &st.rerank_log
                                                                         : nullptr;
            if (log)
                for (const auto& e : *log) std::cerr << "[astec] " << name << " " << to_json(e).dump() << '\n';
            std::cerr << "[astec] " << name << ": trained in " << st.stages.back().wall_ms << " ms\n";
        }
        if (on_disk) {
            bundle::save_stage(opt.bundle_dir, stage, st);
            for (std::size_t k = s; k < kStageNames.size(); ++k) manifest["stages"].erase(kStageNames[k]);
            manifest["stages"][name] = {{"hash", hashes[s]}, {"wall_ms", st.stages.back().wall_ms}};
            manifest["format"] = "astec-bundle";
            manifest["version"] = 1;
            manifest["config"] = config_to_json(cfg);
            bundle::write_manifest(opt.bundle_dir, manifest);
        }
    }
    return st;
}

/// Loads whatever stages a bundle holds, in prefix order.
inline PipelineState load_bundle(const std::string& dir) {
    const auto manifest = bundle::read_manifest(dir);
    PipelineState st;
    for (std::size_t s = 0; s < kStageNames.size(); ++s) {
        if (!manifest["stages"].contains(kStageNames[s])) break;
        bundle::load_stage(dir, static_cast<Stage>(s), st);
        st.stages.push_back({kStageNames[s], true, 0.0});
    }
    return st;
}

inline PipelineConfig bundle_config(const std::string& dir) {
    const auto manifest = bundle::read_manifest(dir);
    if (!manifest.contains("config")) throw Error(ErrorCode::IncompleteBundle, "bundle " + dir + " has no manifest config");
    return config_from_json(manifest["config"]);
}

/// Prediction-time model; requires the extreme stage.
inline AstecModel assemble_model(const PipelineState& st, const PipelineConfig& cfg) {
    if (!st.E || !st.index || !st.extreme) throw Error(ErrorCode::IncompleteBundle, "bundle lacks the extreme stage");
    AstecModel m;
    m.base = *st.extreme;
    m.index = *st.index;
    m.anns = cfg.anns.anns;
    m.caps = cfg.anns.caps;
    if (st.reranker) m.reranker = *st.reranker;
    return m;
}

/// Every point gets the `k` most frequent training labels, scored by frequency.
inline ScoredRows frequency_prior(const Dataset& train, std::size_t num_points, std::size_t k) {
    const auto freq = train.label_frequencies();
    std::vector<ScoredLabel> all;
    for (LabelId l = 0; l < train.num_labels; ++l) all.push_back({l, static_cast<double>(freq[l])});
    std::sort(all.begin(), all.end(), ranks_before);
    if (all.size() > k) all.resize(k);
    ScoredRows s;
    s.num_labels = train.num_labels;
    s.rows.assign(num_points, all);
    return s;
}

}  // namespace astec
