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

// Command-line driver for the four-stage pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "astec/metrics.hpp"
#include "astec/pipeline.hpp"
#include "astec/synth.hpp"
#include "astec/theorem.hpp"

namespace {

using namespace astec;
using nlohmann::json;

Dataset load_dataset(const std::string& path, bool tfidf) {
    auto r = read_xc_file(path);
    if (r.duplicate_labels > 0)
        std::cerr << "warning: " << path << ": dropped " << r.duplicate_labels << " repeated label ids\n";
    if (tfidf) recompute_tfidf(r.dataset);
    return std::move(r.dataset);
}

/// Ground truth from an XC file ("N V L" header) or from the shortlist wire format ("N L").
Dataset load_truth(const std::string& path) {
    if (peek_header(path).size() == 3) return load_dataset(path, false);
    const auto rows = read_scored_rows_file(path);
    Dataset d;
    d.num_points = rows.rows.size();
    d.num_labels = rows.num_labels;
    d.features.resize(d.num_points);
    for (const auto& row : rows.rows) {
        std::vector<LabelId> ls;
        for (const auto& e : row) ls.push_back(e.label);
        std::sort(ls.begin(), ls.end());
        ls.erase(std::unique(ls.begin(), ls.end()), ls.end());
        d.labels.push_back(std::move(ls));
    }
    return d;
}

void print_json(const json& j, const std::string& out) {
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(out);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + out);
    f << j.dump(2) << '\n';
}

json stats_json(const Dataset& d) {
    const auto s = compute_stats(d);
    return {{"num_points", s.num_points},
            {"num_features", s.num_features},
            {"num_labels", s.num_labels},
            {"total_positives", s.total_positives},
            {"avg_labels_per_point", s.avg_labels_per_point},
            {"avg_points_per_label", s.avg_points_per_label},
            {"avg_features_per_point", s.avg_features_per_point}};
}

json latency_json(const LatencyReport& L) {
    return {{"mean_us", L.mean_us},         {"p50_us", L.p50_us},       {"p99_us", L.p99_us},
            {"max_shortlist", L.max_shortlist}, {"cap", L.cap},         {"cap_respected", L.cap_respected},
            {"empty_documents", L.empty_documents}, {"short_rows", L.short_rows}};
}

void warn_short_rows(const LatencyReport& L, std::size_t top_k) {
    if (L.short_rows > 0)
        std::cerr << "warning: " << L.short_rows << " rows have fewer than top_k = " << top_k << " labels\n";
}

void warn_beta(const AstecModel& m, const PredictConfig& p) {
    if (!m.reranker && p.beta != 1.0) std::cerr << "warning: bundle has no re-ranker; beta = " << p.beta << " is ignored\n";
}

// Options shared by commands that take a pipeline config.
struct ConfigFlags {
    std::string config_path;
    std::string preset_name = "desk";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool deterministic = false;
    bool f64 = false;
    std::optional<std::string> sampler;
    std::optional<double> alpha, beta;
    std::optional<std::size_t> top_k;

    void add(CLI::App* app) {
        app->add_option("--config", config_path, "JSON config file (overrides the preset)");
        app->add_option("--preset", preset_name, "Base preset: desk | paper")->capture_default_str();
        app->add_option("--seed", seed, "Global seed");
        app->add_option("--threads", threads, "Worker threads");
        app->add_flag("--deterministic", deterministic, "Single-threaded, reproducible summation order");
        app->add_flag("--f64", f64, "64-bit parameters (always on)");
        app->add_option("--alpha", alpha, "Classifier/shortlist fusion weight");
        app->add_option("--beta", beta, "Base/re-ranker fusion weight");
        app->add_option("--top-k", top_k, "Labels per prediction row");
    }

    void apply(PipelineConfig& c) const {
        if (seed) c.seed = *seed;
        if (threads) c.threads = *threads;
        if (deterministic) c.threads = 1;
        if (sampler) c.anns.sampler = *sampler;
        if (alpha) c.predict.cfg.alpha = *alpha;
        if (beta) c.predict.cfg.beta = *beta;
        if (top_k) c.predict.cfg.top_k = *top_k;
    }

    [[nodiscard]] PipelineConfig resolve() const {
        auto c = preset(preset_name);
        if (!config_path.empty()) c = load_config_file(config_path, c);
        apply(c);
        c.validate();
        return c;
    }
};

int cmd_stats(const std::string& path, bool tfidf) {
    std::cout << stats_json(load_dataset(path, tfidf)).dump(2) << '\n';
    return 0;
}

int cmd_cluster(const std::string& train_path, std::size_t num_meta, bool correlation, std::uint64_t seed, const std::string& out) {
    const auto d = load_dataset(train_path, false);
    const auto cent = compute_centroids(d);
    std::optional<LabelCorrelation> corr;
    if (correlation) corr = estimate_correlation(d, 20, 2, derive_seed(seed, 0xc0));
    const std::size_t nonempty = d.num_labels - cent.empty_labels.size();
    if (nonempty == 0) throw Error(ErrorCode::DegenerateInput, "no label has a training positive");
    const auto tree = build_cluster_tree(cent, corr ? &*corr : nullptr, std::min(num_meta, nonempty), seed);
    auto j = tree_to_json(tree);
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw Error(ErrorCode::IoError, "cannot write " + out);
        f << j.dump() << '\n';
    }
    std::size_t lo = d.num_labels, hi = 0;
    for (const auto& leaf : tree.leaves()) {
        lo = std::min(lo, leaf.size());
        hi = std::max(hi, leaf.size());
    }
    std::cout << json{{"L_hat", tree.num_leaves()}, {"depth", tree.depth()}, {"min_leaf", lo},
                      {"max_leaf", hi}, {"empty_labels", tree.empty_labels.size()}}
                     .dump(2)
              << '\n';
    return 0;
}

struct RunFlags {
    std::string train, test, bundle, stages = "all", pred_out, report_out;
    bool print_config = false, verbose = false;
};

int cmd_run(const ConfigFlags& cf, const RunFlags& rf) {
    auto cfg = cf.resolve();
    if (!rf.train.empty()) cfg.data.train = rf.train;
    if (!rf.test.empty()) cfg.data.test = rf.test;
    if (rf.print_config) {
        std::cout << config_to_json(cfg).dump(2) << '\n';
        return 0;
    }
    if (cfg.data.train.empty()) throw Error(ErrorCode::ConfigError, "no training file (data.train or --train)");
    const auto train = load_dataset(cfg.data.train, false);
    RunOptions opt;
    opt.bundle_dir = rf.bundle;
    opt.stages = parse_stages(rf.stages);
    opt.verbose = rf.verbose;
    Stopwatch total;
    const auto st = run_pipeline(train, cfg, opt);
    json report;
    report["stages"] = json::array();
    for (const auto& s : st.stages) report["stages"].push_back({{"name", s.name}, {"resumed", s.resumed}, {"wall_ms", s.wall_ms}});
    report["train_wall_ms"] = total.ms();
    if (!cfg.data.test.empty() && st.extreme) {
        const auto test = load_dataset(cfg.data.test, cfg.data.tfidf);
        if (test.num_labels != train.num_labels) throw Error(ErrorCode::LabelSpaceMismatch, "train and test label counts differ");
        const auto model = assemble_model(st, cfg);
        warn_beta(model, cfg.predict.cfg);
        const auto bp = predict_batch(test.features, model, cfg.predict.cfg, cfg.threads);
        warn_short_rows(bp.latency, cfg.predict.cfg.top_k);
        const auto pred = bp.to_scored_rows(train.num_labels);
        std::string pred_out = rf.pred_out;
        if (pred_out.empty() && !rf.bundle.empty()) pred_out = (std::filesystem::path(rf.bundle) / "test_predictions.txt").string();
        if (!pred_out.empty()) write_scored_rows_file(pred, pred_out);
        report["metrics"] = evaluate(pred, test, train, cfg.metrics.cfg).to_json();
        report["latency"] = latency_json(bp.latency);
        const auto prior = frequency_prior(train, test.num_points, cfg.predict.cfg.top_k);
        MetricConfig one = cfg.metrics.cfg;
        one.ks = {1};
        report["frequency_prior"] = evaluate(prior, test, train, one).to_json();
        report["sampler"] = cfg.anns.sampler;
    }
    if (!rf.bundle.empty()) {
        std::ofstream f(std::filesystem::path(rf.bundle) / "run_report.json");
        f << report.dump(2) << '\n';
    }
    print_json(report, rf.report_out);
    return 0;
}

int cmd_predict(const ConfigFlags& cf, const std::string& bundle_dir, const std::string& test_path, const std::string& out,
                const std::string& latency_out) {
    auto cfg = bundle_config(bundle_dir);
    cf.apply(cfg);
    cfg.validate();
    const auto st = load_bundle(bundle_dir);
    const auto model = assemble_model(st, cfg);
    warn_beta(model, cfg.predict.cfg);
    const auto test = load_dataset(test_path, cfg.data.tfidf);
    if (test.num_features > model.base.E.vocab())
        throw Error(ErrorCode::DimMismatch, "test vocabulary exceeds the model's embedding table");
    const auto bp = predict_batch(test.features, model, cfg.predict.cfg, cfg.threads);
    warn_short_rows(bp.latency, cfg.predict.cfg.top_k);
    const auto rows = bp.to_scored_rows(model.index.num_labels);
    if (out.empty())
        write_scored_rows(rows, std::cout);
    else
        write_scored_rows_file(rows, out);
    const auto lat = latency_json(bp.latency);
    if (latency_out.empty())
        std::cerr << lat.dump() << '\n';
    else
        print_json(lat, latency_out);
    return 0;
}

int cmd_evaluate(const std::string& truth_path, const std::string& pred_path, const std::string& train_path, const ConfigFlags& cf) {
    const auto cfg = cf.resolve();
    const auto truth = load_truth(truth_path);
    const auto pred = read_scored_rows_file(pred_path);
    const auto train = load_dataset(train_path, false);
    std::cout << evaluate(pred, truth, train, cfg.metrics.cfg).to_json().dump(2) << '\n';
    return 0;
}

struct TheoremFlags {
    std::size_t instances = 100000;
    std::vector<double> lambdas{0.1, 0.3, 0.5, 1.0};
    std::uint64_t seed = 1;
    std::string bundle, train, out;
    std::size_t max_points = 64, max_labels = 32;
};

int cmd_verify_theorem(const TheoremFlags& tf) {
    std::ofstream file;
    if (!tf.out.empty()) {
        file.open(tf.out);
        if (!file) throw Error(ErrorCode::IoError, "cannot write " + tf.out);
    }
    std::ostream& os = tf.out.empty() ? std::cout : file;
    if (tf.bundle.empty()) {
        RandomSuiteConfig rc;
        rc.instances = tf.instances;
        rc.lambdas = tf.lambdas;
        rc.seed = tf.seed;
        const auto rep = run_random_suite(rc);
        os << rep.to_json().dump() << '\n';
        if (rep.violations() > 0)
            throw Error(ErrorCode::BoundViolated, std::to_string(rep.violations()) + " randomized instances violate a bound");
        return 0;
    }
    if (tf.train.empty()) throw Error(ErrorCode::ConfigError, "--bundle requires --train");
    const auto cfg = bundle_config(tf.bundle);
    const auto st = load_bundle(tf.bundle);
    if (!st.extreme) throw Error(ErrorCode::IncompleteBundle, "bundle lacks the extreme stage");
    const auto d = load_dataset(tf.train, cfg.data.tfidf);
    const auto& m = *st.extreme;
    const double lambda = effective_lambda(m.R);
    Rng rng(tf.seed);
    std::vector<std::uint32_t> points(d.num_points);
    std::iota(points.begin(), points.end(), 0u);
    std::shuffle(points.begin(), points.end(), std::mt19937_64(rng.next()));
    if (points.size() > tf.max_points) points.resize(tf.max_points);
    std::vector<LabelId> labels;
    for (std::uint32_t i : points)
        for (LabelId l : d.labels[i])
            if (labels.size() < tf.max_labels && std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
    os << json{{"kind", "model"}, {"lambda_config", m.R.lambda}, {"sigma_max", sigma_max_exact(m.R.R)}, {"lambda_used", lambda}}.dump()
       << '\n';
    for (const auto& r : check_feature_bound(m, lambda, d, points)) os << to_json(r).dump() << '\n';
    for (const auto& r : check_cosine_bounds(m, lambda, d, labels, points)) os << to_json(r).dump() << '\n';
    for (const auto& r : check_intermediate_bounds(m, lambda, d, labels, points)) os << to_json(r).dump() << '\n';
    return 0;
}

int cmd_shortlist_recall(const std::string& bundle_dir, const std::string& data_path, bool training_rows) {
    const auto cfg = bundle_config(bundle_dir);
    const auto st = load_bundle(bundle_dir);
    if (!st.E || !st.index) throw Error(ErrorCode::IncompleteBundle, "bundle lacks the shortlist stage");
    Shortlist sl;
    Dataset d;
    if (training_rows) {
        if (data_path.empty()) throw Error(ErrorCode::ConfigError, "--training-rows needs --data (the training file)");
        d = load_dataset(data_path, cfg.data.tfidf);
        sl = *st.eval_shortlist;
    } else {
        d = load_dataset(data_path, cfg.data.tfidf);
        const auto corpus = embed_corpus(d, *st.E, nullptr, cfg.threads);
        ShortlistCaps caps = cfg.anns.caps;
        caps.random = 0;
        sl = build_shortlists(d, corpus, *st.index, caps, cfg.anns.anns, ShortlistMode::Prediction, false, cfg.seed, cfg.threads);
    }
    const auto r = shortlist_recall(sl, d);
    double mean_size = 0.0;
    for (const auto& row : sl.rows) mean_size += static_cast<double>(row.size());
    if (!sl.rows.empty()) mean_size /= static_cast<double>(sl.rows.size());
    std::cout << json{{"mean_recall", r.mean_recall}, {"points_counted", r.points_counted}, {"mean_shortlist_size", mean_size}}.dump(2)
              << '\n';
    return 0;
}

int cmd_synth(const SynthSpec& spec, double test_fraction, std::uint64_t split_seed, const std::string& train_out,
              const std::string& test_out) {
    const auto d = synth_dataset(spec);
    if (test_out.empty()) {
        write_xc_file(d, train_out);
        return 0;
    }
    const auto [tr, te] = split_points(d.num_points, test_fraction, split_seed);
    write_xc_file(d.subset(tr), train_out);
    write_xc_file(d.subset(te), test_out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"astec: deep extreme multi-label classification with hard-negative shortlists"};
    app.require_subcommand(1);

    std::string stats_file;
    bool stats_tfidf = false;
    auto* stats = app.add_subcommand("stats", "Dataset statistics as flat JSON");
    stats->add_option("file", stats_file, "XC-format file")->required();
    stats->add_flag("--tfidf", stats_tfidf, "Recompute TF-IDF weights first");

    std::string cl_train, cl_out;
    std::size_t cl_meta = 64;
    bool cl_corr = false;
    std::uint64_t cl_seed = 1;
    auto* cluster = app.add_subcommand("cluster", "Balanced label clustering into meta-labels");
    cluster->add_option("--train", cl_train, "Training XC file")->required();
    cluster->add_option("--num-meta", cl_meta, "Number of meta-labels")->capture_default_str();
    cluster->add_flag("--correlation", cl_corr, "Cluster correlation-smoothed centroids");
    cluster->add_option("--seed", cl_seed)->capture_default_str();
    cluster->add_option("--out", cl_out, "Write the cluster tree JSON here");

    ConfigFlags run_cf;
    RunFlags rf;
    auto* run = app.add_subcommand("run", "Train the pipeline (resumable) and optionally evaluate on a test file");
    run_cf.add(run);
    run->add_option("--train", rf.train, "Training XC file");
    run->add_option("--test", rf.test, "Test XC file");
    run->add_option("--bundle", rf.bundle, "Bundle directory");
    run->add_option("--stages", rf.stages, "all, or a comma list of surrogate,shortlist,extreme,rerank")->capture_default_str();
    run->add_option("--ablate-sampler", run_cf.sampler, "Negative source: anns | uniform | unigram")
        ->check(CLI::IsMember({"anns", "uniform", "unigram"}));
    run->add_option("--predictions", rf.pred_out, "Test predictions file");
    run->add_option("--report", rf.report_out, "Write the run report here instead of stdout");
    run->add_flag("--print-config", rf.print_config, "Print the effective config and exit");
    run->add_flag("--verbose", rf.verbose, "Per-epoch progress on stderr");

    ConfigFlags pred_cf;
    std::string pr_bundle, pr_test, pr_out, pr_lat;
    auto* predict = app.add_subcommand("predict", "Top-k predictions from a bundle");
    predict->add_option("--bundle", pr_bundle)->required();
    predict->add_option("--test", pr_test)->required();
    predict->add_option("--out", pr_out, "Predictions file (default stdout)");
    predict->add_option("--latency", pr_lat, "Latency report JSON (default stderr)");
    predict->add_option("--threads", pred_cf.threads);
    predict->add_flag("--deterministic", pred_cf.deterministic);
    predict->add_option("--alpha", pred_cf.alpha);
    predict->add_option("--beta", pred_cf.beta);
    predict->add_option("--top-k", pred_cf.top_k);

    ConfigFlags ev_cf;
    std::string ev_truth, ev_pred, ev_train;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Metric report for a prediction file");
    evaluate_cmd->add_option("--truth", ev_truth, "Truth (XC file or 'N L' label rows)")->required();
    evaluate_cmd->add_option("--pred", ev_pred, "Predictions ('N L' scored rows)")->required();
    evaluate_cmd->add_option("--train", ev_train, "Training XC file (propensities, frequency bins)")->required();
    evaluate_cmd->add_option("--config", ev_cf.config_path);

    TheoremFlags tf;
    auto* theorem = app.add_subcommand("verify-theorem", "Check the feature-drift and cosine bounds (JSON lines)");
    theorem->add_option("--instances", tf.instances, "Randomized instances")->capture_default_str();
    theorem->add_option("--lambdas", tf.lambdas)->delimiter(',');
    theorem->add_option("--seed", tf.seed)->capture_default_str();
    theorem->add_option("--bundle", tf.bundle, "Check a trained model instead of random instances");
    theorem->add_option("--train", tf.train, "Training XC file for --bundle");
    theorem->add_option("--max-points", tf.max_points)->capture_default_str();
    theorem->add_option("--max-labels", tf.max_labels)->capture_default_str();
    theorem->add_option("--out", tf.out);

    std::string sr_bundle, sr_data;
    bool sr_training = false;
    auto* recall = app.add_subcommand("shortlist-recall", "Fraction of positives covered by prediction-mode shortlists");
    recall->add_option("--bundle", sr_bundle)->required();
    recall->add_option("--data", sr_data, "XC file to shortlist")->required();
    recall->add_flag("--training-rows", sr_training, "Use the stored rows for training points (self excluded)");

    SynthSpec spec;
    double sy_test = 0.2;
    std::uint64_t sy_split = 7;
    std::string sy_train, sy_testfile;
    auto* synth = app.add_subcommand("synth", "Write a planted-cluster dataset");
    synth->add_option("--clusters", spec.num_clusters)->capture_default_str();
    synth->add_option("--docs", spec.docs_per_cluster)->capture_default_str();
    synth->add_option("--labels", spec.labels_per_cluster)->capture_default_str();
    synth->add_option("--vocab", spec.vocab_per_cluster)->capture_default_str();
    synth->add_option("--noise", spec.noise)->capture_default_str();
    synth->add_option("--seed", spec.seed)->capture_default_str();
    synth->add_option("--train-out", sy_train)->required();
    synth->add_option("--test-out", sy_testfile, "Also split off a test file");
    synth->add_option("--test-fraction", sy_test)->capture_default_str();
    synth->add_option("--split-seed", sy_split)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*stats) return cmd_stats(stats_file, stats_tfidf);
        if (*cluster) return cmd_cluster(cl_train, cl_meta, cl_corr, cl_seed, cl_out);
        if (*run) return cmd_run(run_cf, rf);
        if (*predict) return cmd_predict(pred_cf, pr_bundle, pr_test, pr_out, pr_lat);
        if (*evaluate_cmd) return cmd_evaluate(ev_truth, ev_pred, ev_train, ev_cf);
        if (*theorem) return cmd_verify_theorem(tf);
        if (*recall) return cmd_shortlist_recall(sr_bundle, sr_data, sr_training);
        if (*synth) return cmd_synth(spec, sy_test, sy_split, sy_train, sy_testfile);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what();
        if (e.line() > 0) std::cerr << " (line " << e.line() << ")";
        std::cerr << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
