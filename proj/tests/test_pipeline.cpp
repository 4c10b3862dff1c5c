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
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "astec/pipeline.hpp"
#include "astec/synth.hpp"
#include "oracles.hpp"

using namespace astec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path = fs::temp_directory_path() / ("astec_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" +
                                            std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    [[nodiscard]] std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
    int code = -1;
    std::string out;
};

CliResult cli(const std::string& args) {
    const std::string cmd = std::string(ASTEC_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* p = ::popen(cmd.c_str(), "r");
    CliResult r;
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

PipelineConfig tiny_config() {
    auto c = desk_preset();
    c.surrogate.dim = 16;
    c.surrogate.num_meta = 8;
    c.surrogate.epochs = 3;
    c.extreme.epochs = 3;
    c.reranker.epochs = 1;
    return c;
}

Dataset tiny_data() { return synth_dataset({4, 40, 4, 16, 0.05, 2}); }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, RoundTripAndOverlay) {
    const auto c = paper_preset();
    const auto j = config_to_json(c);
    EXPECT_EQ(config_to_json(config_from_json(j)).dump(), j.dump());
    const auto over = config_from_json(nlohmann::json::parse(R"({"extreme": {"epochs": 7}, "seed": 9})"), c);
    EXPECT_EQ(over.extreme.epochs, 7u);
    EXPECT_EQ(over.seed, 9u);
    EXPECT_EQ(over.surrogate.num_meta, c.surrogate.num_meta);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
    for (const char* text : {R"({"extreme": {"epoch": 7}})", R"({"extremes": {}})", R"({"extreme": {"epochs": "many"}})",
                             R"({"predict": {"alpha": 2.0}})", R"({"anns": {"sampler": "magic"}})", R"({"anns": {"cap_random": 51}})",
                             R"([1, 2])"}) {
        EXPECT_EQ(oracle::error_code([&] { config_from_json(nlohmann::json::parse(text)); }), ErrorCode::ConfigError) << text;
    }
}

TEST(Config, PaperPresetValues) {
    const auto c = preset("paper");
    EXPECT_EQ(c.surrogate.num_meta, 65536u);
    EXPECT_EQ(c.anns.caps.total, 500u);
    EXPECT_EQ(c.anns.caps.random, 50u);
    EXPECT_EQ(c.anns.anns.M, 100u);
    EXPECT_EQ(c.anns.anns.ef_construction, 300u);
    EXPECT_EQ(c.anns.anns.ef_search, 300u);
    EXPECT_EQ(c.surrogate.dropout, 0.5);
    EXPECT_EQ(oracle::error_code([] { preset("huge"); }), ErrorCode::ConfigError);
}

TEST(Config, StageLists) {
    EXPECT_EQ(parse_stages("all").size(), 4u);
    EXPECT_EQ(parse_stages("extreme,surrogate"), (std::vector<Stage>{Stage::Surrogate, Stage::Extreme}));
    EXPECT_EQ(oracle::error_code([] { parse_stages("surrogate,train"); }), ErrorCode::ConfigError);
}

TEST(Config, StageHashesChainDownstream) {
    const auto d = tiny_data();
    const auto base = stage_hashes(tiny_config(), d);
    auto c = tiny_config();
    c.extreme.learning_rate = 0.01;
    const auto ext = stage_hashes(c, d);
    EXPECT_EQ(ext[0], base[0]);
    EXPECT_EQ(ext[1], base[1]);
    EXPECT_NE(ext[2], base[2]);
    EXPECT_NE(ext[3], base[3]);
    c = tiny_config();
    c.surrogate.epochs = 4;
    const auto sur = stage_hashes(c, d);
    for (std::size_t s = 0; s < 4; ++s) EXPECT_NE(sur[s], base[s]);
    c = tiny_config();
    c.reranker.k = 3;
    const auto rr = stage_hashes(c, d);
    EXPECT_EQ(rr[2], base[2]);
    EXPECT_NE(rr[3], base[3]);
    auto d2 = d;
    d2.labels[0] = d.labels[0] == std::vector<std::uint32_t>{1} ? std::vector<std::uint32_t>{2} : std::vector<std::uint32_t>{1};
    EXPECT_NE(stage_hashes(tiny_config(), d2)[0], base[0]);
}

// ---------------------------------------------------------------------------
// Bundles

TEST(Bundle, SurrogateThenResume) {
    TempDir tmp;
    const auto d = tiny_data();
    RunOptions opt;
    opt.bundle_dir = tmp.path.string();
    opt.stages = {Stage::Surrogate};
    const auto first = run_pipeline(d, tiny_config(), opt);
    ASSERT_TRUE(first.E);
    EXPECT_FALSE(first.extreme);
    const auto manifest = bundle::read_manifest(opt.bundle_dir);
    EXPECT_TRUE(manifest["stages"].contains("surrogate"));
    EXPECT_FALSE(manifest["stages"].contains("shortlist"));

    opt.stages = parse_stages("all");
    const auto second = run_pipeline(d, tiny_config(), opt);
    ASSERT_EQ(second.stages.size(), 4u);
    EXPECT_TRUE(second.stages[0].resumed);
    for (std::size_t s = 1; s < 4; ++s) EXPECT_FALSE(second.stages[s].resumed);
    EXPECT_EQ(second.E->table, first.E->table);

    // a changed extreme config retrains extreme and rerank only
    auto c = tiny_config();
    c.extreme.learning_rate = 0.01;
    const auto third = run_pipeline(d, c, opt);
    EXPECT_TRUE(third.stages[0].resumed);
    EXPECT_TRUE(third.stages[1].resumed);
    EXPECT_FALSE(third.stages[2].resumed);
    EXPECT_FALSE(third.stages[3].resumed);
}

TEST(Bundle, MissingPrerequisite) {
    TempDir tmp;
    RunOptions opt;
    opt.bundle_dir = tmp.path.string();
    opt.stages = {Stage::Extreme};
    EXPECT_EQ(oracle::error_code([&] { run_pipeline(tiny_data(), tiny_config(), opt); }), ErrorCode::StagePrereqMissing);
    PipelineState empty;
    EXPECT_EQ(oracle::error_code([&] { assemble_model(empty, tiny_config()); }), ErrorCode::IncompleteBundle);
}

TEST(Bundle, DeterministicAndLoadedModelPredictsTheSame) {
    TempDir tmp;
    const auto d = tiny_data();
    const auto cfg = tiny_config();
    RunOptions opt;
    opt.bundle_dir = tmp.path.string();
    const auto a = run_pipeline(d, cfg, opt);
    const auto b = run_pipeline(d, cfg);
    EXPECT_EQ(a.extreme->W.weights, b.extreme->W.weights);
    EXPECT_EQ(a.extreme->R.R, b.extreme->R.R);
    EXPECT_EQ(a.reranker->model.W.weights, b.reranker->model.W.weights);
    const auto loaded = load_bundle(opt.bundle_dir);
    EXPECT_EQ(bundle_config(opt.bundle_dir).extreme.epochs, cfg.extreme.epochs);
    const auto m1 = assemble_model(a, cfg), m2 = assemble_model(loaded, cfg);
    const auto p1 = predict_batch(d.features, m1, cfg.predict.cfg), p2 = predict_batch(d.features, m2, cfg.predict.cfg);
    for (std::size_t i = 0; i < d.num_points; ++i) {
        ASSERT_EQ(p1.rows[i].top.size(), p2.rows[i].top.size());
        for (std::size_t k = 0; k < p1.rows[i].top.size(); ++k) {
            EXPECT_EQ(p1.rows[i].top[k].label, p2.rows[i].top[k].label);
            EXPECT_EQ(p1.rows[i].top[k].score, p2.rows[i].top[k].score);
        }
    }
}

TEST(Baselines, FrequencyPrior) {
    const auto d = tiny_data();
    const auto prior = frequency_prior(d, 3, 4);
    const auto freq = d.label_frequencies();
    ASSERT_EQ(prior.rows.size(), 3u);
    ASSERT_EQ(prior.rows[0].size(), 4u);
    for (std::size_t k = 1; k < 4; ++k) EXPECT_GE(prior.rows[0][k - 1].score, prior.rows[0][k].score);
    EXPECT_EQ(prior.rows[0][0].score, static_cast<double>(*std::max_element(freq.begin(), freq.end())));
}

// ---------------------------------------------------------------------------
// Command line

class Cli : public ::testing::Test {
  protected:
    void SetUp() override {
        ASSERT_EQ(cli("synth --clusters 4 --docs 50 --labels 4 --vocab 16 --train-out " + tmp / "train.txt" + " --test-out " +
                      tmp / "test.txt")
                      .code,
                  0);
        std::ofstream(tmp / "cfg.json") << R"({"surrogate": {"dim": 16, "num_meta": 8, "epochs": 3}, "extreme": {"epochs": 3},
                                               "reranker": {"epochs": 1}})";
    }
    TempDir tmp;
};

TEST_F(Cli, StatsAndUnknownSubcommand) {
    const auto r = cli("stats " + tmp / "train.txt");
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["num_labels"], 16);
    EXPECT_EQ(j["num_features"], 64);
    EXPECT_EQ(cli("frobnicate").code, 2);
    EXPECT_EQ(cli("stats " + tmp / "missing.txt").code, 3);
    std::ofstream(tmp / "bad.txt") << "2 3\n0 1:1\n";
    EXPECT_EQ(cli("stats " + tmp / "bad.txt").code, 3);
}

TEST_F(Cli, PrintConfigAndConfigErrors) {
    const auto r = cli("run --config " + tmp / "cfg.json" + " --seed 42 --alpha 0.25 --print-config");
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["seed"], 42);
    EXPECT_EQ(j["predict"]["alpha"], 0.25);
    EXPECT_EQ(j["surrogate"]["dim"], 16);
    EXPECT_EQ(j["anns"]["cap_total"], desk_preset().anns.caps.total);
    std::ofstream(tmp / "typo.json") << R"({"surrogate": {"dimension": 16}})";
    EXPECT_EQ(cli("run --config " + tmp / "typo.json" + " --print-config").code, 2);
    EXPECT_EQ(cli("run --train " + tmp / "train.txt" + " --alpha 3").code, 2);
    EXPECT_EQ(cli("run --train " + tmp / "train.txt" + " --stages extreme --bundle " + tmp / "b").code, 2);
}

TEST_F(Cli, RunPredictEvaluate) {
    const std::string common = "--config " + tmp / "cfg.json" + " --deterministic";
    const auto run = cli("run " + common + " --train " + tmp / "train.txt" + " --test " + tmp / "test.txt" + " --bundle " + tmp / "b");
    ASSERT_EQ(run.code, 0);
    const auto rep = nlohmann::json::parse(run.out);
    EXPECT_EQ(rep["stages"].size(), 4u);
    EXPECT_GT(rep["metrics"]["P@1"].get<double>(), rep["frequency_prior"]["P@1"].get<double>());
    EXPECT_TRUE(fs::exists(tmp / "b/test_predictions.txt"));

    // resume: nothing retrains
    const auto again = nlohmann::json::parse(cli("run " + common + " --train " + tmp / "train.txt" + " --bundle " + tmp / "b").out);
    for (const auto& s : again["stages"]) EXPECT_TRUE(s["resumed"].get<bool>());

    ASSERT_EQ(cli("predict --bundle " + tmp / "b" + " --test " + tmp / "test.txt" + " --out " + tmp / "p1.txt").code, 0);
    ASSERT_EQ(cli("predict --bundle " + tmp / "b" + " --test " + tmp / "test.txt" + " --out " + tmp / "p2.txt" + " --latency " +
                  tmp / "lat.json")
                  .code,
              0);
    EXPECT_EQ(slurp(tmp / "p1.txt"), slurp(tmp / "p2.txt"));
    EXPECT_EQ(slurp(tmp / "p1.txt"), slurp(tmp / "b/test_predictions.txt"));
    const auto lat = nlohmann::json::parse(slurp(tmp / "lat.json"));
    EXPECT_TRUE(lat["cap_respected"].get<bool>());

    const std::string ev = "evaluate --truth " + tmp / "test.txt" + " --train " + tmp / "train.txt" + " --pred ";
    const auto e1 = cli(ev + tmp / "p1.txt"), e2 = cli(ev + tmp / "p1.txt");
    ASSERT_EQ(e1.code, 0);
    EXPECT_EQ(e1.out, e2.out);
    EXPECT_NEAR(nlohmann::json::parse(e1.out)["P@1"].get<double>(), rep["metrics"]["P@1"].get<double>(), 1e-12);

    // a bundle without the extreme stage cannot predict
    ASSERT_EQ(cli("run " + common + " --train " + tmp / "train.txt" + " --stages surrogate --bundle " + tmp / "s").code, 0);
    EXPECT_EQ(cli("predict --bundle " + tmp / "s" + " --test " + tmp / "test.txt").code, 2);
}

TEST_F(Cli, EvaluatePerfectAndEmptyPredictions) {
    const auto test = read_xc_file(tmp / "test.txt").dataset;
    ScoredRows perfect, empty;
    perfect.num_labels = empty.num_labels = test.num_labels;
    for (const auto& y : test.labels) {
        std::vector<ScoredLabel> row;
        for (auto l : y) row.push_back({l, 1.0});
        perfect.rows.push_back(row);
        empty.rows.push_back({});
    }
    write_scored_rows_file(perfect, tmp / "perfect.txt");
    write_scored_rows_file(empty, tmp / "empty.txt");
    const std::string ev = "evaluate --truth " + tmp / "test.txt" + " --train " + tmp / "train.txt" + " --pred ";
    const auto p = nlohmann::json::parse(cli(ev + tmp / "perfect.txt").out);
    EXPECT_EQ(p["P@1"], 1.0);
    EXPECT_EQ(p["N@1"], 1.0);
    const auto z = nlohmann::json::parse(cli(ev + tmp / "empty.txt").out);
    for (const auto& [key, val] : z.items())
        if (val.is_number_float()) {
            EXPECT_EQ(val.get<double>(), 0.0) << key;
        }
    // truth given in the wire format gives the same report
    EXPECT_EQ(cli("evaluate --truth " + tmp / "perfect.txt" + " --train " + tmp / "train.txt" + " --pred " + tmp / "perfect.txt").out,
              cli(ev + tmp / "perfect.txt").out);
    // label-space mismatch is a data error
    empty.num_labels += 1;
    write_scored_rows_file(empty, tmp / "wide.txt");
    EXPECT_EQ(cli(ev + tmp / "wide.txt").code, 3);
}

TEST_F(Cli, VerifyTheoremAndClusterAndRecall) {
    const auto t = cli("verify-theorem --instances 2000");
    ASSERT_EQ(t.code, 0);
    const auto j = nlohmann::json::parse(t.out);
    EXPECT_EQ(j["instances"], 2000);
    EXPECT_EQ(j["feature_violations"], 0);
    EXPECT_EQ(j["cosine_violations"], 0);
    const auto c = cli("cluster --train " + tmp / "train.txt" + " --num-meta 4 --out " + tmp / "tree.json");
    ASSERT_EQ(c.code, 0);
    const auto cj = nlohmann::json::parse(c.out);
    EXPECT_EQ(cj["L_hat"], 4);
    EXPECT_LE(cj["max_leaf"].get<int>() - cj["min_leaf"].get<int>(), 1);
    ASSERT_EQ(cli("run --config " + tmp / "cfg.json" + " --train " + tmp / "train.txt" + " --stages surrogate,shortlist --bundle " +
                  tmp / "b")
                  .code,
              0);
    const auto r = cli("shortlist-recall --bundle " + tmp / "b" + " --data " + tmp / "test.txt");
    ASSERT_EQ(r.code, 0);
    const double rec = nlohmann::json::parse(r.out)["mean_recall"].get<double>();
    EXPECT_GT(rec, 0.0);
    EXPECT_LE(rec, 1.0);
    const auto bt = cli("verify-theorem --bundle " + tmp / "b" + " --train " + tmp / "train.txt");
    EXPECT_EQ(bt.code, 2);
}
