// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "cptkit/commands.hpp"

using namespace cptkit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("cptkit-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

json source(const std::string& name, const std::string& domain, TokenCount tokens, const std::string& qa_category = "") {
    json s{{"name", name}, {"domain", domain}, {"token_count", tokens}, {"inventory", "inv/" + name + ".jsonl"}};
    if (!qa_category.empty()) {
        s["qa_category"] = qa_category;
    }
    return s;
}

// Inventory of n documents of `len` tokens each.
TokenCount write_inventory_file(const fs::path& dir, const std::string& name, std::size_t n, TokenCount len) {
    std::string text;
    for (std::size_t i = 0; i < n; ++i) {
        text += json{{"id", name + "-" + std::to_string(i)}, {"tokens", len}, {"locator", ""}}.dump() + "\n";
    }
    write(dir / "inv" / (name + ".jsonl"), text);
    return n * len;
}

// Two sources, 1e4 tokens, no preset.
fs::path toy_config(const fs::path& dir) {
    const auto a = write_inventory_file(dir, "web", 300, 3);
    const auto b = write_inventory_file(dir, "books", 100, 2);
    const json c{{"total_tokens", 10000},
                 {"switch_fraction", 0.5},
                 {"seed", 1},
                 {"schedule", {{"kind", "cosine"}, {"eta_start", 1e-4}, {"eta_end", 1e-6}}},
                 {"sources", {source("web", "english_web", a), source("books", "english_highquality_category", b)}},
                 {"blends", {{"gb", {{"weights", {{"web", 0.7}, {"books", 0.3}}}}}, {"qb", {{"weights", {{"web", 0.4}, {"books", 0.6}}}}}}}};
    write(dir / "toy.json", c.dump(2));
    return dir / "toy.json";
}

json recipe_sources(const fs::path& dir) {
    json s = json::array();
    s.push_back(source("web", "english_web", write_inventory_file(dir, "web", 400, 50)));
    s.push_back(source("books", "english_highquality_category", write_inventory_file(dir, "books", 100, 40)));
    const std::vector<std::pair<std::string, TokenCount>> qa{
        {"world_knowledge", 113}, {"reasoning", 92}, {"stem", 31}, {"chat", 26}, {"code", 19}};
    for (const auto& [cat, n] : qa) {
        s.push_back(source("qa_" + cat, "qa_category", write_inventory_file(dir, "qa_" + cat, n, 20), cat));
    }
    return s;
}

}  // namespace

TEST_CASE("plan with the recipe preset") {
    TempDir t;
    const json c{{"preset", "recipe"}, {"total_tokens", 300'000'000'000ULL}, {"sources", recipe_sources(t.path)}, {"lr_curve_stride", 1'000'000'000}};
    write(t.path / "c.json", c.dump());
    const auto r = cli({"plan", "--config", (t.path / "c.json").string(), "--out", (t.path / "out").string()});
    REQUIRE(r.code == 0);
    const auto plan = json::parse(slurp(t.path / "out" / "plan.json"));
    const auto token = plan.at("switch_token").get<TokenCount>();
    CHECK(token >= 213'393'956'595ULL);
    CHECK(token <= 213'393'956'597ULL);
    CHECK(plan.at("gb_tokens").get<TokenCount>() + plan.at("qb_tokens").get<TokenCount>() == 300'000'000'000ULL);
    CHECK(plan.at("plan").at("schedule").at("eta_end").get<double>() == doctest::Approx(4.5e-7));
    CHECK(fs::exists(t.path / "out" / "lr_curve.jsonl"));
    CHECK(fs::exists(t.path / "out" / "epochs.jsonl"));
    const auto config_digest = plan.at("config_digest").get<std::string>();

    // Same config, same report.
    const auto again = cli({"plan", "--config", (t.path / "c.json").string(), "--out", (t.path / "out2").string()});
    CHECK(slurp(t.path / "out" / "plan.json") == slurp(t.path / "out2" / "plan.json"));
    CHECK(json::parse(again.out).at("config_digest") == config_digest);

    const auto override = cli({"plan", "--config", (t.path / "c.json").string(), "--out", (t.path / "out3").string(),
                               "--total-tokens", "1e6"});
    REQUIRE(override.code == 0);
    CHECK(json::parse(override.out).at("switch_token").get<TokenCount>() == 711'314);
}

TEST_CASE("unreachable switch fraction fails before writing") {
    TempDir t;
    const json c{{"preset", "recipe"}, {"total_tokens", 1'000'000}, {"sources", recipe_sources(t.path)}};
    write(t.path / "c.json", c.dump());
    const auto r = cli({"plan", "--config", (t.path / "c.json").string(), "--out", (t.path / "out").string(),
                        "--switch-fraction", "0.001"});
    CHECK(r.code == 4);
    CHECK(r.err.find('\n') == r.err.size() - 1);
    CHECK(json::parse(r.err).at("error") == "unreachable-target");
    CHECK_FALSE(fs::exists(t.path / "out"));
}

TEST_CASE("normalization is reported") {
    TempDir t;
    auto c = json::parse(slurp(toy_config(t.path)));
    c["blends"]["gb"]["weights"] = {{"web", 0.6}, {"books", 0.3}};
    write(t.path / "c.json", c.dump());
    const auto r = cli({"plan", "--config", (t.path / "c.json").string(), "--out", (t.path / "out").string()});
    REQUIRE(r.code == 0);
    const auto notes = json::parse(slurp(t.path / "out" / "plan.json")).at("notes").dump();
    CHECK(notes.find("normalized") != std::string::npos);
}

TEST_CASE("validation errors map to exit codes") {
    TempDir t;
    const auto cfg = toy_config(t.path).string();
    CHECK(cli({}).code == 2);
    CHECK(cli({"plan"}).code == 2);
    CHECK(cli({"plan", "--config", cfg, "--bogus"}).code == 2);
    CHECK(cli({"plan", "--config", (t.path / "missing.json").string()}).code == 3);
    CHECK(cli({"validate", "--config", cfg}).code == 0);
    CHECK(cli({"--help"}).code == 0);

    auto c = json::parse(slurp(cfg));
    c["blends"]["gb"]["weights"]["nope"] = 0.1;
    write(t.path / "bad.json", c.dump());
    const auto r = cli({"plan", "--config", (t.path / "bad.json").string(), "--out", (t.path / "o").string()});
    CHECK(r.code == 2);
    CHECK(json::parse(r.err).at("error") == "unknown-source");
    CHECK_FALSE(fs::exists(t.path / "o"));
}

TEST_CASE("sample is deterministic and seed-isolated") {
    TempDir t;
    const auto cfg = toy_config(t.path).string();
    const auto out = [&](const std::string& d) { return (t.path / d).string(); };
    REQUIRE(cli({"sample", "--config", cfg, "--out", out("a")}).code == 0);
    REQUIRE(cli({"sample", "--config", cfg, "--out", out("b")}).code == 0);
    REQUIRE(cli({"sample", "--config", cfg, "--out", out("c"), "--seed", "2"}).code == 0);
    CHECK(slurp(t.path / "a" / "manifest.jsonl") == slurp(t.path / "b" / "manifest.jsonl"));
    CHECK(slurp(t.path / "a" / "manifest.jsonl") != slurp(t.path / "c" / "manifest.jsonl"));
    CHECK(json::parse(slurp(t.path / "a" / "proportions.json")).at("pass") == true);

    const auto totals = [&](const std::string& d) {
        std::ifstream in(t.path / d / "manifest.jsonl");
        std::string line;
        std::getline(in, line);
        std::map<std::string, TokenCount> sum;
        while (std::getline(in, line)) {
            const auto j = json::parse(line);
            sum[j.at("phase").get<std::string>() + "/" + j.at("source").get<std::string>()] += j.at("doc_token_count").get<TokenCount>();
        }
        return sum;
    };
    CHECK(totals("a") == totals("c"));

    ::setenv(kOutDirEnv, out("env").c_str(), 1);
    CHECK(cli({"sample", "--config", cfg}).code == 0);
    ::unsetenv(kOutDirEnv);
    CHECK(fs::exists(t.path / "env" / "manifest.jsonl"));
}

TEST_CASE("missing inventory names the source") {
    TempDir t;
    const auto cfg = toy_config(t.path).string();
    fs::remove(t.path / "inv" / "books.jsonl");
    const auto r = cli({"sample", "--config", cfg, "--out", (t.path / "o").string()});
    CHECK(r.code == 3);
    CHECK(json::parse(r.err).at("error") == "missing-inventory");
    CHECK(r.err.find("books") != std::string::npos);
    CHECK_FALSE(fs::exists(t.path / "o"));
}

TEST_CASE("score, filter and rescore with a cached model") {
    TempDir t;
    auto c = json::parse(slurp(toy_config(t.path)));
    write(t.path / "ref.txt", "the cat sat on the mat\nthe dog sat on the log\na cat and a dog\n");
    c["quality"] = {{"reference_corpus", "ref.txt"}, {"order", 3}};
    write(t.path / "c.json", c.dump());
    std::string corpus;
    const std::vector<std::string> texts{"the cat sat",        "a dog sat on the mat", "zebra quantum flux", "the the the the",
                                         "on the log the dog", "cat cat cat",          "purple monkey dishwasher",
                                         "a cat and a dog sat"};
    for (std::size_t i = 0; i < texts.size(); ++i) {
        corpus += json{{"id", "doc" + std::to_string(i)}, {"text", texts[i]}}.dump() + "\n";
    }
    write(t.path / "corpus.jsonl", corpus);
    const auto cfg = (t.path / "c.json").string();
    const auto corpus_path = (t.path / "corpus.jsonl").string();

    const auto first = cli({"score", "--config", cfg, "--corpus", corpus_path, "--out", (t.path / "s1").string()});
    REQUIRE(first.code == 0);
    CHECK(json::parse(first.out).at("selected") == 2);

    const auto all = cli({"score", "--config", cfg, "--corpus", corpus_path, "--out", (t.path / "s2").string(), "--quartile", "1.0"});
    CHECK(json::parse(all.out).at("selected") == 8);

    const auto cached = cli({"score", "--config", cfg, "--corpus", corpus_path, "--out", (t.path / "s3").string(), "--model",
                             (t.path / "s1" / "model.bin").string()});
    REQUIRE(cached.code == 0);
    CHECK(json::parse(cached.out).at("manifest_digest") == json::parse(first.out).at("manifest_digest"));
    CHECK(slurp(t.path / "s1" / "quality_manifest.jsonl") == slurp(t.path / "s3" / "quality_manifest.jsonl"));

    // The quality manifest can back the web source.
    c["blends"]["gb"]["transforms"] = json::array({{{"type", "high_quality_web"}, {"manifest", "s1/quality_manifest.jsonl"}}});
    write(t.path / "hq.json", c.dump());
    CHECK(cli({"plan", "--config", (t.path / "hq.json").string(), "--out", (t.path / "p").string()}).code == 0);

    write(t.path / "empty.jsonl", "\n");
    const auto empty = cli({"score", "--config", cfg, "--corpus", (t.path / "empty.jsonl").string(), "--out", (t.path / "s4").string()});
    CHECK(empty.code == 2);
    CHECK(json::parse(empty.err).at("error") == "empty-corpus");

    c["quality"]["model_digest"] = std::string(64, '0');
    write(t.path / "pinned.json", c.dump());
    const auto pinned = cli({"score", "--config", (t.path / "pinned.json").string(), "--corpus", corpus_path, "--out",
                             (t.path / "s5").string()});
    CHECK(pinned.code == 2);
    CHECK(json::parse(pinned.err).at("error") == "digest-mismatch");
}

TEST_CASE("mine writes neighbours and an inventory the sampler accepts") {
    TempDir t;
    const auto web_tokens = write_inventory_file(t.path, "web", 120, 25);
    const auto qa_tokens = write_inventory_file(t.path, "qa_stem", 10, 20);
    json c{{"total_tokens", 20000},
           {"switch_fraction", 0.5},
           {"schedule", {{"kind", "cosine"}, {"eta_start", 1e-4}, {"eta_end", 1e-6}}},
           {"sources", {source("web", "english_web", web_tokens), source("qa_stem", "qa_category", qa_tokens, "stem")}},
           {"blends", {{"gb", {{"weights", {{"web", 1.0}}}}}, {"qb", {{"weights", {{"web", 0.9}, {"qa_stem", 0.1}}}}}}}};
    write(t.path / "c.json", c.dump());

    std::mt19937_64 rng(5);
    std::normal_distribution<float> g;
    const auto embed = [&](std::size_t n, const std::string& prefix, const fs::path& file) {
        std::vector<float> v(n * 8);
        for (auto& x : v) {
            x = g(rng);
        }
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n; ++i) {
            ids.push_back(prefix + std::to_string(i));
        }
        std::ofstream data(file, std::ios::binary);
        std::ofstream idf(default_ids_path(file));
        write_embeddings(data, idf, EmbeddingSet(8, v, ids));
    };
    embed(120, "web-", t.path / "corpus.emb");
    embed(3, "qa-", t.path / "qa.emb");
    embed(1, "qa-", t.path / "one.emb");

    const auto args = [&](const std::string& qa, const std::string& out) {
        return std::vector<std::string>{"mine", "--config", (t.path / "c.json").string(), "--qa-embeddings", (t.path / qa).string(),
                                        "--corpus-embeddings", (t.path / "corpus.emb").string(), "--out", (t.path / out).string()};
    };
    const auto r = cli(args("qa.emb", "m"));
    REQUIRE(r.code == 0);
    const auto summary = json::parse(slurp(t.path / "m" / "mining.json"));
    CHECK(summary.at("k") == 50);
    std::ifstream nb(t.path / "m" / "neighbors.jsonl");
    std::size_t lines = 0;
    for (std::string line; std::getline(nb, line);) {
        ++lines;
    }
    CHECK(lines == 150);

    auto single = args("one.emb", "m1");
    single.insert(single.end(), {"--k", "1"});
    REQUIRE(cli(single).code == 0);
    CHECK(json::parse(slurp(t.path / "m1" / "mining.json")).at("mined_documents") == 1);

    // Feed the mined inventory back as a source and sample with the substituted QB.
    const auto qb = json::parse(slurp(t.path / "m" / "qb_mined.json"));
    auto mined_source = qb.at("source");
    mined_source["inventory"] = "m/mined.jsonl";
    c["sources"].push_back(mined_source);
    c["blends"]["qb"]["weights"] = qb.at("qb").at("weights");
    write(t.path / "c2.json", c.dump());
    const auto s = cli({"sample", "--config", (t.path / "c2.json").string(), "--out", (t.path / "s").string()});
    REQUIRE(s.code == 0);
    CHECK(json::parse(s.out).at("proportions_pass") == true);
    CHECK(slurp(t.path / "s" / "manifest.jsonl").find("\"source\":\"mined\"") != std::string::npos);

    std::ofstream(t.path / "bad.emb", std::ios::binary) << "short";
    std::ofstream(t.path / "bad.emb.ids") << "x\n";
    const auto bad = cli(args("bad.emb", "mb"));
    CHECK(bad.code == 2);
    CHECK(json::parse(bad.err).at("message").get<std::string>().find("byte") != std::string::npos);
    CHECK_FALSE(fs::exists(t.path / "mb"));
}
