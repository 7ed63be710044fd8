// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "cptkit/error.hpp"
#include "oracles.hpp"
#include "cptkit/mining.hpp"

using namespace cptkit;
using oracle::naive;

namespace {

EmbeddingSet random_set(std::size_t n, std::size_t d, std::uint64_t seed, const std::string& prefix) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g;
    std::vector<float> v(n * d);
    for (auto& x : v) {
        x = g(rng);
    }
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back(prefix + std::to_string(i));
    }
    return {d, std::move(v), std::move(ids)};
}


DocumentIndex docs_for(const EmbeddingSet& set) {
    DocumentIndex docs;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& id = set.ids()[i];
        docs.emplace(id, Document{id, 10 + i % 97, ""});
    }
    return docs;
}

ErrorCode code_of(const auto& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::Io;
}

}  // namespace

TEST_CASE("knn equals the naive scan") {
    const auto corpus = random_set(3000, 32, 1, "c");
    const auto queries = random_set(40, 32, 2, "q");
    for (const auto metric : {Metric::Cosine, Metric::InnerProduct}) {
        const ExactIndex index(corpus, metric);
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const auto got = index.knn(queries.row(i), 50);
            const auto want = naive(corpus, queries.row(i), 50, metric == Metric::Cosine);
            REQUIRE(got.size() == want.size());
            for (std::size_t r = 0; r < got.size(); ++r) {
                CHECK(got[r].id == want[r].id);
                CHECK(std::abs(got[r].score - want[r].score) <= 1e-6 * std::max(1.0, std::abs(want[r].score)));
            }
        }
    }
}

TEST_CASE("trivial index cases") {
    const auto one = random_set(1, 4, 3, "x");
    const ExactIndex small(one);
    CHECK(small.size() == 1);
    const auto self = small.knn(one.row(0), 1);
    CHECK(self[0].id == "x0");
    CHECK(self[0].score == doctest::Approx(1.0).epsilon(1e-12));

    const auto set = random_set(20, 8, 4, "s");
    const ExactIndex index(set);
    const auto all = index.knn(set.row(7), 20);
    CHECK(all.size() == 20);
    CHECK(all[0].id == "s7");
    for (std::size_t i = 1; i < all.size(); ++i) {
        CHECK(all[i - 1].score >= all[i].score);
    }
    CHECK(code_of([&] { (void)index.knn(set.row(0), 0); }) == ErrorCode::KOutOfRange);
    CHECK(code_of([&] { (void)index.knn(set.row(0), 21); }) == ErrorCode::KOutOfRange);
    const std::vector<float> short_query(7, 1.0F);
    CHECK(code_of([&] { (void)index.knn(short_query, 1); }) == ErrorCode::DimensionMismatch);
    const std::vector<float> zero(8, 0.0F);
    CHECK(code_of([&] { (void)index.knn(zero, 1); }) == ErrorCode::ZeroNorm);
}

TEST_CASE("ties break on id") {
    // Identical rows, ids given out of order.
    std::vector<float> v;
    for (int i = 0; i < 5; ++i) {
        v.insert(v.end(), {1.0F, 2.0F, 3.0F});
    }
    const EmbeddingSet set(3, v, {"d", "b", "e", "a", "c"});
    const auto got = ExactIndex(set).knn(std::vector<float>{1.0F, 2.0F, 3.0F}, 3);
    CHECK(got[0].id == "a");
    CHECK(got[1].id == "b");
    CHECK(got[2].id == "c");
}

TEST_CASE("invalid embeddings") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    CHECK(code_of([&] { (void)EmbeddingSet(2, {1.0F, nan}, {"a"}); }) == ErrorCode::NonFinite);
    CHECK(code_of([&] { (void)EmbeddingSet(2, {1.0F, 2.0F, 3.0F}, {"a"}); }) == ErrorCode::DimensionMismatch);
    CHECK(code_of([&] { (void)EmbeddingSet(1, {1.0F, 2.0F}, {"a", "a"}); }) == ErrorCode::InvalidParameter);
    CHECK(code_of([&] { (void)ExactIndex(EmbeddingSet(2, {0.0F, 0.0F}, {"a"})); }) == ErrorCode::ZeroNorm);
    CHECK_NOTHROW((void)ExactIndex(EmbeddingSet(2, {0.0F, 0.0F}, {"a"}), Metric::InnerProduct));
}

TEST_CASE("embedding file round trip and byte offsets") {
    const auto set = random_set(5, 3, 5, "r");
    std::stringstream data;
    std::stringstream ids;
    write_embeddings(data, ids, set);
    const auto bytes = data.str();
    CHECK(bytes.size() == kEmbeddingHeaderBytes + 5 * 3 * 4);
    // Little-endian u64 row count up front.
    CHECK(static_cast<unsigned char>(bytes[0]) == 5);
    CHECK(static_cast<unsigned char>(bytes[8]) == 3);
    CHECK(static_cast<unsigned char>(bytes[16]) == 1);

    std::istringstream d1(bytes);
    std::istringstream i1(ids.str());
    const auto back = read_embeddings(d1, i1);
    CHECK(back.vectors() == set.vectors());
    CHECK(back.ids() == set.ids());

    std::istringstream truncated(bytes.substr(0, bytes.size() - 6));
    std::istringstream i2(ids.str());
    try {
        (void)read_embeddings(truncated, i2);
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Format);
        CHECK(std::string(e.what()).find("byte 74") != std::string::npos);
    }
    auto wrong_dtype = bytes;
    wrong_dtype[16] = 2;
    std::istringstream d3(wrong_dtype);
    std::istringstream i3(ids.str());
    CHECK(code_of([&] { (void)read_embeddings(d3, i3); }) == ErrorCode::Format);
    std::istringstream d4(bytes);
    std::istringstream i4("r0\nr1\n");
    CHECK(code_of([&] { (void)read_embeddings(d4, i4); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("mined set is the deduplicated union") {
    const auto corpus = random_set(2000, 16, 6, "c");
    const auto qa = random_set(30, 16, 7, "q");
    const auto docs = docs_for(corpus);
    const auto result = mine(qa, corpus, 20, docs);
    std::set<std::string> oracle;
    for (std::size_t i = 0; i < qa.size(); ++i) {
        for (const auto& n : naive(corpus, qa.row(i), 20, true)) {
            oracle.insert(n.id);
        }
    }
    CHECK(result.mined_set == oracle);
    TokenCount tokens = 0;
    for (const auto& id : oracle) {
        tokens += docs.at(id).token_count;
    }
    CHECK(result.mined_tokens == tokens);
    CHECK(result.per_query.size() == 30);
    CHECK(mined_documents(result, docs).size() == oracle.size());
    CHECK(mine(qa, corpus, 20, docs, Metric::Cosine, 4).mined_set_digest() == result.mined_set_digest());
}

TEST_CASE("mining trivial cases") {
    const auto corpus = random_set(3, 4, 8, "c");
    const auto one = random_set(1, 4, 9, "q");
    CHECK(mine(one, corpus, 3, docs_for(corpus)).mined_set.size() == 3);

    std::vector<float> twice(one.vectors());
    twice.insert(twice.end(), one.vectors().begin(), one.vectors().end());
    const EmbeddingSet same(4, twice, {"q0", "q1"});
    const auto big = random_set(100, 4, 10, "c");
    CHECK(mine(same, big, 5, docs_for(big)).mined_set.size() == 5);

    CHECK(code_of([&] { (void)mine(random_set(1, 5, 1, "q"), corpus, 1, docs_for(corpus)); }) == ErrorCode::DimensionMismatch);
    CHECK(code_of([&] { (void)mine(one, corpus, 1, DocumentIndex{}); }) == ErrorCode::UnknownDocument);
    const EmbeddingSet overlapping(4, std::vector<float>(corpus.row(0).begin(), corpus.row(0).end()), {"c0"});
    CHECK(code_of([&] { (void)mine(overlapping, corpus, 1, docs_for(corpus)); }) == ErrorCode::Overlap);
}

TEST_CASE("mined blend substitution") {
    SourceRegistry r;
    r.add({"web", Domain::EnglishWeb, 1000, std::nullopt});
    r.add({"qa", Domain::QaCategory, 100, QaCategory::Reasoning});
    MiningResult result;
    result.mined_set = {"a", "b"};
    result.mined_tokens = 42;
    const auto mb = emit_mined_blend(result, normalize({{"web", 0.7}, {"qa", 0.3}}, PhaseLabel::QB), r);
    CHECK(mb.phase.weight("mined") == doctest::Approx(0.7));
    CHECK(mb.phase.weight("qa") == doctest::Approx(0.3));
    CHECK_FALSE(mb.phase.contains("web"));
    CHECK(mb.mined_source.token_count == 42);
    CHECK(mb.warnings.empty());
    CHECK_NOTHROW(validate_phase(mb.phase));

    const auto qa_only = emit_mined_blend(result, normalize({{"qa", 1.0}}), r);
    CHECK(qa_only.warnings.size() == 1);
    CHECK(qa_only.phase.weight("qa") == 1.0);

    CHECK(code_of([&] { (void)emit_mined_blend(MiningResult{}, normalize({{"web", 1.0}}), r); }) == ErrorCode::EmptyMiningResult);
}
