// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "cptkit/error.hpp"
#include "oracles.hpp"
#include "cptkit/quality.hpp"

using namespace cptkit;
using oracle::BruteKn;
using oracle::Words;

namespace {

std::vector<TokenId> ids_of(const NgramModel& m, const Words& words) {
    std::vector<TokenId> ids;
    for (const auto& w : words) {
        ids.push_back(w == "<s>" ? kBosId : m.id_of(w));
    }
    return ids;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

const Sentences& toy_corpus() {
    static const Sentences c = tokenize_lines(
        "the cat sat on the mat\n"
        "the dog sat on the log\n"
        "a cat and a dog met on the mat\n"
        "the cat saw the dog\n"
        "a dog sat\n");
    return c;
}

}  // namespace

TEST_CASE("hand-expanded bigram on a b a b") {
    const auto m = train_ngram({{"a", "b", "a", "b"}}, {2, true});
    CHECK(m.discounts()[1] == doctest::Approx(0.6));
    CHECK(m.discounts()[0] == doctest::Approx(0.5));
    CHECK(m.predictable().size() == 4);
    const TokenId a = m.id_of("a");
    const TokenId b = m.id_of("b");
    CHECK(m.probability({}, b) == doctest::Approx(0.21875).epsilon(1e-12));
    const std::vector<TokenId> ctx{a};
    CHECK(m.probability(ctx, b) == doctest::Approx(0.765625).epsilon(1e-12));
}

TEST_CASE("single-symbol corpus") {
    const auto m = train_ngram({{"a", "a", "a", "a"}}, {1, false});
    const double pa = m.probability({}, m.id_of("a"));
    CHECK(pa + m.probability({}, kUnkId) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pa > 0.9);
    const double ppl = perplexity(m, Words{"a", "a", "a"});
    CHECK(ppl == doctest::Approx(1.0 / pa).epsilon(1e-12));
    CHECK(ppl < 1.2);
    const double unk = perplexity(m, Words{"x", "y"});
    CHECK(std::isfinite(unk));
    CHECK(unk == doctest::Approx(1.0 / m.probability({}, kUnkId)).epsilon(1e-12));
}

TEST_CASE("perplexity matches the brute-force evaluator") {
    const Sentences docs{
        tokenize("the cat sat on the log"),
        tokenize("a dog met the cat on a mat"),
        tokenize("zebra sat on the cat"),
        tokenize("the the the"),
    };
    std::size_t tokens = 0;
    for (const auto& s : toy_corpus()) {
        tokens += s.size();
    }
    REQUIRE(tokens <= 50);
    for (const bool end : {true, false}) {
        for (int order = 1; order <= 4; ++order) {
            const auto model = train_ngram(toy_corpus(), {order, end});
            const BruteKn oracle(toy_corpus(), order, end);
            for (int k = 1; k <= order; ++k) {
                CHECK(rel(model.discounts()[static_cast<std::size_t>(k - 1)], oracle.discount(k)) <= 1e-12);
            }
            for (const auto& d : docs) {
                INFO("order " << order << " end " << end);
                CHECK(rel(perplexity(model, d), oracle.perplexity({d})) <= 1e-9);
            }
            const Sentences multi{docs[0], docs[1]};
            CHECK(rel(perplexity(model, multi), oracle.perplexity(multi)) <= 1e-9);
        }
    }
}

TEST_CASE("conditional distributions sum to one") {
    const auto model = train_ngram(toy_corpus(), {4, true});
    const BruteKn oracle(toy_corpus(), 4, true);
    Words pool = oracle.vocab();
    pool.push_back("<s>");
    pool.push_back("unseen");
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        Words ctx;
        const auto len = rng() % 4;
        for (std::size_t j = 0; j < len; ++j) {
            ctx.push_back(pool[rng() % pool.size()]);
        }
        if (i % 3 == 0 && !ctx.empty()) {
            ctx.front() = "<s>";
        }
        const auto ids = ids_of(model, ctx);
        double sum = 0;
        for (const TokenId w : model.predictable()) {
            sum += model.probability(ids, w);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("training errors") {
    CHECK_THROWS_AS(train_ngram({}, {3, true}), Error);
    try {
        (void)train_ngram({{}}, {3, true});
        FAIL("expected empty-corpus");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyCorpus);
    }
    try {
        (void)train_ngram(toy_corpus(), {0, true});
        FAIL("expected degenerate-order");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateOrder);
    }
    const auto m = train_ngram(toy_corpus(), {2, true});
    try {
        (void)perplexity(m, Words{});
        FAIL("expected empty-document");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyDocument);
    }
}

TEST_CASE("model digests and serialization") {
    const auto m = train_ngram(toy_corpus(), {3, true});
    auto shuffled = toy_corpus();
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(train_ngram(toy_corpus(), {3, true}).digest() == m.digest());
    CHECK(train_ngram(shuffled, {3, true}).digest() == m.digest());
    CHECK(train_ngram(toy_corpus(), {2, true}).digest() != m.digest());

    std::stringstream buf;
    write_model(buf, m);
    const auto bytes = buf.str();
    std::istringstream in(bytes);
    const auto back = read_model(in);
    CHECK(back.digest() == m.digest());
    const auto doc = tokenize("the dog sat on the mat");
    CHECK(perplexity(back, doc) == perplexity(m, doc));

    auto corrupt = bytes;
    corrupt[corrupt.size() / 2] ^= 0x01;
    std::istringstream bad(corrupt);
    try {
        (void)read_model(bad);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK((e.code() == ErrorCode::DigestMismatch || e.code() == ErrorCode::Format));
    }
}

TEST_CASE("quartile filter small cases") {
    std::vector<ScoredDocument> eight;
    for (int i = 8; i >= 1; --i) {
        eight.push_back({"d" + std::to_string(i), static_cast<double>(i), ""});
    }
    const auto q = quartile_filter(eight);
    CHECK(q.selected == std::set<std::string>{"d1", "d2"});
    CHECK(q.threshold == 2.0);
    CHECK(quartile_filter(eight, 1.0).selected.size() == 8);

    std::vector<ScoredDocument> equal;
    for (const auto* id : {"e", "c", "a", "h", "b", "g", "f", "d"}) {
        equal.push_back({id, 3.0, ""});
    }
    CHECK(quartile_filter(equal).selected == std::set<std::string>{"a", "b"});
    CHECK_THROWS_AS((void)quartile_filter({}), Error);
    CHECK_THROWS_AS((void)quartile_filter(eight, 0.0), Error);
}

TEST_CASE("quartile filter equals sort-and-slice") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> ppl(1.0, 1000.0);
    std::vector<ScoredDocument> scores;
    for (int i = 0; i < 1000; ++i) {
        // Coarse rounding produces plenty of ties.
        scores.push_back({"doc" + std::to_string(rng() % 1'000'000) + "_" + std::to_string(i), 10 + std::round(ppl(rng) / 10) * 10, ""});
    }
    auto sorted = scores;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        return a.perplexity != b.perplexity ? a.perplexity < b.perplexity : a.id < b.id;
    });
    std::set<std::string> expected;
    for (std::size_t i = 0; i < 1000 / 4; ++i) {
        expected.insert(sorted[i].id);
    }
    const auto q = quartile_filter(scores);
    CHECK(q.selected.size() == 250);
    CHECK(q.selected == expected);
    CHECK(q.threshold == sorted[249].perplexity);
}

TEST_CASE("grouped filter and manifest round trip") {
    std::vector<ScoredDocument> scores;
    for (int i = 0; i < 8; ++i) {
        scores.push_back({"x" + std::to_string(i), static_cast<double>(1 + i), "en"});
        scores.push_back({"y" + std::to_string(i), static_cast<double>(100 + i), "de"});
    }
    const auto g = quartile_filter_grouped(scores);
    CHECK(g.selected == std::set<std::string>{"x0", "x1", "y0", "y1"});
    CHECK(quartile_filter(scores).selected == std::set<std::string>{"x0", "x1", "x2", "x3"});

    auto q = quartile_filter(scores);
    q.model_digest = "abc";
    std::stringstream buf;
    write_quality_manifest(buf, q);
    const auto back = read_quality_manifest(buf);
    CHECK(back.selected == q.selected);
    CHECK(quality_manifest_digest(back) == quality_manifest_digest(q));
    const auto subset = to_document_subset(back);
    CHECK(subset.document_ids == q.selected);
}

TEST_CASE("parallel scoring matches serial") {
    const auto m = train_ngram(toy_corpus(), {3, true});
    std::vector<std::pair<std::string, Sentences>> docs;
    for (int i = 0; i < 40; ++i) {
        docs.emplace_back("d" + std::to_string(i), Sentences{toy_corpus()[static_cast<std::size_t>(i) % 5]});
    }
    const auto one = score_documents(m, docs, 1);
    const auto four = score_documents(m, docs, 4);
    REQUIRE(one.size() == four.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
        CHECK(one[i].id == four[i].id);
        CHECK(one[i].perplexity == four[i].perplexity);
    }
}
