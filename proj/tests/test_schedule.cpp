// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cptkit/error.hpp"
#include "oracles.hpp"
#include "cptkit/schedule.hpp"

using namespace cptkit;
using oracle::Curve;

namespace {

constexpr TokenCount k300B = 300'000'000'000ULL;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }


}  // namespace

TEST_CASE("recipe cosine endpoints and midpoint") {
    const auto s = build_cosine(4.5e-5, 4.5e-7, k300B);
    CHECK(rel(lr_at(s, 0), 4.5e-5) <= 1e-12);
    CHECK(rel(lr_at(s, k300B / 2), 2.2725e-5) <= 1e-12);
    CHECK(rel(lr_at(s, k300B), 4.5e-7) <= 1e-12);
    CHECK_THROWS_AS((void)lr_at(s, k300B + 1), Error);
}

TEST_CASE("cosine is non-increasing") {
    const auto s = build_cosine(1e-3, 1e-5, 10'000);
    double prev = lr_at(s, 0);
    for (TokenCount t = 1; t <= 10'000; ++t) {
        const double v = lr_at(s, t);
        REQUIRE(v <= prev);
        prev = v;
    }
}

TEST_CASE("switch token at a fifth of the start LR") {
    const auto s = build_cosine(4.5e-5, 4.5e-7, k300B);
    const auto sol = solve_switch_token(s, 0.2);
    const Curve oracle{false, true, 4.5e-5L, 4.5e-7L, 0, k300B, 0, 0};
    const auto expected = oracle.bisect(0.2L * 4.5e-5L);
    CHECK(sol.token_index + 1 >= expected);
    CHECK(sol.token_index <= expected + 1);
    CHECK(sol.token_index == doctest::Approx(213'393'956'596.0).epsilon(1e-11));
    CHECK(static_cast<double>(sol.token_index) / static_cast<double>(k300B) == doctest::Approx(0.7113).epsilon(1e-4));
    CHECK(lr_at(s, sol.token_index) <= 0.2 * 4.5e-5);
    CHECK(lr_at(s, sol.token_index - 1) > 0.2 * 4.5e-5);
}

TEST_CASE("switch solver boundary cases") {
    const auto s = build_cosine(4.5e-5, 4.5e-7, 1'000'000);
    CHECK(solve_switch_token(s, 0.2).token_index == 711'314);
    CHECK(solve_switch_token(s, 1.0).token_index == 0);
    CHECK(solve_switch_token(s, 0.01).token_index <= 1'000'000);
    try {
        (void)solve_switch_token(s, 1.0 / 1000);
        FAIL("expected unreachable-target");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnreachableTarget);
    }
    CHECK_THROWS_AS((void)solve_switch_token(s, 0.0), Error);
    CHECK_THROWS_AS((void)solve_switch_token(s, 1.5), Error);
}

TEST_CASE("switch solver agrees with bisection on random schedules") {
    std::mt19937_64 rng(20261016);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        Curve c;
        c.hi = std::pow(10.0, -6.0 + 3.0 * unit(rng));
        const double ratio = std::pow(10.0, -3.0 + 2.5 * unit(rng));
        c.lo = c.hi * ratio;
        c.total = static_cast<TokenCount>(std::pow(10.0, 3.0 + 10.0 * unit(rng)));
        c.wsd = unit(rng) < 0.4;
        c.cosine_decay = unit(rng) < 0.5;
        c.stable_fraction = 0.5 + 0.45 * unit(rng);
        if (unit(rng) < 0.3) {
            c.warm = static_cast<TokenCount>(static_cast<double>(c.total) * 0.1 * unit(rng));
            c.warm_from = c.hi * unit(rng);
        }
        const double fraction = ratio + (1.0 - ratio) * (0.001 + 0.998 * unit(rng));

        std::optional<WarmupSpec> warmup;
        if (c.warm > 0) {
            warmup = WarmupSpec{static_cast<double>(c.warm_from), static_cast<double>(c.hi), c.warm};
        }
        const auto s = c.wsd ? build_wsd(static_cast<double>(c.hi), static_cast<double>(c.lo), c.total,
                                         static_cast<double>(c.stable_fraction),
                                         c.cosine_decay ? DecayShape::Cosine : DecayShape::Linear, warmup)
                             : build_cosine(static_cast<double>(c.hi), static_cast<double>(c.lo), c.total, warmup);
        const auto sol = solve_switch_token(s, fraction);
        const auto expected = c.bisect(static_cast<long double>(fraction * static_cast<double>(c.hi)));
        INFO("case " << i << " T=" << c.total << " f=" << fraction << " wsd=" << c.wsd);
        REQUIRE(sol.token_index + 1 >= expected);
        REQUIRE(sol.token_index <= expected + 1);
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("warmup must ramp to eta_start") {
    CHECK_THROWS_AS(build_cosine(4.5e-5, 4.5e-7, 1000, WarmupSpec{0.0, 1e-4, 100}), Error);
    CHECK_THROWS_AS(build_cosine(4.5e-5, 4.5e-7, 1000, WarmupSpec{0.0, 4.5e-5, 1000}), Error);
    CHECK_THROWS_AS(build_cosine(4.5e-7, 4.5e-5, 1000), Error);
    CHECK_THROWS_AS(build_cosine(4.5e-5, 4.5e-7, 0), Error);
}

TEST_CASE("warmup variants") {
    constexpr TokenCount pretrain_tokens = 8'000'000'000'000ULL;
    constexpr TokenCount warm = kDefaultWarmupTokens;
    const auto pretrain = build_cosine(4.5e-4, 4.5e-5, pretrain_tokens);

    const auto check_shape = [&](const LrSchedule& s, double from, double peak) {
        CHECK(lr_at(s, 0) == from);
        CHECK(lr_at(s, warm) == peak);
        CHECK(lr_at(s, k300B) == doctest::Approx(peak / 100).epsilon(1e-15));
        double prev = lr_at(s, 0);
        for (TokenCount t = warm / 64; t <= warm; t += warm / 64) {
            const double v = lr_at(s, t);
            CHECK(v >= prev);
            prev = v;
        }
        for (TokenCount t = warm; t <= k300B; t += k300B / 997) {
            const double v = lr_at(s, t);
            CHECK(v <= prev);
            prev = v;
        }
    };

    const auto up = build_warmup_variant(WarmupVariant::UpFromMin, pretrain, k300B);
    CHECK(up.eta_start() == 1.5 * 4.5e-5);
    CHECK(rel(up.eta_start(), 6.75e-5) <= 1e-15);
    check_shape(up, 4.5e-5, 6.75e-5);

    const auto half = build_warmup_variant(WarmupVariant::HalfToMin, pretrain, k300B);
    check_shape(half, 2.25e-5, 4.5e-5);

    // Extended cosine over 8.3T tokens, read off at 8T.
    const double extended = 4.5e-5 + 0.5 * (4.5e-4 - 4.5e-5) * (1 + std::cos(std::numbers::pi * 8.0 / 8.3));
    CHECK(rel(extended, 4.630411e-5) < 1e-6);
    const auto zero = build_warmup_variant(WarmupVariant::ZeroToExtended, pretrain, k300B);
    CHECK(rel(zero.eta_start(), extended) <= 1e-12);
    check_shape(zero, 0.0, zero.eta_start());

    // The pretraining warmup carries over to the extended horizon.
    const auto warmed = build_cosine(4.5e-4, 4.5e-5, pretrain_tokens, WarmupSpec{0.0, 4.5e-4, warm});
    CHECK(rel(extended_pretrain_lr(warmed, pretrain_tokens + k300B, pretrain_tokens), 4.63091e-5) < 1e-5);
}

TEST_CASE("wsd plateau then decay") {
    const auto lin = build_wsd(4.5e-5, 4.5e-7, k300B);
    CHECK(lr_at(lin, 0) == 4.5e-5);
    CHECK(lr_at(lin, 240'000'000'000ULL) == 4.5e-5);
    CHECK(rel(lr_at(lin, 270'000'000'000ULL), 2.2725e-5) <= 1e-12);
    CHECK(lr_at(lin, k300B) == 4.5e-7);
    const auto cos = build_wsd(4.5e-5, 4.5e-7, k300B, 0.8, DecayShape::Cosine);
    CHECK(rel(lr_at(cos, 270'000'000'000ULL), 2.2725e-5) <= 1e-12);
    for (const auto* s : {&lin, &cos}) {
        double prev = lr_at(*s, 0);
        for (TokenCount t = 0; t <= k300B; t += k300B / 1013) {
            const double v = lr_at(*s, t);
            CHECK(v <= prev);
            prev = v;
        }
    }
    CHECK_THROWS_AS(build_wsd(4.5e-5, 4.5e-7, k300B, 1.0), Error);
    CHECK_THROWS_AS(build_wsd(4.5e-5, 4.5e-7, k300B, -0.1), Error);
}

TEST_CASE("sampled curve covers both ends") {
    const auto s = build_cosine(1.0, 0.01, 1000);
    const auto c = sample_curve(s, 300);
    REQUIRE(c.size() == 5);
    CHECK(c.front().first == 0);
    CHECK(c[3].first == 900);
    CHECK(c.back() == std::pair<TokenCount, double>{1000, 0.01});
}
