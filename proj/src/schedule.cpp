// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "cptkit/error.hpp"

namespace cptkit {

namespace {

void check_rates(double eta_start, double eta_end, TokenCount total_tokens) {
    if (!std::isfinite(eta_start) || !std::isfinite(eta_end) || eta_start <= 0.0 || eta_end < 0.0) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("learning rates must be finite with eta_start > 0 and eta_end >= 0 (got {}, {})",
                                eta_start, eta_end));
    }
    if (eta_end > eta_start) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("eta_end {} exceeds eta_start {}", eta_end, eta_start));
    }
    if (total_tokens == 0) {
        throw Error(ErrorCode::InvalidParameter, "total_tokens must be positive");
    }
}

void check_warmup(const std::optional<WarmupSpec>& warmup, double eta_start, TokenCount total_tokens) {
    if (!warmup) {
        return;
    }
    if (warmup->tokens == 0 || warmup->tokens >= total_tokens) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("warmup tokens {} must lie in (0, {})", warmup->tokens, total_tokens));
    }
    if (!(warmup->start_lr >= 0.0) || !(warmup->target_lr > warmup->start_lr)) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("warmup must ramp upward from a non-negative rate (got {} -> {})",
                                warmup->start_lr, warmup->target_lr));
    }
    if (std::abs(warmup->target_lr - eta_start) > 1e-12 * eta_start) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("warmup target {} must equal the schedule peak {}", warmup->target_lr, eta_start));
    }
}

double cosine_between(double hi, double lo, double u) {
    // u in [0, 1]; endpoints returned exactly
    if (u <= 0.0) {
        return hi;
    }
    if (u >= 1.0) {
        return lo;
    }
    return lo + 0.5 * (hi - lo) * (1.0 + std::cos(std::numbers::pi * u));
}

double linear_between(double hi, double lo, double u) {
    if (u <= 0.0) {
        return hi;
    }
    if (u >= 1.0) {
        return lo;
    }
    return hi + (lo - hi) * u;
}

double wsd_stable_tokens(const LrSchedule& s) {
    return s.wsd_stable_fraction() * static_cast<double>(s.total_tokens() - s.decay_begin());
}

// Closed-form (real-valued) token where the post-warmup curve reaches `target`.
double analytic_crossing(const LrSchedule& s, double target) {
    const double hi = s.eta_start();
    const double lo = s.eta_end();
    const double begin = static_cast<double>(s.decay_begin());
    const double span = static_cast<double>(s.total_tokens()) - begin;
    if (target >= hi) {
        return begin;
    }
    if (s.kind() == ScheduleKind::Cosine) {
        const double x = std::clamp(2.0 * (target - lo) / (hi - lo) - 1.0, -1.0, 1.0);
        return begin + span * std::acos(x) / std::numbers::pi;
    }
    const double stable = wsd_stable_tokens(s);
    const double decay = span - stable;
    double u = 0.0;
    if (s.wsd_decay_shape() == DecayShape::Linear) {
        u = (hi - target) / (hi - lo);
    } else {
        const double x = std::clamp(2.0 * (target - lo) / (hi - lo) - 1.0, -1.0, 1.0);
        u = std::acos(x) / std::numbers::pi;
    }
    return begin + stable + decay * u;
}

TokenCount bisect_crossing(const LrSchedule& s, double target) {
    TokenCount lo = s.decay_begin();
    TokenCount hi = s.total_tokens();
    while (lo < hi) {
        const TokenCount mid = lo + (hi - lo) / 2;
        if (lr_at(s, mid) <= target) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    return lo;
}

}  // namespace

LrSchedule build_cosine(double eta_start, double eta_end, TokenCount total_tokens, std::optional<WarmupSpec> warmup) {
    check_rates(eta_start, eta_end, total_tokens);
    check_warmup(warmup, eta_start, total_tokens);
    LrSchedule s;
    s.mKind = ScheduleKind::Cosine;
    s.mEtaStart = eta_start;
    s.mEtaEnd = eta_end;
    s.mTotal = total_tokens;
    s.mWarmup = warmup;
    return s;
}

LrSchedule build_wsd(double eta_start, double eta_end, TokenCount total_tokens, double stable_fraction,
                     DecayShape decay_shape, std::optional<WarmupSpec> warmup) {
    check_rates(eta_start, eta_end, total_tokens);
    check_warmup(warmup, eta_start, total_tokens);
    if (!(stable_fraction >= 0.0 && stable_fraction < 1.0)) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("WSD stable fraction {} must lie in [0, 1)", stable_fraction));
    }
    LrSchedule s;
    s.mKind = ScheduleKind::Wsd;
    s.mEtaStart = eta_start;
    s.mEtaEnd = eta_end;
    s.mTotal = total_tokens;
    s.mWarmup = warmup;
    s.mStableFraction = stable_fraction;
    s.mDecayShape = decay_shape;
    return s;
}

double lr_at(const LrSchedule& s, TokenCount token) {
    if (token > s.total_tokens()) {
        throw Error(ErrorCode::OutOfRange,
                    fmt::format("token {} is past the schedule horizon {}", token, s.total_tokens()));
    }
    const TokenCount begin = s.decay_begin();
    if (token < begin) {
        const auto& w = *s.warmup();
        return w.start_lr + (w.target_lr - w.start_lr) * (static_cast<double>(token) / static_cast<double>(w.tokens));
    }
    if (token == s.total_tokens()) {
        return s.eta_end();
    }
    const double t = static_cast<double>(token - begin);
    const double span = static_cast<double>(s.total_tokens() - begin);
    if (s.kind() == ScheduleKind::Cosine) {
        return cosine_between(s.eta_start(), s.eta_end(), t / span);
    }
    const double stable = wsd_stable_tokens(s);
    if (t <= stable) {
        return s.eta_start();
    }
    const double u = (t - stable) / (span - stable);
    return s.wsd_decay_shape() == DecayShape::Linear ? linear_between(s.eta_start(), s.eta_end(), u)
                                                     : cosine_between(s.eta_start(), s.eta_end(), u);
}

SwitchSolution solve_switch_token(const LrSchedule& s, double lr_fraction) {
    if (!(lr_fraction > 0.0 && lr_fraction <= 1.0)) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("switch fraction {} must lie in (0, 1]", lr_fraction));
    }
    const double target = lr_fraction * s.eta_start();
    if (target < s.eta_end() * (1.0 - 1e-12)) {
        throw Error(ErrorCode::UnreachableTarget,
                    fmt::format("target LR {} (fraction {}) is below the schedule minimum {}", target, lr_fraction,
                                s.eta_end()));
    }
    // eta_end/eta_start ratios like 1/100 can land an ulp below eta_end
    const double effective = std::max(target, s.eta_end());

    const TokenCount begin = s.decay_begin();
    const TokenCount end = s.total_tokens();
    const double guess = std::ceil(analytic_crossing(s, effective));
    TokenCount token = static_cast<TokenCount>(std::clamp(guess, static_cast<double>(begin), static_cast<double>(end)));

    constexpr int kMaxSnapSteps = 16;
    int steps = 0;
    while (token < end && lr_at(s, token) > effective && steps < kMaxSnapSteps) {
        ++token;
        ++steps;
    }
    while (token > begin && lr_at(s, token - 1) <= effective && steps < kMaxSnapSteps) {
        --token;
        ++steps;
    }
    const bool settled = lr_at(s, token) <= effective && (token == begin || lr_at(s, token - 1) > effective);
    if (!settled) {
        token = bisect_crossing(s, effective);
    }
    return SwitchSolution{token, lr_at(s, token), target};
}

double extended_pretrain_lr(const LrSchedule& pretrain, TokenCount extended_total, TokenCount at_token) {
    if (pretrain.kind() != ScheduleKind::Cosine) {
        throw Error(ErrorCode::InvalidParameter, "schedule extension is defined for cosine schedules only");
    }
    if (at_token > extended_total) {
        throw Error(ErrorCode::OutOfRange,
                    fmt::format("token {} is past the extended horizon {}", at_token, extended_total));
    }
    const auto extended = build_cosine(pretrain.eta_start(), pretrain.eta_end(), extended_total, pretrain.warmup());
    return lr_at(extended, at_token);
}

LrSchedule build_warmup_variant(WarmupVariant variant, const LrSchedule& pretrain, TokenCount ct_tokens,
                                TokenCount warmup_tokens) {
    const double eta_min = pretrain.eta_end();
    double from = 0.0;
    double peak = 0.0;
    switch (variant) {
        case WarmupVariant::UpFromMin:
            from = eta_min;
            peak = 1.5 * eta_min;
            break;
        case WarmupVariant::HalfToMin:
            from = 0.5 * eta_min;
            peak = eta_min;
            break;
        case WarmupVariant::ZeroToExtended:
            from = 0.0;
            peak = extended_pretrain_lr(pretrain, pretrain.total_tokens() + ct_tokens, pretrain.total_tokens());
            break;
    }
    return build_cosine(peak, peak / 100.0, ct_tokens, WarmupSpec{from, peak, warmup_tokens});
}

std::vector<std::pair<TokenCount, double>> sample_curve(const LrSchedule& s, TokenCount stride) {
    if (stride == 0) {
        throw Error(ErrorCode::InvalidParameter, "curve stride must be positive");
    }
    std::vector<std::pair<TokenCount, double>> out;
    for (TokenCount t = 0; t < s.total_tokens(); t += stride) {
        out.emplace_back(t, lr_at(s, t));
        if (s.total_tokens() - t <= stride) {
            break;
        }
    }
    out.emplace_back(s.total_tokens(), s.eta_end());
    return out;
}

}  // namespace cptkit
