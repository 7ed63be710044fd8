// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace cptkit {

using TokenCount = std::uint64_t;

enum class ScheduleKind { Cosine, Wsd };
enum class DecayShape { Linear, Cosine };

/// Linear ramp from start_lr to target_lr over the first `tokens` tokens.
struct WarmupSpec {
    double start_lr = 0.0;
    double target_lr = 0.0;
    TokenCount tokens = 0;

    bool operator==(const WarmupSpec&) const = default;
};

/// Default warmup length for continued-training warmup variants (16B tokens).
inline constexpr TokenCount kDefaultWarmupTokens = 16'000'000'000ULL;
inline constexpr double kDefaultWsdStableFraction = 0.8;

/**
 * Learning-rate curve over a token horizon.
 *
 * Immutable once built; use build_cosine() / build_wsd() to construct. Tokens are the
 * independent variable. After warmup the curve is non-increasing and ends exactly at eta_end.
 */
class LrSchedule {
public:
    [[nodiscard]] ScheduleKind kind() const noexcept { return mKind; }
    [[nodiscard]] double eta_start() const noexcept { return mEtaStart; }
    [[nodiscard]] double eta_end() const noexcept { return mEtaEnd; }
    [[nodiscard]] TokenCount total_tokens() const noexcept { return mTotal; }
    [[nodiscard]] const std::optional<WarmupSpec>& warmup() const noexcept { return mWarmup; }
    [[nodiscard]] double wsd_stable_fraction() const noexcept { return mStableFraction; }
    [[nodiscard]] DecayShape wsd_decay_shape() const noexcept { return mDecayShape; }

    /// First token of the monotone (post-warmup) region.
    [[nodiscard]] TokenCount decay_begin() const noexcept { return mWarmup ? mWarmup->tokens : 0; }

    bool operator==(const LrSchedule&) const = default;

private:
    friend LrSchedule build_cosine(double, double, TokenCount, std::optional<WarmupSpec>);
    friend LrSchedule build_wsd(double, double, TokenCount, double, DecayShape, std::optional<WarmupSpec>);

    ScheduleKind mKind = ScheduleKind::Cosine;
    double mEtaStart = 0.0;
    double mEtaEnd = 0.0;
    TokenCount mTotal = 0;
    std::optional<WarmupSpec> mWarmup;
    double mStableFraction = 0.0;
    DecayShape mDecayShape = DecayShape::Linear;
};

struct SwitchSolution {
    TokenCount token_index = 0;
    double achieved_lr = 0.0;
    double target_lr = 0.0;
};

/// Cosine annealing eta_end + (eta_start - eta_end) * (1 + cos(pi * t' / T')) / 2, with t' and T'
/// measured from the end of the optional warmup. A warmup must ramp up to eta_start.
LrSchedule build_cosine(double eta_start, double eta_end, TokenCount total_tokens,
                        std::optional<WarmupSpec> warmup = std::nullopt);

/// Warmup-stable-decay: constant eta_start until stable_fraction of the post-warmup horizon,
/// then decays to eta_end with the given shape.
LrSchedule build_wsd(double eta_start, double eta_end, TokenCount total_tokens,
                     double stable_fraction = kDefaultWsdStableFraction,
                     DecayShape decay_shape = DecayShape::Linear,
                     std::optional<WarmupSpec> warmup = std::nullopt);

double lr_at(const LrSchedule& schedule, TokenCount token);

/**
 * Smallest token in the post-warmup region at which the LR is at or below
 * lr_fraction * eta_start.
 *
 * Solved in closed form (arccos inversion for cosine decay, affine inversion for linear decay)
 * and then snapped to one-token resolution against lr_at(); falls back to bisection if the
 * closed-form guess is off by more than a few tokens.
 */
SwitchSolution solve_switch_token(const LrSchedule& schedule, double lr_fraction);

/// Value of `pretrain` re-horizoned to `extended_total` tokens, evaluated at `at_token`.
double extended_pretrain_lr(const LrSchedule& pretrain, TokenCount extended_total, TokenCount at_token);

enum class WarmupVariant {
    /// eta_min -> 1.5 * eta_min
    UpFromMin,
    /// 0.5 * eta_min -> eta_min
    HalfToMin,
    /// 0 -> value of the pretraining cosine extended over the continued-training tokens
    ZeroToExtended,
};

/**
 * Continued-training cosine schedule with one of the warmup variants. The decay ends at
 * peak / 100 in every variant.
 */
LrSchedule build_warmup_variant(WarmupVariant variant, const LrSchedule& pretrain, TokenCount ct_tokens,
                                TokenCount warmup_tokens = kDefaultWarmupTokens);

/// (token, lr) samples at the given stride; always includes token 0 and total_tokens.
std::vector<std::pair<TokenCount, double>> sample_curve(const LrSchedule& schedule, TokenCount stride);

}  // namespace cptkit
