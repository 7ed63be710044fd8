// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cptkit/schedule.hpp"

namespace cptkit {

enum class Domain { EnglishWeb, EnglishHighQuality, Multilingual, Code, QaCategory };
enum class QaCategory { WorldKnowledge, Reasoning, Stem, Chat, Code };

std::string_view to_string(Domain d) noexcept;
std::string_view to_string(QaCategory c) noexcept;
std::optional<Domain> parse_domain(std::string_view text) noexcept;
std::optional<QaCategory> parse_qa_category(std::string_view text) noexcept;

struct DataSource {
    std::string name;
    Domain domain = Domain::EnglishWeb;
    TokenCount token_count = 0;
    std::optional<QaCategory> qa_category;
};

/// Name-keyed set of data sources; iteration is in name order.
class SourceRegistry {
public:
    SourceRegistry() = default;
    explicit SourceRegistry(const std::vector<DataSource>& sources);

    /// Throws invalid-parameter on a duplicate name.
    void add(DataSource source);
    [[nodiscard]] const DataSource* find(std::string_view name) const;
    /// Throws unknown-source.
    [[nodiscard]] const DataSource& at(std::string_view name) const;
    [[nodiscard]] const std::map<std::string, DataSource, std::less<>>& sources() const noexcept { return mSources; }
    [[nodiscard]] std::size_t size() const noexcept { return mSources.size(); }

private:
    std::map<std::string, DataSource, std::less<>> mSources;
};

/// A subset of a source's documents that replaces its backing set (e.g. the low-perplexity web subset).
struct DocumentSubset {
    std::string origin;  // where the subset came from, e.g. a quality manifest digest
    std::set<std::string> document_ids;
    std::optional<TokenCount> token_count;

    bool operator==(const DocumentSubset&) const = default;
};

enum class PhaseLabel { GB, QB, Custom };
std::string_view to_string(PhaseLabel l) noexcept;

using RawWeights = std::map<std::string, double>;

/// Normalized source -> probability map. Weights are non-negative and sum to 1.
class BlendPhase {
public:
    [[nodiscard]] const std::map<std::string, double>& weights() const noexcept { return mWeights; }
    [[nodiscard]] double weight(std::string_view source) const;
    [[nodiscard]] PhaseLabel label() const noexcept { return mLabel; }
    [[nodiscard]] const std::map<std::string, DocumentSubset>& backings() const noexcept { return mBackings; }
    [[nodiscard]] const DocumentSubset* backing(std::string_view source) const;
    [[nodiscard]] bool contains(std::string_view source) const { return mWeights.find(std::string(source)) != mWeights.end(); }

    [[nodiscard]] BlendPhase with_label(PhaseLabel label) const;
    [[nodiscard]] BlendPhase with_backing(const std::string& source, DocumentSubset subset) const;

    bool operator==(const BlendPhase&) const = default;

private:
    friend BlendPhase normalize(const RawWeights&, PhaseLabel);
    std::map<std::string, double> mWeights;
    PhaseLabel mLabel = PhaseLabel::Custom;
    std::map<std::string, DocumentSubset> mBackings;
};

/// Scales raw non-negative weights to sum to 1. Throws empty-blend when every weight is zero.
BlendPhase normalize(const RawWeights& raw_weights, PhaseLabel label = PhaseLabel::Custom);

/// True when raw weights do not already sum to 1 within 1e-9.
bool needs_normalization(const RawWeights& raw_weights);

/// Checks the phase invariants (non-negative, sums to 1 within 1e-9); throws invalid-parameter.
void validate_phase(const BlendPhase& phase);

// ---- QA injection -------------------------------------------------------------------------------

/// Shares of the QA mass per QA source; sums to 1.
using QaSubBlend = std::map<std::string, double>;

/// Shares proportional to each QA source's token count.
QaSubBlend proportional_sub_blend(const std::vector<DataSource>& qa_sources);

/**
 * Upweights the `boosted` category by `factor` relative to proportional, holds the `held`
 * category at its proportional share, and shrinks the remaining categories to compensate.
 */
QaSubBlend upweighted_sub_blend(const std::vector<DataSource>& qa_sources, QaCategory boosted, QaCategory held,
                                double factor = 2.0);

/// Named QA sub-blends: "proportional", "stem_world_knowledge", "stem_chat".
QaSubBlend named_sub_blend(std::string_view name, const std::vector<DataSource>& qa_sources, double factor = 2.0);

/// Default share of the QA mass in a QA blend.
inline constexpr double kRecipeQaWeight = 0.1;

BlendPhase add_qa(const BlendPhase& phase, const std::vector<DataSource>& qa_sources, double qa_weight,
                  const std::optional<QaSubBlend>& sub_blend = std::nullopt);

// ---- General-blend transforms -------------------------------------------------------------------

/// Multiplies weights by factors keyed by source name or domain name, then renormalizes.
struct ReweightDomains {
    std::map<std::string, double> factors;
};
/// Replaces every English web source's backing set by `subset`; weights unchanged.
struct HighQualityWeb {
    DocumentSubset subset;
};
/// Drops English web sources and renormalizes.
struct NoWeb {};
/// ReweightDomains on non-web sources followed by HighQualityWeb.
struct UpweightNonWebWithHqWeb {
    std::map<std::string, double> factors;
    DocumentSubset subset;
};

using BlendTransform = std::variant<ReweightDomains, HighQualityWeb, NoWeb, UpweightNonWebWithHqWeb>;

BlendPhase apply_transform(const BlendPhase& phase, const BlendTransform& transform, const SourceRegistry& registry);

// ---- Epoch accounting ---------------------------------------------------------------------------

struct EpochEntry {
    std::string source;
    double weight = 0.0;
    TokenCount phase_tokens_assigned = 0;
    double epochs = 0.0;
};

struct EpochReport {
    TokenCount phase_tokens = 0;
    std::vector<EpochEntry> entries;  // name order

    [[nodiscard]] const EpochEntry* find(std::string_view source) const;
};

/// Token count a phase draws from for `source`: the backing subset's size when one is set.
TokenCount effective_source_tokens(const BlendPhase& phase, const DataSource& source);

EpochReport epochs(const BlendPhase& phase, const SourceRegistry& registry, TokenCount phase_tokens);

enum class CapRedistribution { Proportional, WebOnly };

/// Default epoch cap applied to small sources on long horizons.
inline constexpr double kRecipeMaxEpochs = 4.0;

/**
 * Lowers `source`'s weight so it is seen at most `max_epochs` times over `phase_tokens`, handing the
 * removed mass to the other positively weighted sources (proportionally, or only to web sources).
 */
BlendPhase cap_epochs(const BlendPhase& phase, std::string_view source, double max_epochs, TokenCount phase_tokens,
                      const SourceRegistry& registry, CapRedistribution mode = CapRedistribution::Proportional);

/// Applies several caps; capped sources do not receive mass redistributed from later caps.
BlendPhase cap_epochs_all(const BlendPhase& phase, const std::map<std::string, double>& caps, TokenCount phase_tokens,
                          const SourceRegistry& registry, CapRedistribution mode = CapRedistribution::Proportional);

// ---- Two-phase plan -----------------------------------------------------------------------------

struct BlendPlan {
    BlendPhase gb;
    BlendPhase qb;
    LrSchedule schedule;
    double switch_fraction = 0.0;
    TokenCount switch_token = 0;
    TokenCount total_tokens = 0;

    [[nodiscard]] TokenCount gb_tokens() const noexcept { return switch_token; }
    [[nodiscard]] TokenCount qb_tokens() const noexcept { return total_tokens - switch_token; }
};

/// Resolves the switch token from the schedule. A plan whose QB phase would be empty is rejected
/// with degenerate-phase; an empty GB phase (fraction 1) is allowed.
BlendPlan build_two_phase_plan(const BlendPhase& gb, const BlendPhase& qb, const LrSchedule& schedule,
                               double switch_fraction, TokenCount total_tokens);

/**
 * Recipe constraints: the GB carries no QA data, the QB does, and no QA source in the QB exceeds
 * `max_qa_epochs`. Returns human-readable violations (empty when satisfied).
 */
std::vector<std::string> check_recipe_constraints(const BlendPlan& plan, const SourceRegistry& registry,
                                                  double max_qa_epochs = kRecipeMaxEpochs);

nlohmann::json to_json(const LrSchedule& schedule);
nlohmann::json to_json(const BlendPhase& phase);
nlohmann::json to_json(const BlendPlan& plan);
nlohmann::json to_json(const SourceRegistry& registry);

/// SHA-256 over the canonical JSON of the plan.
std::string plan_digest(const BlendPlan& plan);

}  // namespace cptkit
