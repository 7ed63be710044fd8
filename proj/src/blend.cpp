// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/blend.hpp"

#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "cptkit/digest.hpp"
#include "cptkit/error.hpp"

namespace cptkit {

namespace {

constexpr double kSumTolerance = 1e-9;

struct DomainName {
    Domain domain;
    std::string_view name;
};
constexpr DomainName kDomainNames[] = {
    {Domain::EnglishWeb, "english_web"},
    {Domain::EnglishHighQuality, "english_highquality_category"},
    {Domain::Multilingual, "multilingual"},
    {Domain::Code, "code"},
    {Domain::QaCategory, "qa_category"},
};

struct CategoryName {
    QaCategory category;
    std::string_view name;
};
constexpr CategoryName kCategoryNames[] = {
    {QaCategory::WorldKnowledge, "world_knowledge"},
    {QaCategory::Reasoning, "reasoning"},
    {QaCategory::Stem, "stem"},
    {QaCategory::Chat, "chat"},
    {QaCategory::Code, "code"},
};

bool is_web(const DataSource& s) { return s.domain == Domain::EnglishWeb; }

double sum_of(const std::map<std::string, double>& w) {
    double total = 0.0;
    for (const auto& [_, v] : w) {
        total += v;
    }
    return total;
}

// Rebuilds a phase from already-scaled weights while keeping label and backings.
BlendPhase rebuild(const BlendPhase& like, const RawWeights& raw) {
    BlendPhase out = normalize(raw, like.label());
    for (const auto& [name, subset] : like.backings()) {
        if (out.contains(name)) {
            out = out.with_backing(name, subset);
        }
    }
    return out;
}

void require_known(const BlendPhase& phase, const SourceRegistry& registry) {
    for (const auto& [name, _] : phase.weights()) {
        (void)registry.at(name);
    }
}

}  // namespace

std::string_view to_string(Domain d) noexcept {
    for (const auto& e : kDomainNames) {
        if (e.domain == d) {
            return e.name;
        }
    }
    return "unknown";
}

std::string_view to_string(QaCategory c) noexcept {
    for (const auto& e : kCategoryNames) {
        if (e.category == c) {
            return e.name;
        }
    }
    return "unknown";
}

std::optional<Domain> parse_domain(std::string_view text) noexcept {
    for (const auto& e : kDomainNames) {
        if (e.name == text) {
            return e.domain;
        }
    }
    return std::nullopt;
}

std::optional<QaCategory> parse_qa_category(std::string_view text) noexcept {
    for (const auto& e : kCategoryNames) {
        if (e.name == text) {
            return e.category;
        }
    }
    return std::nullopt;
}

std::string_view to_string(PhaseLabel l) noexcept {
    switch (l) {
        case PhaseLabel::GB: return "GB";
        case PhaseLabel::QB: return "QB";
        case PhaseLabel::Custom: return "custom";
    }
    return "custom";
}

// ---- SourceRegistry ---------------------------------------------------------------------------

SourceRegistry::SourceRegistry(const std::vector<DataSource>& sources) {
    for (const auto& s : sources) {
        add(s);
    }
}

void SourceRegistry::add(DataSource source) {
    if (source.name.empty()) {
        throw Error(ErrorCode::InvalidParameter, "source name must not be empty");
    }
    if (source.domain == Domain::QaCategory && !source.qa_category) {
        throw Error(ErrorCode::InvalidParameter, fmt::format("QA source '{}' needs a qa_category", source.name));
    }
    if (source.domain != Domain::QaCategory && source.qa_category) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("source '{}' has a qa_category but is not a QA source", source.name));
    }
    auto name = source.name;
    if (!mSources.emplace(name, std::move(source)).second) {
        throw Error(ErrorCode::InvalidParameter, fmt::format("duplicate source name '{}'", name));
    }
}

const DataSource* SourceRegistry::find(std::string_view name) const {
    auto it = mSources.find(name);
    return it == mSources.end() ? nullptr : &it->second;
}

const DataSource& SourceRegistry::at(std::string_view name) const {
    if (const auto* s = find(name)) {
        return *s;
    }
    throw Error(ErrorCode::UnknownSource, fmt::format("unknown source '{}'", name));
}

// ---- BlendPhase -------------------------------------------------------------------------------

double BlendPhase::weight(std::string_view source) const {
    auto it = mWeights.find(std::string(source));
    return it == mWeights.end() ? 0.0 : it->second;
}

const DocumentSubset* BlendPhase::backing(std::string_view source) const {
    auto it = mBackings.find(std::string(source));
    return it == mBackings.end() ? nullptr : &it->second;
}

BlendPhase BlendPhase::with_label(PhaseLabel label) const {
    BlendPhase out = *this;
    out.mLabel = label;
    return out;
}

BlendPhase BlendPhase::with_backing(const std::string& source, DocumentSubset subset) const {
    if (!contains(source)) {
        throw Error(ErrorCode::UnknownSource, fmt::format("phase has no source '{}'", source));
    }
    BlendPhase out = *this;
    out.mBackings[source] = std::move(subset);
    return out;
}

BlendPhase normalize(const RawWeights& raw_weights, PhaseLabel label) {
    double total = 0.0;
    for (const auto& [name, w] : raw_weights) {
        if (!std::isfinite(w) || w < 0.0) {
            throw Error(ErrorCode::InvalidParameter, fmt::format("weight for '{}' must be finite and >= 0 (got {})", name, w));
        }
        total += w;
    }
    if (!(total > 0.0)) {
        throw Error(ErrorCode::EmptyBlend, "blend has no positive weight");
    }
    BlendPhase out;
    out.mLabel = label;
    for (const auto& [name, w] : raw_weights) {
        out.mWeights.emplace(name, w / total);
    }
    return out;
}

bool needs_normalization(const RawWeights& raw_weights) {
    return std::abs(sum_of(raw_weights) - 1.0) > kSumTolerance;
}

void validate_phase(const BlendPhase& phase) {
    for (const auto& [name, w] : phase.weights()) {
        if (!(w >= 0.0)) {
            throw Error(ErrorCode::InvalidParameter, fmt::format("negative weight for '{}'", name));
        }
    }
    const double total = sum_of(phase.weights());
    if (std::abs(total - 1.0) > kSumTolerance) {
        throw Error(ErrorCode::InvalidParameter, fmt::format("phase weights sum to {}, not 1", total));
    }
}

// ---- QA injection -----------------------------------------------------------------------------

QaSubBlend proportional_sub_blend(const std::vector<DataSource>& qa_sources) {
    if (qa_sources.empty()) {
        throw Error(ErrorCode::InvalidParameter, "no QA sources supplied");
    }
    RawWeights raw;
    for (const auto& s : qa_sources) {
        if (s.token_count == 0) {
            throw Error(ErrorCode::ZeroSizeSource, fmt::format("QA source '{}' has no tokens", s.name));
        }
        raw[s.name] = static_cast<double>(s.token_count);
    }
    return normalize(raw).weights();
}

QaSubBlend upweighted_sub_blend(const std::vector<DataSource>& qa_sources, QaCategory boosted, QaCategory held,
                                double factor) {
    if (!(factor >= 1.0)) {
        throw Error(ErrorCode::InvalidParameter, fmt::format("upweight factor {} must be >= 1", factor));
    }
    if (boosted == held) {
        throw Error(ErrorCode::InvalidParameter, "boosted and held QA categories must differ");
    }
    const QaSubBlend base = proportional_sub_blend(qa_sources);
    double boosted_mass = 0.0;
    double held_mass = 0.0;
    for (const auto& s : qa_sources) {
        if (s.qa_category == boosted) {
            boosted_mass += base.at(s.name);
        } else if (s.qa_category == held) {
            held_mass += base.at(s.name);
        }
    }
    const double rest = 1.0 - boosted_mass - held_mass;
    const double remaining = 1.0 - factor * boosted_mass - held_mass;
    if (remaining < 0.0 || (rest <= 0.0 && remaining > 1e-12)) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("cannot boost {} by {}: not enough mass in the other categories", to_string(boosted), factor));
    }
    QaSubBlend out;
    for (const auto& s : qa_sources) {
        const double p = base.at(s.name);
        if (s.qa_category == boosted) {
            out[s.name] = factor * p;
        } else if (s.qa_category == held) {
            out[s.name] = p;
        } else {
            out[s.name] = rest > 0.0 ? p * remaining / rest : 0.0;
        }
    }
    return out;
}

QaSubBlend named_sub_blend(std::string_view name, const std::vector<DataSource>& qa_sources, double factor) {
    if (name == "proportional") {
        return proportional_sub_blend(qa_sources);
    }
    if (name == "stem_world_knowledge") {
        return upweighted_sub_blend(qa_sources, QaCategory::Stem, QaCategory::WorldKnowledge, factor);
    }
    if (name == "stem_chat") {
        return upweighted_sub_blend(qa_sources, QaCategory::Stem, QaCategory::Chat, factor);
    }
    throw Error(ErrorCode::InvalidParameter, fmt::format("unknown QA sub-blend '{}'", name));
}

BlendPhase add_qa(const BlendPhase& phase, const std::vector<DataSource>& qa_sources, double qa_weight,
                  const std::optional<QaSubBlend>& sub_blend) {
    if (!(qa_weight > 0.0 && qa_weight < 1.0)) {
        throw Error(ErrorCode::InvalidParameter, fmt::format("QA weight {} must lie in (0, 1)", qa_weight));
    }
    if (qa_sources.empty()) {
        throw Error(ErrorCode::InvalidParameter, "no QA sources supplied");
    }
    for (const auto& s : qa_sources) {
        if (phase.contains(s.name)) {
            throw Error(ErrorCode::Overlap, fmt::format("QA source '{}' is already in the phase", s.name));
        }
    }
    const QaSubBlend shares = sub_blend ? *sub_blend : proportional_sub_blend(qa_sources);
    for (const auto& s : qa_sources) {
        if (!shares.contains(s.name)) {
            throw Error(ErrorCode::UnknownSource, fmt::format("QA sub-blend has no share for '{}'", s.name));
        }
    }
    if (shares.size() != qa_sources.size()) {
        throw Error(ErrorCode::UnknownSource, "QA sub-blend names a source that was not supplied");
    }
    const double share_total = sum_of(shares);
    RawWeights raw;
    for (const auto& [name, w] : phase.weights()) {
        raw[name] = w * (1.0 - qa_weight);
    }
    for (const auto& [name, share] : shares) {
        raw[name] = qa_weight * share / share_total;
    }
    return rebuild(phase, raw);
}

// ---- Transforms -------------------------------------------------------------------------------

namespace {

RawWeights reweighted(const BlendPhase& phase, const std::map<std::string, double>& factors,
                      const SourceRegistry& registry, bool non_web_only) {
    RawWeights raw(phase.weights().begin(), phase.weights().end());
    for (const auto& [key, factor] : factors) {
        if (!std::isfinite(factor) || factor < 0.0) {
            throw Error(ErrorCode::InvalidParameter, fmt::format("reweight factor for '{}' must be >= 0", key));
        }
        std::vector<std::string> targets;
        if (raw.contains(key)) {
            targets.push_back(key);
        } else if (auto domain = parse_domain(key)) {
            for (const auto& [name, _] : raw) {
                if (registry.at(name).domain == *domain) {
                    targets.push_back(name);
                }
            }
        } else {
            throw Error(ErrorCode::UnknownSource, fmt::format("reweight key '{}' names no source or domain in the phase", key));
        }
        for (const auto& name : targets) {
            if (non_web_only && is_web(registry.at(name))) {
                throw Error(ErrorCode::InvalidParameter, fmt::format("'{}' is a web source; only non-web sources are upweighted", name));
            }
            raw[name] *= factor;
        }
    }
    return raw;
}

BlendPhase with_hq_web(const BlendPhase& phase, const DocumentSubset& subset, const SourceRegistry& registry) {
    if (subset.document_ids.empty()) {
        throw Error(ErrorCode::ManifestEmpty, "high-quality web manifest selects no documents");
    }
    BlendPhase out = phase;
    bool any = false;
    for (const auto& [name, _] : phase.weights()) {
        if (is_web(registry.at(name))) {
            out = out.with_backing(name, subset);
            any = true;
        }
    }
    if (!any) {
        throw Error(ErrorCode::UnknownSource, "phase has no English web source to back with the quality manifest");
    }
    return out;
}

}  // namespace

BlendPhase apply_transform(const BlendPhase& phase, const BlendTransform& transform, const SourceRegistry& registry) {
    require_known(phase, registry);
    return std::visit(
        [&](const auto& t) -> BlendPhase {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, ReweightDomains>) {
                return rebuild(phase, reweighted(phase, t.factors, registry, false));
            } else if constexpr (std::is_same_v<T, HighQualityWeb>) {
                return with_hq_web(phase, t.subset, registry);
            } else if constexpr (std::is_same_v<T, NoWeb>) {
                RawWeights raw;
                for (const auto& [name, w] : phase.weights()) {
                    if (!is_web(registry.at(name))) {
                        raw[name] = w;
                    }
                }
                return rebuild(phase, raw);
            } else {
                return with_hq_web(rebuild(phase, reweighted(phase, t.factors, registry, true)), t.subset, registry);
            }
        },
        transform);
}

// ---- Epochs -----------------------------------------------------------------------------------

const EpochEntry* EpochReport::find(std::string_view source) const {
    for (const auto& e : entries) {
        if (e.source == source) {
            return &e;
        }
    }
    return nullptr;
}

TokenCount effective_source_tokens(const BlendPhase& phase, const DataSource& source) {
    if (const auto* b = phase.backing(source.name); b != nullptr && b->token_count) {
        return *b->token_count;
    }
    return source.token_count;
}

EpochReport epochs(const BlendPhase& phase, const SourceRegistry& registry, TokenCount phase_tokens) {
    EpochReport report;
    report.phase_tokens = phase_tokens;
    for (const auto& [name, w] : phase.weights()) {
        const auto& source = registry.at(name);
        const TokenCount size = effective_source_tokens(phase, source);
        EpochEntry e;
        e.source = name;
        e.weight = w;
        e.phase_tokens_assigned = static_cast<TokenCount>(std::llround(w * static_cast<double>(phase_tokens)));
        if (w > 0.0) {
            if (size == 0) {
                throw Error(ErrorCode::ZeroSizeSource, fmt::format("source '{}' is weighted but has no tokens", name));
            }
            e.epochs = w * static_cast<double>(phase_tokens) / static_cast<double>(size);
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

namespace {

// Caps one source; receivers exclude `frozen`. Returns nullopt when already under the cap.
std::optional<RawWeights> capped_weights(const BlendPhase& phase, std::string_view source, double max_epochs,
                                         TokenCount phase_tokens, const SourceRegistry& registry,
                                         CapRedistribution mode, const std::set<std::string>& frozen) {
    if (!(max_epochs > 0.0)) {
        throw Error(ErrorCode::InvalidParameter, fmt::format("max_epochs {} must be positive", max_epochs));
    }
    if (phase_tokens == 0) {
        return std::nullopt;
    }
    const auto& src = registry.at(source);
    const double w = phase.weight(source);
    if (!phase.contains(source) || w == 0.0) {
        return std::nullopt;
    }
    const TokenCount size = effective_source_tokens(phase, src);
    if (size == 0) {
        throw Error(ErrorCode::ZeroSizeSource, fmt::format("source '{}' is weighted but has no tokens", source));
    }
    const double current = w * static_cast<double>(phase_tokens) / static_cast<double>(size);
    if (current <= max_epochs * (1.0 + 1e-12)) {
        return std::nullopt;
    }
    const double capped = max_epochs * static_cast<double>(size) / static_cast<double>(phase_tokens);
    const double deficit = w - capped;

    double receiver_mass = 0.0;
    std::vector<std::string> receivers;
    for (const auto& [name, v] : phase.weights()) {
        if (name == source || v <= 0.0 || frozen.contains(name)) {
            continue;
        }
        if (mode == CapRedistribution::WebOnly && !is_web(registry.at(name))) {
            continue;
        }
        receivers.push_back(name);
        receiver_mass += v;
    }
    if (receivers.empty()) {
        throw Error(ErrorCode::NoOtherSources,
                    fmt::format("cannot cap '{}': no other source can absorb its weight", source));
    }
    RawWeights raw(phase.weights().begin(), phase.weights().end());
    raw[std::string(source)] = capped;
    for (const auto& name : receivers) {
        raw[name] += deficit * raw[name] / receiver_mass;
    }
    return raw;
}

}  // namespace

BlendPhase cap_epochs(const BlendPhase& phase, std::string_view source, double max_epochs, TokenCount phase_tokens,
                      const SourceRegistry& registry, CapRedistribution mode) {
    auto raw = capped_weights(phase, source, max_epochs, phase_tokens, registry, mode, {});
    return raw ? rebuild(phase, *raw) : phase;
}

BlendPhase cap_epochs_all(const BlendPhase& phase, const std::map<std::string, double>& caps, TokenCount phase_tokens,
                          const SourceRegistry& registry, CapRedistribution mode) {
    BlendPhase out = phase;
    std::set<std::string> frozen;
    // a source pushed over its cap by a later redistribution is capped on the next pass
    for (std::size_t pass = 0; pass <= caps.size(); ++pass) {
        bool changed = false;
        for (const auto& [name, max_epochs] : caps) {
            if (!out.contains(name)) {
                continue;
            }
            if (auto raw = capped_weights(out, name, max_epochs, phase_tokens, registry, mode, frozen)) {
                out = rebuild(out, *raw);
                changed = true;
            }
            if (out.weight(name) > 0.0) {
                const auto& src = registry.at(name);
                const double e = out.weight(name) * static_cast<double>(phase_tokens) /
                                 static_cast<double>(effective_source_tokens(out, src));
                if (e >= max_epochs * (1.0 - 1e-12)) {
                    frozen.insert(name);
                }
            }
        }
        if (!changed) {
            break;
        }
    }
    return out;
}

// ---- Plan -------------------------------------------------------------------------------------

BlendPlan build_two_phase_plan(const BlendPhase& gb, const BlendPhase& qb, const LrSchedule& schedule,
                               double switch_fraction, TokenCount total_tokens) {
    validate_phase(gb);
    validate_phase(qb);
    if (total_tokens != schedule.total_tokens()) {
        throw Error(ErrorCode::InvalidParameter,
                    fmt::format("plan horizon {} differs from schedule horizon {}", total_tokens, schedule.total_tokens()));
    }
    const auto solution = solve_switch_token(schedule, switch_fraction);
    if (solution.token_index >= total_tokens) {
        throw Error(ErrorCode::DegeneratePhase,
                    fmt::format("switch fraction {} resolves to token {}, leaving the QB phase empty", switch_fraction,
                                solution.token_index));
    }
    return BlendPlan{gb.with_label(PhaseLabel::GB), qb.with_label(PhaseLabel::QB), schedule, switch_fraction,
                     solution.token_index, total_tokens};
}

std::vector<std::string> check_recipe_constraints(const BlendPlan& plan, const SourceRegistry& registry,
                                                  double max_qa_epochs) {
    std::vector<std::string> violations;
    double gb_qa = 0.0;
    for (const auto& [name, w] : plan.gb.weights()) {
        if (registry.at(name).domain == Domain::QaCategory) {
            gb_qa += w;
        }
    }
    if (gb_qa > 0.0) {
        violations.push_back(fmt::format("GB carries QA weight {}", gb_qa));
    }
    double qb_qa = 0.0;
    for (const auto& [name, w] : plan.qb.weights()) {
        if (registry.at(name).domain == Domain::QaCategory) {
            qb_qa += w;
        }
    }
    if (!(qb_qa > 0.0)) {
        violations.emplace_back("QB carries no QA data");
    }
    const auto report = epochs(plan.qb, registry, plan.qb_tokens());
    for (const auto& e : report.entries) {
        if (registry.at(e.source).domain == Domain::QaCategory && e.epochs > max_qa_epochs * (1.0 + 1e-12)) {
            violations.push_back(fmt::format("QA source '{}' is seen {:.3f} epochs in QB (cap {})", e.source, e.epochs,
                                             max_qa_epochs));
        }
    }
    return violations;
}

// ---- Serialization ----------------------------------------------------------------------------

nlohmann::json to_json(const LrSchedule& s) {
    nlohmann::json j;
    j["kind"] = s.kind() == ScheduleKind::Cosine ? "cosine" : "wsd";
    j["eta_start"] = s.eta_start();
    j["eta_end"] = s.eta_end();
    j["total_tokens"] = s.total_tokens();
    if (s.warmup()) {
        j["warmup"] = {{"start_lr", s.warmup()->start_lr},
                       {"target_lr", s.warmup()->target_lr},
                       {"tokens", s.warmup()->tokens}};
    }
    if (s.kind() == ScheduleKind::Wsd) {
        j["wsd_stable_fraction"] = s.wsd_stable_fraction();
        j["wsd_decay_shape"] = s.wsd_decay_shape() == DecayShape::Linear ? "linear" : "cosine";
    }
    return j;
}

nlohmann::json to_json(const BlendPhase& p) {
    nlohmann::json j;
    j["label"] = to_string(p.label());
    j["weights"] = p.weights();
    if (!p.backings().empty()) {
        nlohmann::json b = nlohmann::json::object();
        for (const auto& [name, subset] : p.backings()) {
            nlohmann::json e;
            e["origin"] = subset.origin;
            e["documents"] = subset.document_ids.size();
            Digest d;
            for (const auto& id : subset.document_ids) {
                d.update(id).update("\n");
            }
            e["documents_digest"] = d.finish();
            if (subset.token_count) {
                e["token_count"] = *subset.token_count;
            }
            b[name] = e;
        }
        j["backings"] = b;
    }
    return j;
}

nlohmann::json to_json(const BlendPlan& plan) {
    return {{"gb", to_json(plan.gb)},
            {"qb", to_json(plan.qb)},
            {"schedule", to_json(plan.schedule)},
            {"switch_fraction", plan.switch_fraction},
            {"switch_token", plan.switch_token},
            {"total_tokens", plan.total_tokens}};
}

nlohmann::json to_json(const SourceRegistry& registry) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [name, s] : registry.sources()) {
        nlohmann::json e{{"name", name}, {"domain", to_string(s.domain)}, {"token_count", s.token_count}};
        if (s.qa_category) {
            e["qa_category"] = to_string(*s.qa_category);
        }
        arr.push_back(std::move(e));
    }
    return arr;
}

std::string plan_digest(const BlendPlan& plan) {
    return sha256_hex(to_json(plan).dump());
}

}  // namespace cptkit
