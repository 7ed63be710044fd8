// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <fmt/core.h>

#include "cptkit/digest.hpp"
#include "cptkit/error.hpp"

namespace cptkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPretrainEtaMin = 4.5e-5;
constexpr TokenCount kRecipeTotalTokens = 300'000'000'000ULL;

[[noreturn]] void invalid(const std::string& what) {
    throw Error(ErrorCode::InvalidParameter, "config: " + what);
}

TokenCount as_count(const json& j, std::string_view key) {
    if (j.is_number_unsigned()) {
        return j.get<TokenCount>();
    }
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) {
        return static_cast<TokenCount>(j.get<std::int64_t>());
    }
    if (j.is_number_float()) {
        const double v = j.get<double>();
        if (v >= 0.0 && v < 1.8e19 && std::floor(v) == v) {
            return static_cast<TokenCount>(v);
        }
    }
    invalid(fmt::format("'{}' must be a non-negative integer token count", key));
}

double as_number(const json& j, std::string_view key) {
    if (!j.is_number()) {
        invalid(fmt::format("'{}' must be a number", key));
    }
    return j.get<double>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) {
        return {};
    }
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::map<std::string, double> number_map(const json& j, std::string_view key) {
    if (!j.is_object()) {
        invalid(fmt::format("'{}' must be an object of numbers", key));
    }
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.items()) {
        out[k] = as_number(v, fmt::format("{}.{}", key, k));
    }
    return out;
}

PhaseSpec parse_phase(const json& j, std::string_view name) {
    PhaseSpec spec;
    if (j.is_null()) {
        return spec;
    }
    if (!j.is_object()) {
        invalid(fmt::format("blends.{} must be an object", name));
    }
    spec.present = true;
    spec.weights = number_map(j.value("weights", json::object()), fmt::format("blends.{}.weights", name));
    spec.transforms = j.value("transforms", json::array());
    if (!spec.transforms.is_array()) {
        invalid(fmt::format("blends.{}.transforms must be a list", name));
    }
    return spec;
}

std::optional<WarmupVariant> parse_variant(const std::string& v) {
    if (v == "up_from_min") {
        return WarmupVariant::UpFromMin;
    }
    if (v == "half_to_min") {
        return WarmupVariant::HalfToMin;
    }
    if (v == "zero_to_extended") {
        return WarmupVariant::ZeroToExtended;
    }
    return std::nullopt;
}

std::vector<DataSource> qa_sources_of(const SourceRegistry& registry, const json& names) {
    std::vector<DataSource> out;
    if (names.is_array()) {
        for (const auto& n : names) {
            const auto& s = registry.at(n.get<std::string>());
            if (s.domain != Domain::QaCategory) {
                invalid(fmt::format("add_qa source '{}' is not a QA source", s.name));
            }
            out.push_back(s);
        }
    } else {
        for (const auto& [_, s] : registry.sources()) {
            if (s.domain == Domain::QaCategory) {
                out.push_back(s);
            }
        }
    }
    if (out.empty()) {
        invalid("add_qa needs at least one qa_category source");
    }
    return out;
}

DocumentSubset load_subset(const RunConfig& config, const json& t) {
    const auto path = resolve(config.base_dir, t.at("manifest").get<std::string>());
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, fmt::format("cannot open quality manifest '{}'", path.string()));
    }
    auto manifest = read_quality_manifest(in);
    auto subset = to_document_subset(manifest);
    if (t.contains("token_count")) {
        subset.token_count = as_count(t.at("token_count"), "token_count");
    }
    return subset;
}

BlendPhase apply_transforms(BlendPhase phase, const json& transforms, const RunConfig& config,
                            const SourceRegistry& registry) {
    for (const auto& t : transforms) {
        const auto type = t.value("type", std::string{});
        if (type == "reweight_domains") {
            phase = apply_transform(phase, ReweightDomains{number_map(t.at("factors"), "factors")}, registry);
        } else if (type == "no_web") {
            phase = apply_transform(phase, NoWeb{}, registry);
        } else if (type == "high_quality_web") {
            phase = apply_transform(phase, HighQualityWeb{load_subset(config, t)}, registry);
        } else if (type == "upweight_non_web_with_hq_web") {
            phase = apply_transform(
                phase, UpweightNonWebWithHqWeb{number_map(t.at("factors"), "factors"), load_subset(config, t)}, registry);
        } else if (type == "add_qa") {
            const auto qa = qa_sources_of(registry, t.value("sources", json()));
            const auto sub = named_sub_blend(t.value("sub_blend", std::string("proportional")), qa, t.value("factor", 2.0));
            phase = add_qa(phase, qa, t.value("qa_weight", config.qa_weight), sub);
        } else {
            invalid(fmt::format("unknown transform type '{}'", type));
        }
    }
    return phase;
}

std::map<std::string, double> expand_caps(const RunConfig& config, const SourceRegistry& registry, const BlendPhase& phase) {
    std::map<std::string, double> caps;
    for (const auto& [key, max_epochs] : config.epoch_caps) {
        if (registry.find(key) != nullptr) {
            caps[key] = max_epochs;
        } else if (auto d = parse_domain(key)) {
            for (const auto& [name, _] : phase.weights()) {
                if (registry.at(name).domain == *d) {
                    caps[name] = max_epochs;
                }
            }
        } else {
            throw Error(ErrorCode::UnknownSource, fmt::format("epoch cap key '{}' names no source or domain", key));
        }
    }
    return caps;
}

}  // namespace

json recipe_preset() {
    return json{
        {"schedule", {{"kind", "cosine"}, {"pretrain", {{"eta_min", kPretrainEtaMin}}}, {"eta_end_ratio", 0.01}}},
        {"switch_fraction", 0.2},
        {"total_tokens", kRecipeTotalTokens},
        {"qa_weight", kRecipeQaWeight},
        {"epoch_caps", {{"qa_category", kRecipeMaxEpochs}}},
        {"mining", {{"k", kDefaultMiningK}, {"metric", "cosine"}}},
        {"quality", {{"order", 5}, {"quartile", kDefaultQuartile}}},
    };
}

RunConfig parse_config(const json& document, const fs::path& base_dir, const ConfigOverrides& overrides) {
    if (!document.is_object()) {
        invalid("top level must be an object");
    }
    json merged = document;
    const auto preset = overrides.preset ? *overrides.preset : document.value("preset", std::string{});
    if (!preset.empty()) {
        if (preset != "recipe") {
            invalid(fmt::format("unknown preset '{}'", preset));
        }
        merged = recipe_preset();
        merged.merge_patch(document);
        merged["preset"] = preset;
    }
    if (overrides.seed) {
        merged["seed"] = *overrides.seed;
    }
    if (overrides.switch_fraction) {
        merged["switch_fraction"] = *overrides.switch_fraction;
    }
    if (overrides.total_tokens) {
        merged["total_tokens"] = *overrides.total_tokens;
    }
    if (overrides.quartile) {
        merged["quality"]["quartile"] = *overrides.quartile;
    }
    if (overrides.k) {
        merged["mining"]["k"] = *overrides.k;
    }

    RunConfig c;
    c.base_dir = fs::absolute(base_dir);
    c.recipe = preset == "recipe";
    c.merged = merged;
    c.digest = sha256_hex(merged.dump());
    try {
        const auto inventory_dir = resolve(c.base_dir, merged.value("inventory_dir", std::string{}));
        if (!merged.contains("sources") || !merged.at("sources").is_array() || merged.at("sources").empty()) {
            invalid("'sources' must be a non-empty list");
        }
        for (const auto& s : merged.at("sources")) {
            SourceSpec spec;
            spec.source.name = s.at("name").get<std::string>();
            const auto domain = s.at("domain").get<std::string>();
            auto d = parse_domain(domain);
            if (!d) {
                invalid(fmt::format("source '{}' has unknown domain '{}'", spec.source.name, domain));
            }
            spec.source.domain = *d;
            spec.source.token_count = as_count(s.at("token_count"), "token_count");
            if (s.contains("qa_category")) {
                auto cat = parse_qa_category(s.at("qa_category").get<std::string>());
                if (!cat) {
                    invalid(fmt::format("source '{}' has unknown qa_category", spec.source.name));
                }
                spec.source.qa_category = cat;
            }
            if (s.contains("inventory")) {
                spec.inventory = resolve(inventory_dir.empty() ? c.base_dir : inventory_dir, s.at("inventory").get<std::string>());
            } else if (!inventory_dir.empty()) {
                spec.inventory = inventory_dir / (spec.source.name + ".jsonl");
            }
            c.sources.push_back(std::move(spec));
        }
        const auto blends = merged.value("blends", json::object());
        c.gb = parse_phase(blends.value("gb", json()), "gb");
        c.qb = parse_phase(blends.value("qb", json()), "qb");
        if (!merged.contains("schedule")) {
            invalid("'schedule' is required");
        }
        c.schedule = merged.at("schedule");
        if (!merged.contains("switch_fraction")) {
            invalid("'switch_fraction' is required");
        }
        c.switch_fraction = as_number(merged.at("switch_fraction"), "switch_fraction");
        if (!merged.contains("total_tokens")) {
            invalid("'total_tokens' is required");
        }
        c.total_tokens = as_count(merged.at("total_tokens"), "total_tokens");
        c.seed = merged.contains("seed") ? merged.at("seed").get<std::uint64_t>() : 0;
        c.qa_weight = merged.value("qa_weight", kRecipeQaWeight);
        if (merged.contains("epoch_caps")) {
            c.epoch_caps = number_map(merged.at("epoch_caps"), "epoch_caps");
        }
        const auto redistribution = merged.value("cap_redistribution", std::string("proportional"));
        if (redistribution == "proportional") {
            c.cap_redistribution = CapRedistribution::Proportional;
        } else if (redistribution == "web_only") {
            c.cap_redistribution = CapRedistribution::WebOnly;
        } else {
            invalid(fmt::format("unknown cap_redistribution '{}'", redistribution));
        }
        c.lr_curve_stride = merged.contains("lr_curve_stride") ? as_count(merged.at("lr_curve_stride"), "lr_curve_stride")
                                                               : std::max<TokenCount>(1, c.total_tokens / 1000);
        if (c.lr_curve_stride == 0) {
            invalid("'lr_curve_stride' must be positive");
        }

        const auto sampler = merged.value("sampler", json::object());
        c.sampler.granularity = sampler.contains("granularity") ? as_count(sampler.at("granularity"), "granularity") : 1;
        const auto order = sampler.value("order", std::string("shuffled"));
        if (order != "shuffled" && order != "sequential") {
            invalid(fmt::format("unknown sampler order '{}'", order));
        }
        c.sampler.order = order == "shuffled" ? DocumentOrder::Shuffled : DocumentOrder::Sequential;

        const auto quality = merged.value("quality", json::object());
        c.quality.ngram.order = quality.value("order", 5);
        c.quality.ngram.sentence_end = quality.value("sentence_end", true);
        c.quality.quartile = quality.value("quartile", kDefaultQuartile);
        c.quality.reference_corpus = resolve(c.base_dir, quality.value("reference_corpus", std::string{}));
        c.quality.model_digest = quality.value("model_digest", std::string{});
        c.quality.per_line = quality.value("per_line", false);
        c.quality.per_group = quality.value("per_group", false);
        c.quality.lowercase = quality.value("lowercase", false);
        c.quality.threads = quality.value("threads", 1U);
        if (!(c.quality.quartile > 0.0 && c.quality.quartile <= 1.0)) {
            invalid(fmt::format("quality.quartile {} must lie in (0, 1]", c.quality.quartile));
        }

        const auto mining = merged.value("mining", json::object());
        c.mining.k = mining.value("k", kDefaultMiningK);
        const auto metric = mining.value("metric", std::string("cosine"));
        if (metric != "cosine" && metric != "inner_product") {
            invalid(fmt::format("unknown mining metric '{}'", metric));
        }
        c.mining.metric = metric == "cosine" ? Metric::Cosine : Metric::InnerProduct;
        c.mining.threads = mining.value("threads", 1U);
        if (c.mining.k == 0) {
            invalid("mining.k must be positive");
        }
    } catch (const json::exception& e) {
        invalid(e.what());
    }
    return c;
}

RunConfig load_config(const fs::path& path, const ConfigOverrides& overrides) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, fmt::format("cannot open config '{}'", path.string()));
    }
    json document;
    try {
        document = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidParameter, fmt::format("config '{}' is not valid JSON: {}", path.string(), e.what()));
    }
    return parse_config(document, fs::absolute(path).parent_path(), overrides);
}

LrSchedule build_schedule(const RunConfig& config) {
    const auto& s = config.schedule;
    try {
        const auto kind = s.value("kind", std::string("cosine"));
        const json pretrain = s.value("pretrain", json::object());
        double eta_start = 0.0;
        if (s.contains("eta_start")) {
            eta_start = as_number(s.at("eta_start"), "schedule.eta_start");
        } else if (pretrain.contains("eta_min")) {
            eta_start = as_number(pretrain.at("eta_min"), "schedule.pretrain.eta_min");
        } else {
            invalid("schedule.eta_start (or schedule.pretrain.eta_min) is required");
        }
        double eta_end = 0.0;
        if (s.contains("eta_end")) {
            eta_end = as_number(s.at("eta_end"), "schedule.eta_end");
        } else if (s.contains("eta_end_ratio")) {
            eta_end = eta_start * as_number(s.at("eta_end_ratio"), "schedule.eta_end_ratio");
        } else {
            invalid("schedule.eta_end (or schedule.eta_end_ratio) is required");
        }

        std::optional<WarmupSpec> warmup;
        if (s.contains("warmup") && !s.at("warmup").is_null()) {
            const auto& w = s.at("warmup");
            const TokenCount tokens = w.contains("tokens") ? as_count(w.at("tokens"), "schedule.warmup.tokens") : kDefaultWarmupTokens;
            if (w.contains("variant")) {
                auto variant = parse_variant(w.at("variant").get<std::string>());
                if (!variant) {
                    invalid("unknown schedule.warmup.variant");
                }
                if (kind != "cosine") {
                    invalid("warmup variants apply to cosine schedules only");
                }
                const double eta_max = pretrain.value("eta_max", 4.5e-4);
                const double eta_min = pretrain.value("eta_min", kPretrainEtaMin);
                const TokenCount pretrain_tokens =
                    pretrain.contains("total_tokens") ? as_count(pretrain.at("total_tokens"), "schedule.pretrain.total_tokens")
                                                      : 8'000'000'000'000ULL;
                std::optional<WarmupSpec> pretrain_warmup;
                if (pretrain.contains("warmup_tokens")) {
                    pretrain_warmup = WarmupSpec{0.0, eta_max, as_count(pretrain.at("warmup_tokens"), "warmup_tokens")};
                }
                const auto base = build_cosine(eta_max, eta_min, pretrain_tokens, pretrain_warmup);
                return build_warmup_variant(*variant, base, config.total_tokens, tokens);
            }
            warmup = WarmupSpec{as_number(w.at("start_lr"), "schedule.warmup.start_lr"),
                                w.contains("target_lr") ? as_number(w.at("target_lr"), "schedule.warmup.target_lr") : eta_start,
                                tokens};
        }
        if (kind == "cosine") {
            return build_cosine(eta_start, eta_end, config.total_tokens, warmup);
        }
        if (kind == "wsd") {
            const auto shape = s.value("wsd_decay_shape", std::string("linear"));
            if (shape != "linear" && shape != "cosine") {
                invalid("schedule.wsd_decay_shape must be linear or cosine");
            }
            return build_wsd(eta_start, eta_end, config.total_tokens, s.value("wsd_stable_fraction", kDefaultWsdStableFraction),
                             shape == "linear" ? DecayShape::Linear : DecayShape::Cosine, warmup);
        }
        invalid(fmt::format("unknown schedule kind '{}'", kind));
    } catch (const json::exception& e) {
        invalid(e.what());
    }
}

SourceRegistry build_registry(const RunConfig& config) {
    SourceRegistry r;
    for (const auto& s : config.sources) {
        r.add(s.source);
    }
    return r;
}

DocumentRegistry load_inventories(const RunConfig& config, const std::vector<std::string>& sources) {
    const std::set<std::string> wanted(sources.begin(), sources.end());
    DocumentRegistry docs;
    for (const auto& s : config.sources) {
        if (!wanted.empty() && !wanted.contains(s.source.name)) {
            continue;
        }
        if (s.inventory.empty()) {
            if (wanted.empty()) {
                continue;
            }
            throw Error(ErrorCode::MissingInventory, fmt::format("source '{}' declares no inventory", s.source.name));
        }
        try {
            docs.set(s.source.name, read_inventory_file(s.inventory));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::MissingInventory) {
                throw Error(ErrorCode::MissingInventory,
                            fmt::format("missing inventory for source '{}': {}", s.source.name, s.inventory.string()));
            }
            throw;
        }
    }
    return docs;
}

ResolvedPlan resolve_plan(const RunConfig& config) {
    ResolvedPlan out{build_registry(config), {}, {}, {}};
    const auto& registry = out.registry;
    const auto schedule = build_schedule(config);
    if (schedule.total_tokens() != config.total_tokens) {
        invalid("schedule horizon differs from total_tokens");
    }

    for (const auto* spec : {&config.gb, &config.qb}) {
        for (const auto& [name, _] : spec->weights) {
            (void)registry.at(name);
        }
    }

    BlendPhase gb;
    if (config.gb.present) {
        if (needs_normalization(config.gb.weights)) {
            out.notes.push_back("GB weights normalized to sum to 1");
        }
        gb = normalize(config.gb.weights, PhaseLabel::GB);
    } else {
        RawWeights raw;
        for (const auto& [name, s] : registry.sources()) {
            if (s.domain != Domain::QaCategory) {
                raw[name] = static_cast<double>(s.token_count);
            }
        }
        gb = normalize(raw, PhaseLabel::GB);
        out.notes.push_back("GB defaults to pretraining proportions of the non-QA sources");
    }
    gb = apply_transforms(gb, config.gb.transforms, config, registry);

    BlendPhase qb;
    if (config.qb.present) {
        if (needs_normalization(config.qb.weights)) {
            out.notes.push_back("QB weights normalized to sum to 1");
        }
        qb = apply_transforms(normalize(config.qb.weights, PhaseLabel::QB), config.qb.transforms, config, registry);
    } else {
        qb = add_qa(gb, qa_sources_of(registry, json()), config.qa_weight).with_label(PhaseLabel::QB);
        out.notes.push_back(fmt::format("QB defaults to the GB plus QA data at weight {}", config.qa_weight));
    }

    const auto solution = solve_switch_token(schedule, config.switch_fraction);
    out.switch_solution = solution;
    const TokenCount gb_tokens = solution.token_index;
    const TokenCount qb_tokens = config.total_tokens > gb_tokens ? config.total_tokens - gb_tokens : 0;
    if (!config.epoch_caps.empty()) {
        const auto capped_gb = cap_epochs_all(gb, expand_caps(config, registry, gb), gb_tokens, registry, config.cap_redistribution);
        const auto capped_qb = cap_epochs_all(qb, expand_caps(config, registry, qb), qb_tokens, registry, config.cap_redistribution);
        if (!(capped_gb == gb)) {
            out.notes.push_back("GB epoch caps applied");
        }
        if (!(capped_qb == qb)) {
            out.notes.push_back("QB epoch caps applied");
        }
        gb = capped_gb;
        qb = capped_qb;
    }

    out.plan = build_two_phase_plan(gb, qb, schedule, config.switch_fraction, config.total_tokens);
    if (config.recipe) {
        const double cap = config.epoch_caps.contains("qa_category") ? config.epoch_caps.at("qa_category") : kRecipeMaxEpochs;
        const auto violations = check_recipe_constraints(out.plan, registry, cap);
        if (!violations.empty()) {
            invalid("recipe constraint violated: " + violations.front());
        }
    }
    return out;
}

}  // namespace cptkit
