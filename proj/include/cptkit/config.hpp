// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cptkit/blend.hpp"
#include "cptkit/inventory.hpp"
#include "cptkit/mining.hpp"
#include "cptkit/quality.hpp"
#include "cptkit/sampler.hpp"
#include "cptkit/schedule.hpp"

namespace cptkit {

struct SourceSpec {
    DataSource source;
    std::filesystem::path inventory;  // empty when the source has no inventory
};

struct PhaseSpec {
    bool present = false;
    RawWeights weights;
    nlohmann::json transforms = nlohmann::json::array();
};

struct QualitySettings {
    NgramOptions ngram;
    double quartile = kDefaultQuartile;
    std::filesystem::path reference_corpus;
    std::string model_digest;  // when set, loaded models must match
    bool per_line = false;
    bool per_group = false;
    bool lowercase = false;
    unsigned threads = 1;
};

struct MiningSettings {
    std::size_t k = kDefaultMiningK;
    Metric metric = Metric::Cosine;
    unsigned threads = 1;
};

/// Fully merged and parsed run configuration. Paths are absolute (resolved against the config file).
struct RunConfig {
    std::filesystem::path base_dir;
    bool recipe = false;
    std::vector<SourceSpec> sources;
    PhaseSpec gb;
    PhaseSpec qb;
    nlohmann::json schedule;
    double switch_fraction = 0.0;
    TokenCount total_tokens = 0;
    std::uint64_t seed = 0;
    double qa_weight = kRecipeQaWeight;
    std::map<std::string, double> epoch_caps;
    CapRedistribution cap_redistribution = CapRedistribution::Proportional;
    TokenCount lr_curve_stride = 0;
    SamplerOptions sampler;
    QualitySettings quality;
    MiningSettings mining;
    /// SHA-256 of the merged configuration JSON.
    std::string digest;
    nlohmann::json merged;
};

/// Command-line overrides layered over the config file.
struct ConfigOverrides {
    std::optional<std::string> preset;
    std::optional<std::uint64_t> seed;
    std::optional<double> switch_fraction;
    std::optional<TokenCount> total_tokens;
    std::optional<double> quartile;
    std::optional<std::size_t> k;
};

/**
 * The `recipe` preset: cosine decay from the pretraining minimum LR (4.5e-5) to 1/100 of it,
 * switch at 1/5 of the peak LR, 300B tokens, QA at 10% of the QA blend, QA capped at 4 epochs,
 * k = 50 for mining and the bottom perplexity quartile for web filtering.
 */
nlohmann::json recipe_preset();

RunConfig parse_config(const nlohmann::json& document, const std::filesystem::path& base_dir,
                       const ConfigOverrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

LrSchedule build_schedule(const RunConfig& config);
SourceRegistry build_registry(const RunConfig& config);

/// Reads inventories for the given sources (all declared inventories when empty); throws missing-inventory.
DocumentRegistry load_inventories(const RunConfig& config, const std::vector<std::string>& sources = {});

struct ResolvedPlan {
    SourceRegistry registry;
    BlendPlan plan;
    SwitchSolution switch_solution;
    std::vector<std::string> notes;
};

/// Builds phases (weights, transforms, epoch caps) and resolves the switch token. Runs every
/// blend/schedule validation; recipe runs also check the recipe constraints.
ResolvedPlan resolve_plan(const RunConfig& config);

}  // namespace cptkit
