// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cptkit/config.hpp"
#include "cptkit/error.hpp"

namespace cptkit {

/// Environment variable naming the output directory when --out is absent.
inline constexpr const char* kOutDirEnv = "CPTKIT_OUT_DIR";
inline constexpr const char* kDefaultOutDir = "cptkit-out";

/// Exit codes: 0 ok, 2 validation, 3 I/O, 4 unreachable target.
int exit_code_for(ErrorCode code) noexcept;

/// Single-line JSON error record.
std::string error_record(ErrorCode code, std::string_view message);

struct PlanReport {
    std::string config_digest;
    std::string plan_digest;
    TokenCount switch_token = 0;
    double switch_lr = 0.0;
    TokenCount gb_tokens = 0;
    TokenCount qb_tokens = 0;
    EpochReport gb_epochs;
    EpochReport qb_epochs;
    std::vector<std::pair<TokenCount, double>> lr_curve;
    std::vector<std::string> notes;
    nlohmann::json plan;

    /// The plan.json document.
    [[nodiscard]] nlohmann::json to_json() const;
    /// SHA-256 of to_json().
    [[nodiscard]] std::string digest() const;
};

/// Writes plan.json, epochs.jsonl and lr_curve.jsonl under `out`.
PlanReport cmd_plan(const RunConfig& config, const std::filesystem::path& out);

struct SampleReport {
    SampleManifest manifest;
    ProportionReport proportions;
};

/// Writes manifest.jsonl, proportions.json and sample.json under `out`.
SampleReport cmd_sample(const RunConfig& config, const std::filesystem::path& out, double tolerance = 1e-3);

struct ScoreInputs {
    /// Line-delimited {"id","text"[,"group"]} documents.
    std::filesystem::path corpus;
    /// Cached model; trained from the configured reference corpus when absent.
    std::optional<std::filesystem::path> model;
};

/// Writes model.bin, quality_manifest.jsonl and score.json under `out`.
QualityManifest cmd_score(const RunConfig& config, const ScoreInputs& inputs, const std::filesystem::path& out);

struct MineInputs {
    std::filesystem::path qa_embeddings;
    std::filesystem::path corpus_embeddings;
};

/// Writes neighbors.jsonl, mined.jsonl (inventory form), qb_mined.json and mining.json under `out`.
MiningResult cmd_mine(const RunConfig& config, const MineInputs& inputs, const std::filesystem::path& out);

/// Resolves the plan and checks every declared inventory; writes nothing.
ResolvedPlan validate(const RunConfig& config);

/// Full command line (without argv[0]). Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cptkit
