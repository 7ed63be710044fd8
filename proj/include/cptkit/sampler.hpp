// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cptkit/blend.hpp"
#include "cptkit/inventory.hpp"

namespace cptkit {

/// Identifier of the ordering algorithm written into every manifest header.
inline constexpr std::string_view kOrderAlgorithm = "drr-fisher-yates-mt19937_64-v1";

enum class DocumentOrder { Shuffled, Sequential };

struct SamplerOptions {
    /// Minimum tokens taken from a source each time it is selected (whole documents only).
    TokenCount granularity = 1;
    DocumentOrder order = DocumentOrder::Shuffled;
};

struct ManifestHeader {
    std::string plan_digest;
    std::string registry_digest;
    std::uint64_t seed = 0;
    TokenCount total_tokens = 0;
    TokenCount switch_token = 0;
    std::string order_algorithm{kOrderAlgorithm};
    DocumentOrder order = DocumentOrder::Shuffled;

    bool operator==(const ManifestHeader&) const = default;
};

struct ManifestRecord {
    TokenCount global_token_offset = 0;
    std::string source;
    std::string document_id;
    /// Tokens emitted from the document; only the final record of a manifest can be a truncated prefix.
    TokenCount doc_token_count = 0;
    std::uint32_t epoch_index = 0;
    PhaseLabel phase = PhaseLabel::GB;

    bool operator==(const ManifestRecord&) const = default;
};

struct SampleManifest {
    ManifestHeader header;
    std::vector<ManifestRecord> records;

    bool operator==(const SampleManifest&) const = default;
};

/**
 * Realizes `plan` as an ordered token stream.
 *
 * Within a phase the next source is the one maximizing w_i * emitted_total - emitted_i (ties to
 * the smaller name); weights are honored in tokens. Each source walks its documents in a seeded
 * per-epoch permutation (or file order), visiting every document once per epoch. A document that
 * straddles the switch token stays whole; the QB phase starts at the next document. The manifest
 * ends exactly at total_tokens, truncating the final document if needed.
 */
SampleManifest generate_manifest(const BlendPlan& plan, const DocumentRegistry& registry, std::uint64_t seed,
                                 const SamplerOptions& options = {});

/// Permutation of [0, n) used for one epoch of one source.
std::vector<std::size_t> epoch_permutation(std::uint64_t source_seed, std::uint32_t epoch, std::size_t n);

/// Per-source seed derived from the run seed and the source key.
std::uint64_t source_seed(std::uint64_t seed, std::string_view source_key);

struct SourceDeviation {
    std::string source;
    double weight = 0.0;
    TokenCount emitted = 0;
    double share = 0.0;
    double deviation = 0.0;
    bool pass = true;
};

struct PhaseProportions {
    PhaseLabel phase = PhaseLabel::GB;
    TokenCount phase_tokens = 0;
    TokenCount max_doc_len = 0;
    double allowed = 0.0;
    std::vector<SourceDeviation> sources;
};

struct ProportionReport {
    bool pass = true;
    double max_deviation = 0.0;
    std::vector<PhaseProportions> phases;  // GB then QB; a phase with no tokens has no entries
    std::vector<std::string> failures;     // named sources or structural problems
};

/// Per-phase |emitted_i / phase_tokens - w_i|; a source passes iff within tolerance + max_doc_len / phase_tokens.
ProportionReport verify_proportions(const SampleManifest& manifest, const BlendPlan& plan, double tolerance);

using ReplaySink = std::function<void(const ManifestRecord&, std::span<const std::uint32_t>)>;

/// Streams document payloads in manifest order. Missing documents are reported before digest mismatches.
void replay(const SampleManifest& manifest, const DocumentRegistry& registry, const TokenStore& store,
            const ReplaySink& sink);

/// Replay concatenated as little-endian uint32 bytes.
std::string replay_bytes(const SampleManifest& manifest, const DocumentRegistry& registry, const TokenStore& store);

/// Header line followed by one JSON record per line.
void write_manifest(std::ostream& out, const SampleManifest& manifest);
SampleManifest read_manifest(std::istream& in);

std::string manifest_digest(const SampleManifest& manifest);

}  // namespace cptkit
