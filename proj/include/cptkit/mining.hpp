// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cptkit/blend.hpp"
#include "cptkit/inventory.hpp"

namespace cptkit {

/// Dense row-major embeddings with aligned ids and precomputed Euclidean norms.
class EmbeddingSet {
public:
    EmbeddingSet() = default;
    /// Throws non-finite, dimension-mismatch (size not n*d) or invalid-parameter (duplicate ids).
    EmbeddingSet(std::size_t dimension, std::vector<float> vectors, std::vector<std::string> ids);

    [[nodiscard]] std::size_t dimension() const noexcept { return mDim; }
    [[nodiscard]] std::size_t size() const noexcept { return mIds.size(); }
    [[nodiscard]] std::span<const float> row(std::size_t i) const { return {mVectors.data() + i * mDim, mDim}; }
    [[nodiscard]] const std::vector<float>& vectors() const noexcept { return mVectors; }
    [[nodiscard]] const std::vector<std::string>& ids() const noexcept { return mIds; }
    [[nodiscard]] const std::vector<double>& norms() const noexcept { return mNorms; }

private:
    std::size_t mDim = 0;
    std::vector<float> mVectors;
    std::vector<std::string> mIds;
    std::vector<double> mNorms;
};

/**
 * Embedding file: little-endian header {u64 n, u64 d, u32 dtype} (dtype 1 = float32) followed by
 * n*d float32 values, row-major. Ids live in a sidecar text file, one per line. Parse errors carry
 * the byte offset of the first bad byte.
 */
inline constexpr std::uint32_t kDtypeFloat32 = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 20;

EmbeddingSet read_embeddings(std::istream& data, std::istream& ids);
EmbeddingSet read_embeddings_file(const std::filesystem::path& data, const std::filesystem::path& ids);
void write_embeddings(std::ostream& data, std::ostream& ids, const EmbeddingSet& set);

/// Default sidecar location: "<data>.ids".
std::filesystem::path default_ids_path(const std::filesystem::path& data);

enum class Metric { Cosine, InnerProduct };

struct Neighbor {
    std::string id;
    double score = 0.0;

    bool operator==(const Neighbor&) const = default;
};

/// Rows scored per block during a scan.
inline constexpr std::size_t kScanBlockRows = 1024;

/**
 * Exact nearest-neighbour index. Cosine indexes keep unit-normalized double copies; the scan walks
 * fixed-size row blocks, keeps each block's top-k and merges it into the running top-k. Results
 * are ordered by descending score, ties by ascending id.
 */
class ExactIndex {
public:
    ExactIndex(const EmbeddingSet& embeddings, Metric metric = Metric::Cosine);

    [[nodiscard]] std::size_t size() const noexcept { return mIds.size(); }
    [[nodiscard]] std::size_t dimension() const noexcept { return mDim; }
    [[nodiscard]] Metric metric() const noexcept { return mMetric; }

    [[nodiscard]] std::vector<Neighbor> knn(std::span<const float> query, std::size_t k) const;

private:
    std::size_t mDim;
    Metric mMetric;
    std::vector<double> mRows;
    std::vector<std::string> mIds;
    std::vector<std::uint32_t> mIdRank;
};

inline constexpr std::size_t kDefaultMiningK = 50;

struct QueryNeighbors {
    std::string query_id;
    std::vector<Neighbor> neighbors;
};

struct MiningResult {
    std::vector<QueryNeighbors> per_query;  // query id order
    std::set<std::string> mined_set;
    TokenCount mined_tokens = 0;

    [[nodiscard]] std::string mined_set_digest() const;
};

/// Document lookup by id across sources.
using DocumentIndex = std::map<std::string, Document, std::less<>>;

/// Flattens the registry; throws invalid-parameter when an id occurs in more than one source.
DocumentIndex index_documents(const DocumentRegistry& registry, const std::set<std::string>& skip_sources = {});

/// Top-k corpus neighbours of every QA vector, deduplicated into one mined set.
MiningResult mine(const EmbeddingSet& qa, const ExactIndex& corpus, std::size_t k, const DocumentIndex& documents,
                  unsigned threads = 1);
MiningResult mine(const EmbeddingSet& qa, const EmbeddingSet& corpus, std::size_t k, const DocumentIndex& documents,
                  Metric metric = Metric::Cosine, unsigned threads = 1);

/// Mined documents in id order, in inventory form.
std::vector<Document> mined_documents(const MiningResult& result, const DocumentIndex& documents);

struct MinedBlend {
    BlendPhase phase;
    DataSource mined_source;
    std::vector<std::string> warnings;
};

inline constexpr std::string_view kMinedSourceName = "mined";

/// Replaces every non-QA source of `qb` with one mined source carrying their combined weight.
MinedBlend emit_mined_blend(const MiningResult& result, const BlendPhase& qb, const SourceRegistry& registry,
                            std::string_view mined_name = kMinedSourceName);

/// One line per (query, rank): {"query_id","rank","neighbor_id","score"}; rank starts at 1.
void write_neighbors(std::ostream& out, const MiningResult& result);

}  // namespace cptkit
