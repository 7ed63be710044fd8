// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/mining.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <thread>
#include <unordered_set>

#include <fmt/core.h>
#include <json.hpp>

#include "cptkit/digest.hpp"
#include "cptkit/error.hpp"

namespace cptkit {

namespace {

std::uint64_t le_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

std::uint32_t le_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) {
        out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

struct Candidate {
    double score;
    std::uint32_t rank;  // position of the id in sorted id order
    std::uint32_t row;
};

bool better(const Candidate& a, const Candidate& b) {
    return a.score != b.score ? a.score > b.score : a.rank < b.rank;
}

}  // namespace

// ---- EmbeddingSet -----------------------------------------------------------------------------

EmbeddingSet::EmbeddingSet(std::size_t dimension, std::vector<float> vectors, std::vector<std::string> ids)
    : mDim(dimension), mVectors(std::move(vectors)), mIds(std::move(ids)) {
    if (mDim == 0) {
        throw Error(ErrorCode::DimensionMismatch, "embedding dimension must be positive");
    }
    if (mVectors.size() != mIds.size() * mDim) {
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("{} values do not form {} rows of dimension {}", mVectors.size(), mIds.size(), mDim));
    }
    std::unordered_set<std::string_view> seen;
    for (const auto& id : mIds) {
        if (!seen.insert(id).second) {
            throw Error(ErrorCode::InvalidParameter, fmt::format("duplicate embedding id '{}'", id));
        }
    }
    mNorms.resize(mIds.size());
    for (std::size_t i = 0; i < mIds.size(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < mDim; ++j) {
            const float v = mVectors[i * mDim + j];
            if (!std::isfinite(v)) {
                throw Error(ErrorCode::NonFinite, fmt::format("embedding '{}' has a non-finite component {}", mIds[i], j));
            }
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
        mNorms[i] = std::sqrt(sq);
    }
}

std::filesystem::path default_ids_path(const std::filesystem::path& data) {
    return std::filesystem::path(data.string() + ".ids");
}

EmbeddingSet read_embeddings(std::istream& data, std::istream& ids_in) {
    unsigned char header[kEmbeddingHeaderBytes];
    data.read(reinterpret_cast<char*>(header), sizeof header);
    if (static_cast<std::size_t>(data.gcount()) != sizeof header) {
        throw Error(ErrorCode::Format,
                    fmt::format("embedding header truncated at byte {}", static_cast<std::size_t>(data.gcount())));
    }
    const std::uint64_t n = le_u64(header);
    const std::uint64_t d = le_u64(header + 8);
    const std::uint32_t dtype = le_u32(header + 16);
    if (dtype != kDtypeFloat32) {
        throw Error(ErrorCode::Format, fmt::format("unsupported dtype {} at byte 16 (expected 1 = float32)", dtype));
    }
    if (d == 0 || d > (1ULL << 20)) {
        throw Error(ErrorCode::Format, fmt::format("implausible dimension {} at byte 8", d));
    }
    if (n > (1ULL << 40) / d) {
        throw Error(ErrorCode::Format, fmt::format("implausible row count {} at byte 0", n));
    }
    const std::size_t count = static_cast<std::size_t>(n * d);
    std::vector<unsigned char> raw(count * 4);
    data.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    const auto got = static_cast<std::size_t>(data.gcount());
    if (got != raw.size()) {
        throw Error(ErrorCode::Format, fmt::format("embedding data truncated at byte {} (expected {} bytes)",
                                                   kEmbeddingHeaderBytes + got, kEmbeddingHeaderBytes + raw.size()));
    }
    if (data.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorCode::Format,
                    fmt::format("trailing bytes after embedding data at byte {}", kEmbeddingHeaderBytes + raw.size()));
    }
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = le_u32(raw.data() + 4 * i);
        std::memcpy(&values[i], &bits, sizeof bits);
        if (!std::isfinite(values[i])) {
            throw Error(ErrorCode::NonFinite,
                        fmt::format("non-finite embedding value at byte {}", kEmbeddingHeaderBytes + 4 * i));
        }
    }
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(ids_in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            ids.push_back(line);
        }
    }
    if (ids.size() != n) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("id sidecar lists {} ids for {} vectors", ids.size(), n));
    }
    return EmbeddingSet(static_cast<std::size_t>(d), std::move(values), std::move(ids));
}

EmbeddingSet read_embeddings_file(const std::filesystem::path& data, const std::filesystem::path& ids) {
    std::ifstream din(data, std::ios::binary);
    if (!din) {
        throw Error(ErrorCode::Io, fmt::format("cannot open embeddings '{}'", data.string()));
    }
    std::ifstream iin(ids);
    if (!iin) {
        throw Error(ErrorCode::Io, fmt::format("cannot open id sidecar '{}'", ids.string()));
    }
    try {
        return read_embeddings(din, iin);
    } catch (const Error& e) {
        throw Error(e.code(), fmt::format("{}: {}", data.string(), e.what()));
    }
}

void write_embeddings(std::ostream& data, std::ostream& ids, const EmbeddingSet& set) {
    put_le(data, set.size(), 8);
    put_le(data, set.dimension(), 8);
    put_le(data, kDtypeFloat32, 4);
    for (const float v : set.vectors()) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        put_le(data, bits, 4);
    }
    for (const auto& id : set.ids()) {
        ids << id << '\n';
    }
}

// ---- ExactIndex -------------------------------------------------------------------------------

ExactIndex::ExactIndex(const EmbeddingSet& embeddings, Metric metric)
    : mDim(embeddings.dimension()), mMetric(metric), mIds(embeddings.ids()) {
    if (embeddings.size() == 0) {
        throw Error(ErrorCode::InvalidParameter, "cannot index an empty embedding set");
    }
    mRows.resize(embeddings.size() * mDim);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        double scale = 1.0;
        if (metric == Metric::Cosine) {
            if (embeddings.norms()[i] == 0.0) {
                throw Error(ErrorCode::ZeroNorm, fmt::format("embedding '{}' has zero norm", mIds[i]));
            }
            scale = 1.0 / embeddings.norms()[i];
        }
        const auto row = embeddings.row(i);
        for (std::size_t j = 0; j < mDim; ++j) {
            mRows[i * mDim + j] = static_cast<double>(row[j]) * scale;
        }
    }
    std::vector<std::uint32_t> order(mIds.size());
    std::iota(order.begin(), order.end(), 0U);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return mIds[a] < mIds[b]; });
    mIdRank.resize(mIds.size());
    for (std::uint32_t r = 0; r < order.size(); ++r) {
        mIdRank[order[r]] = r;
    }
}

std::vector<Neighbor> ExactIndex::knn(std::span<const float> query, std::size_t k) const {
    if (query.size() != mDim) {
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("query dimension {} does not match index dimension {}", query.size(), mDim));
    }
    if (k < 1 || k > size()) {
        throw Error(ErrorCode::KOutOfRange, fmt::format("k = {} must lie in [1, {}]", k, size()));
    }
    std::vector<double> q(mDim);
    double sq = 0.0;
    for (std::size_t j = 0; j < mDim; ++j) {
        if (!std::isfinite(query[j])) {
            throw Error(ErrorCode::NonFinite, fmt::format("query component {} is not finite", j));
        }
        q[j] = query[j];
        sq += q[j] * q[j];
    }
    if (mMetric == Metric::Cosine) {
        if (sq == 0.0) {
            throw Error(ErrorCode::ZeroNorm, "query vector has zero norm");
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (auto& v : q) {
            v *= inv;
        }
    }

    std::vector<Candidate> best;
    best.reserve(2 * k);
    std::vector<Candidate> block;
    block.reserve(kScanBlockRows);
    for (std::size_t begin = 0; begin < size(); begin += kScanBlockRows) {
        const std::size_t end = std::min(size(), begin + kScanBlockRows);
        block.clear();
        for (std::size_t i = begin; i < end; ++i) {
            const double* row = mRows.data() + i * mDim;
            double dot = 0.0;
            for (std::size_t j = 0; j < mDim; ++j) {
                dot += row[j] * q[j];
            }
            block.push_back(Candidate{dot, mIdRank[i], static_cast<std::uint32_t>(i)});
        }
        if (block.size() > k) {
            std::nth_element(block.begin(), block.begin() + static_cast<std::ptrdiff_t>(k), block.end(), better);
            block.resize(k);
        }
        best.insert(best.end(), block.begin(), block.end());
        if (best.size() > k) {
            std::nth_element(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(k), best.end(), better);
            best.resize(k);
        }
    }
    std::sort(best.begin(), best.end(), better);
    std::vector<Neighbor> out;
    out.reserve(best.size());
    for (const auto& c : best) {
        out.push_back(Neighbor{mIds[c.row], c.score});
    }
    return out;
}

// ---- Mining -----------------------------------------------------------------------------------

std::string MiningResult::mined_set_digest() const {
    Digest d;
    for (const auto& id : mined_set) {
        d.update(id).update("\n");
    }
    return d.finish();
}

DocumentIndex index_documents(const DocumentRegistry& registry, const std::set<std::string>& skip_sources) {
    DocumentIndex out;
    std::map<std::string, std::string> owner;
    for (const auto& [source, docs] : registry.sources()) {
        if (skip_sources.contains(source)) {
            continue;
        }
        for (const auto& d : docs) {
            if (auto [it, fresh] = owner.emplace(d.id, source); !fresh) {
                throw Error(ErrorCode::InvalidParameter,
                            fmt::format("document id '{}' appears in both '{}' and '{}'", d.id, it->second, source));
            }
            out.emplace(d.id, d);
        }
    }
    return out;
}

MiningResult mine(const EmbeddingSet& qa, const ExactIndex& corpus, std::size_t k, const DocumentIndex& documents,
                  unsigned threads) {
    if (qa.dimension() != corpus.dimension()) {
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("QA dimension {} does not match corpus dimension {}", qa.dimension(), corpus.dimension()));
    }
    if (k < 1 || k > corpus.size()) {
        throw Error(ErrorCode::KOutOfRange, fmt::format("k = {} must lie in [1, {}]", k, corpus.size()));
    }
    MiningResult result;
    result.per_query.resize(qa.size());
    threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(qa.size(), 1))));
    std::vector<std::exception_ptr> errors(threads);
    auto work = [&](unsigned worker) {
        try {
            for (std::size_t i = worker; i < qa.size(); i += threads) {
                result.per_query[i] = QueryNeighbors{qa.ids()[i], corpus.knn(qa.row(i), k)};
            }
        } catch (...) {
            errors[worker] = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back(work, t);
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    std::sort(result.per_query.begin(), result.per_query.end(),
              [](const auto& a, const auto& b) { return a.query_id < b.query_id; });
    for (const auto& q : result.per_query) {
        for (const auto& n : q.neighbors) {
            result.mined_set.insert(n.id);
        }
    }
    for (const auto& id : result.mined_set) {
        auto it = documents.find(id);
        if (it == documents.end()) {
            throw Error(ErrorCode::UnknownDocument, fmt::format("mined document '{}' is not in the registry", id));
        }
        result.mined_tokens += it->second.token_count;
    }
    return result;
}

MiningResult mine(const EmbeddingSet& qa, const EmbeddingSet& corpus, std::size_t k, const DocumentIndex& documents,
                  Metric metric, unsigned threads) {
    std::unordered_set<std::string_view> corpus_ids(corpus.ids().begin(), corpus.ids().end());
    for (const auto& id : qa.ids()) {
        if (corpus_ids.contains(id)) {
            throw Error(ErrorCode::Overlap, fmt::format("QA document '{}' is also in the mining corpus", id));
        }
    }
    return mine(qa, ExactIndex(corpus, metric), k, documents, threads);
}

std::vector<Document> mined_documents(const MiningResult& result, const DocumentIndex& documents) {
    std::vector<Document> out;
    out.reserve(result.mined_set.size());
    for (const auto& id : result.mined_set) {
        auto it = documents.find(id);
        if (it == documents.end()) {
            throw Error(ErrorCode::UnknownDocument, fmt::format("mined document '{}' is not in the registry", id));
        }
        out.push_back(it->second);
    }
    return out;
}

MinedBlend emit_mined_blend(const MiningResult& result, const BlendPhase& qb, const SourceRegistry& registry,
                            std::string_view mined_name) {
    if (result.mined_set.empty()) {
        throw Error(ErrorCode::EmptyMiningResult, "mining produced no documents");
    }
    if (registry.find(mined_name) != nullptr || qb.contains(mined_name)) {
        throw Error(ErrorCode::Overlap, fmt::format("mined source name '{}' is already in use", mined_name));
    }
    MinedBlend out;
    out.mined_source = DataSource{std::string(mined_name), Domain::EnglishHighQuality, result.mined_tokens, std::nullopt};
    RawWeights raw;
    double mined_weight = 0.0;
    bool replaced = false;
    for (const auto& [name, w] : qb.weights()) {
        if (registry.at(name).domain == Domain::QaCategory) {
            raw[name] = w;
        } else {
            mined_weight += w;
            replaced = true;
        }
    }
    if (!replaced) {
        out.phase = qb;
        out.warnings.push_back("QB has only QA sources; nothing to replace with mined documents");
        return out;
    }
    raw[std::string(mined_name)] = mined_weight;
    out.phase = normalize(raw, qb.label());
    for (const auto& [name, subset] : qb.backings()) {
        if (out.phase.contains(name)) {
            out.phase = out.phase.with_backing(name, subset);
        }
    }
    return out;
}

void write_neighbors(std::ostream& out, const MiningResult& result) {
    for (const auto& q : result.per_query) {
        for (std::size_t r = 0; r < q.neighbors.size(); ++r) {
            nlohmann::json j{{"query_id", q.query_id},
                             {"rank", r + 1},
                             {"neighbor_id", q.neighbors[r].id},
                             {"score", q.neighbors[r].score}};
            out << j.dump() << '\n';
        }
    }
}

}  // namespace cptkit
