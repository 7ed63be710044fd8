// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cptkit/blend.hpp"
#include "cptkit/inventory.hpp"

namespace cptkit {

using TokenId = std::uint32_t;

inline constexpr TokenId kUnkId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";

struct NgramOptions {
    int order = 5;
    /// Predict an end-of-sentence symbol after every sentence.
    bool sentence_end = true;
};

/// Word sequences; each inner vector is one sentence (or one whole document).
using Sentences = std::vector<std::vector<std::string>>;

struct NgramKeyHash {
    std::size_t operator()(const std::vector<TokenId>& key) const noexcept;
};

/**
 * Interpolated Kneser-Ney n-gram model.
 *
 * The highest order uses raw counts; lower orders use continuation counts (distinct left
 * extensions), except n-grams starting with <s>, which keep raw counts. One discount per order,
 * n1 / (n1 + 2 n2) over that order's counts, or 0.75 when n1 or n2 is zero. The unigram level
 * interpolates with the uniform distribution over the predictable vocabulary, which contains
 * every training word, <unk>, and </s> when sentence ends are modelled (never <s>).
 */
class NgramModel {
public:
    struct ContextStats {
        std::uint64_t total = 0;
        std::uint64_t types = 0;
    };
    using Table = std::unordered_map<std::vector<TokenId>, std::uint64_t, NgramKeyHash>;
    using ContextTable = std::unordered_map<std::vector<TokenId>, ContextStats, NgramKeyHash>;

    [[nodiscard]] int order() const noexcept { return mOptions.order; }
    [[nodiscard]] const NgramOptions& options() const noexcept { return mOptions; }
    [[nodiscard]] const std::vector<double>& discounts() const noexcept { return mDiscounts; }
    [[nodiscard]] const std::vector<std::string>& words() const noexcept { return mWords; }
    /// Adjusted counts of k-grams, k in [1, order].
    [[nodiscard]] const Table& counts(int k) const { return mCounts.at(static_cast<std::size_t>(k - 1)); }

    /// Word id, or kUnkId for out-of-vocabulary words.
    [[nodiscard]] TokenId id_of(std::string_view word) const;
    /// Ids that can be predicted (the support of every conditional distribution).
    [[nodiscard]] const std::vector<TokenId>& predictable() const noexcept { return mPredictable; }

    /// P(word | context); only the last order-1 context ids are used.
    [[nodiscard]] double probability(std::span<const TokenId> context, TokenId word) const;

    /// SHA-256 of the serialized tables.
    [[nodiscard]] const std::string& digest() const noexcept { return mDigest; }

private:
    friend NgramModel train_ngram(const Sentences&, const NgramOptions&);
    friend NgramModel read_model(std::istream&);
    void finalize();
    [[nodiscard]] double interpolate(std::span<const TokenId> context, TokenId word) const;

    NgramOptions mOptions;
    std::vector<std::string> mWords;
    std::unordered_map<std::string, TokenId> mIds;
    std::vector<TokenId> mPredictable;
    std::vector<double> mDiscounts;
    std::vector<Table> mCounts;
    std::vector<ContextTable> mContexts;
    std::string mDigest;
};

NgramModel train_ngram(const Sentences& corpus, const NgramOptions& options = {});

/// exp(-mean log P) over every predicted token (words, plus </s> per sentence when enabled).
double perplexity(const NgramModel& model, const std::vector<std::string>& document);
/// Same, scoring each sentence independently (context resets) and pooling all predictions.
double perplexity(const NgramModel& model, const Sentences& sentences);

/// Versioned little-endian table dump followed by the hex SHA-256 of the preceding bytes.
void write_model(std::ostream& out, const NgramModel& model);
/// Throws digest-mismatch when the trailer does not match the payload.
NgramModel read_model(std::istream& in);

/// Whitespace tokenization, optionally lowercased (ASCII).
std::vector<std::string> tokenize(std::string_view text, bool lowercase = false);
/// One sentence per non-empty line.
Sentences tokenize_lines(std::string_view text, bool lowercase = false);

// ---- Quartile filter ----------------------------------------------------------------------------

struct ScoredDocument {
    std::string id;
    double perplexity = 0.0;
    std::string group;  // used only by the grouped filter
};

struct QualityManifest {
    std::string model_digest;
    double quartile = 0.25;
    double threshold = 0.0;
    std::map<std::string, double> group_thresholds;
    std::vector<ScoredDocument> scores;  // id order
    std::set<std::string> selected;
};

inline constexpr double kDefaultQuartile = 0.25;

/// floor(N * quartile) lowest-perplexity documents, ties broken by id. threshold is the largest
/// selected perplexity (0 when nothing is selected).
QualityManifest quartile_filter(const std::vector<ScoredDocument>& scores, double quartile = kDefaultQuartile);

/// Applies the filter within each `group` separately.
QualityManifest quartile_filter_grouped(const std::vector<ScoredDocument>& scores, double quartile = kDefaultQuartile);

/// Scores documents on `threads` workers; output order matches input order.
std::vector<ScoredDocument> score_documents(const NgramModel& model,
                                            const std::vector<std::pair<std::string, Sentences>>& documents,
                                            unsigned threads = 1);

void write_quality_manifest(std::ostream& out, const QualityManifest& manifest);
QualityManifest read_quality_manifest(std::istream& in);
std::string quality_manifest_digest(const QualityManifest& manifest);

/// Selected ids as a backing subset; token_count filled in when a document list is supplied.
DocumentSubset to_document_subset(const QualityManifest& manifest, const std::vector<Document>* documents = nullptr);

}  // namespace cptkit
