// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "cptkit/schedule.hpp"

namespace cptkit {

/// One pre-tokenized document of a source. `locator` points at its token payload.
struct Document {
    std::string id;
    TokenCount token_count = 0;
    std::string locator;

    bool operator==(const Document&) const = default;
};

/// Per-source document lists, in inventory file order.
class DocumentRegistry {
public:
    void set(const std::string& source, std::vector<Document> documents);
    [[nodiscard]] const std::vector<Document>* find(std::string_view source) const;
    [[nodiscard]] const std::map<std::string, std::vector<Document>, std::less<>>& sources() const noexcept { return mDocs; }
    [[nodiscard]] TokenCount token_total(std::string_view source) const;

    /// SHA-256 over (source, id, token_count, locator) of every document, sources in name order.
    [[nodiscard]] std::string digest() const;

private:
    std::map<std::string, std::vector<Document>, std::less<>> mDocs;
};

/**
 * Inventory index files are line-delimited JSON, one document per line:
 *   {"id":"doc-17","locator":"tokens.bin@1024","tokens":312}
 * Blank lines are skipped.
 */
std::vector<Document> read_inventory(std::istream& in, std::string_view what = "inventory");
std::vector<Document> read_inventory_file(const std::filesystem::path& path);
void write_inventory(std::ostream& out, const std::vector<Document>& documents);

/// Source of token payloads for replay.
class TokenStore {
public:
    virtual ~TokenStore() = default;
    virtual std::vector<std::uint32_t> load(std::string_view source, const Document& doc) const = 0;
};

/**
 * Resolves locators of the form "<path>[@<token offset>]" relative to a base directory; payload
 * files are little-endian uint32 token ids.
 */
class FileTokenStore final : public TokenStore {
public:
    explicit FileTokenStore(std::filesystem::path base_dir) : mBase(std::move(base_dir)) {}
    std::vector<std::uint32_t> load(std::string_view source, const Document& doc) const override;

private:
    std::filesystem::path mBase;
};

/// Map-backed store keyed by (source, document id).
class MemoryTokenStore final : public TokenStore {
public:
    void put(const std::string& source, const std::string& id, std::vector<std::uint32_t> tokens);
    std::vector<std::uint32_t> load(std::string_view source, const Document& doc) const override;

private:
    std::map<std::pair<std::string, std::string>, std::vector<std::uint32_t>> mTokens;
};

}  // namespace cptkit
