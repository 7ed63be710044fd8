// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/inventory.hpp"

#include <fstream>
#include <set>

#include <fmt/core.h>
#include <json.hpp>

#include "cptkit/digest.hpp"
#include "cptkit/error.hpp"

namespace cptkit {

void DocumentRegistry::set(const std::string& source, std::vector<Document> documents) {
    std::set<std::string_view> seen;
    for (const auto& d : documents) {
        if (!seen.insert(d.id).second) {
            throw Error(ErrorCode::InvalidParameter, fmt::format("duplicate document id '{}' in source '{}'", d.id, source));
        }
    }
    mDocs[source] = std::move(documents);
}

const std::vector<Document>* DocumentRegistry::find(std::string_view source) const {
    auto it = mDocs.find(source);
    return it == mDocs.end() ? nullptr : &it->second;
}

TokenCount DocumentRegistry::token_total(std::string_view source) const {
    TokenCount total = 0;
    if (const auto* docs = find(source)) {
        for (const auto& d : *docs) {
            total += d.token_count;
        }
    }
    return total;
}

std::string DocumentRegistry::digest() const {
    Digest d;
    for (const auto& [source, docs] : mDocs) {
        d.update(fmt::format("source\t{}\t{}\n", source, docs.size()));
        for (const auto& doc : docs) {
            d.update(fmt::format("{}\t{}\t{}\n", doc.id, doc.token_count, doc.locator));
        }
    }
    return d.finish();
}

std::vector<Document> read_inventory(std::istream& in, std::string_view what) {
    std::vector<Document> docs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            Document d;
            d.id = j.at("id").get<std::string>();
            d.token_count = j.at("tokens").get<TokenCount>();
            d.locator = j.value("locator", std::string{});
            docs.push_back(std::move(d));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::Format, fmt::format("{} line {}: {}", what, line_no, e.what()));
        }
    }
    return docs;
}

std::vector<Document> read_inventory_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::MissingInventory, fmt::format("cannot open inventory '{}'", path.string()));
    }
    return read_inventory(in, path.string());
}

void write_inventory(std::ostream& out, const std::vector<Document>& documents) {
    for (const auto& d : documents) {
        nlohmann::json j{{"id", d.id}, {"tokens", d.token_count}, {"locator", d.locator}};
        out << j.dump() << '\n';
    }
}

std::vector<std::uint32_t> FileTokenStore::load(std::string_view source, const Document& doc) const {
    std::string path_part = doc.locator;
    std::uint64_t offset = 0;
    if (auto at = doc.locator.rfind('@'); at != std::string::npos) {
        path_part = doc.locator.substr(0, at);
        try {
            offset = std::stoull(doc.locator.substr(at + 1));
        } catch (const std::exception&) {
            throw Error(ErrorCode::Format, fmt::format("bad locator '{}' for {}/{}", doc.locator, source, doc.id));
        }
    }
    if (path_part.empty()) {
        throw Error(ErrorCode::MissingDocument, fmt::format("document {}/{} has no payload locator", source, doc.id));
    }
    const auto path = mBase / path_part;
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingDocument, fmt::format("cannot open payload '{}' for {}/{}", path.string(), source, doc.id));
    }
    in.seekg(static_cast<std::streamoff>(offset * 4));
    std::vector<unsigned char> raw(doc.token_count * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw Error(ErrorCode::MissingDocument,
                    fmt::format("payload '{}' is too short for {}/{} ({} tokens at offset {})", path.string(), source,
                                doc.id, doc.token_count, offset));
    }
    std::vector<std::uint32_t> tokens(doc.token_count);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        tokens[i] = static_cast<std::uint32_t>(raw[4 * i]) | (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                    (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) | (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
    }
    return tokens;
}

void MemoryTokenStore::put(const std::string& source, const std::string& id, std::vector<std::uint32_t> tokens) {
    mTokens[{source, id}] = std::move(tokens);
}

std::vector<std::uint32_t> MemoryTokenStore::load(std::string_view source, const Document& doc) const {
    auto it = mTokens.find({std::string(source), doc.id});
    if (it == mTokens.end()) {
        throw Error(ErrorCode::MissingDocument, fmt::format("no payload for {}/{}", source, doc.id));
    }
    return it->second;
}

}  // namespace cptkit
