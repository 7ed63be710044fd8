// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <fmt/core.h>
#include <json.hpp>

#include "cptkit/digest.hpp"
#include "cptkit/error.hpp"

namespace cptkit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Unbiased draw in [0, bound) by rejecting the low 2^64 mod bound values.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = rng();
        if (r >= threshold) {
            return r % bound;
        }
    }
}

std::string cursor_key(const std::string& source, const DocumentSubset* backing) {
    if (backing == nullptr) {
        return source;
    }
    Digest d;
    for (const auto& id : backing->document_ids) {
        d.update(id).update("\n");
    }
    return source + "#" + d.finish().substr(0, 16);
}

class Cursor {
public:
    Cursor(std::string source, std::vector<const Document*> docs, std::uint64_t seed, DocumentOrder order)
        : mSource(std::move(source)), mDocs(std::move(docs)), mSeed(seed), mOrder(order) {
        reshuffle();
    }

    const Document& next(std::uint32_t& epoch_out) {
        if (mPos == mDocs.size()) {
            ++mEpoch;
            mPos = 0;
            reshuffle();
        }
        epoch_out = mEpoch;
        return *mDocs[mPerm[mPos++]];
    }

    [[nodiscard]] const std::string& source() const noexcept { return mSource; }

private:
    void reshuffle() {
        if (mOrder == DocumentOrder::Shuffled) {
            mPerm = epoch_permutation(mSeed, mEpoch, mDocs.size());
        } else if (mPerm.size() != mDocs.size()) {
            mPerm.resize(mDocs.size());
            std::iota(mPerm.begin(), mPerm.end(), std::size_t{0});
        }
    }

    std::string mSource;
    std::vector<const Document*> mDocs;
    std::uint64_t mSeed;
    DocumentOrder mOrder;
    std::vector<std::size_t> mPerm;
    std::size_t mPos = 0;
    std::uint32_t mEpoch = 0;
};

std::string_view order_name(DocumentOrder o) { return o == DocumentOrder::Shuffled ? "shuffled" : "sequential"; }

PhaseLabel parse_phase(const std::string& s) {
    if (s == "GB") {
        return PhaseLabel::GB;
    }
    if (s == "QB") {
        return PhaseLabel::QB;
    }
    throw Error(ErrorCode::Format, fmt::format("unknown phase '{}' in manifest", s));
}

}  // namespace

std::uint64_t source_seed(std::uint64_t seed, std::string_view source_key) {
    const auto hex = sha256_hex(fmt::format("{}\x1f{}", seed, source_key));
    return std::stoull(hex.substr(0, 16), nullptr, 16);
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint32_t epoch, std::size_t n) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(epoch)));
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded(rng, i));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

SampleManifest generate_manifest(const BlendPlan& plan, const DocumentRegistry& registry, std::uint64_t seed,
                                 const SamplerOptions& options) {
    if (options.granularity == 0) {
        throw Error(ErrorCode::InvalidParameter, "sampler granularity must be >= 1");
    }
    SampleManifest manifest;
    manifest.header.plan_digest = plan_digest(plan);
    manifest.header.registry_digest = registry.digest();
    manifest.header.seed = seed;
    manifest.header.total_tokens = plan.total_tokens;
    manifest.header.switch_token = plan.switch_token;
    manifest.header.order = options.order;

    std::map<std::string, Cursor> cursors;
    auto cursor_for = [&](const BlendPhase& phase, const std::string& source) -> Cursor& {
        const auto* backing = phase.backing(source);
        const auto key = cursor_key(source, backing);
        if (auto it = cursors.find(key); it != cursors.end()) {
            return it->second;
        }
        const auto* docs = registry.find(source);
        if (docs == nullptr) {
            throw Error(ErrorCode::MissingInventory, fmt::format("no document inventory for source '{}'", source));
        }
        std::vector<const Document*> usable;
        for (const auto& d : *docs) {
            if (d.token_count > 0 && (backing == nullptr || backing->document_ids.contains(d.id))) {
                usable.push_back(&d);
            }
        }
        if (usable.empty()) {
            throw Error(ErrorCode::MissingInventory,
                        fmt::format("inventory for source '{}' has no usable documents{}", source,
                                    backing != nullptr ? " in its backing subset" : ""));
        }
        return cursors.emplace(key, Cursor(source, std::move(usable), source_seed(seed, key), options.order)).first->second;
    };

    TokenCount offset = 0;
    const std::pair<const BlendPhase*, TokenCount> phases[] = {{&plan.gb, plan.switch_token}, {&plan.qb, plan.total_tokens}};
    for (const auto& [phase, end] : phases) {
        if (offset >= end) {
            continue;
        }
        struct Slot {
            std::string name;
            double weight;
            Cursor* cursor;
            TokenCount emitted = 0;
        };
        std::vector<Slot> slots;
        for (const auto& [name, w] : phase->weights()) {
            if (w > 0.0) {
                slots.push_back(Slot{name, w, &cursor_for(*phase, name)});
            }
        }
        TokenCount emitted_total = 0;
        while (offset < end && offset < plan.total_tokens) {
            std::size_t best = 0;
            double best_deficit = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < slots.size(); ++i) {
                const double deficit = slots[i].weight * static_cast<double>(emitted_total) - static_cast<double>(slots[i].emitted);
                if (deficit > best_deficit) {
                    best_deficit = deficit;
                    best = i;
                }
            }
            auto& slot = slots[best];
            TokenCount taken = 0;
            do {
                std::uint32_t epoch = 0;
                const Document& doc = slot.cursor->next(epoch);
                const TokenCount len = std::min(doc.token_count, plan.total_tokens - offset);
                manifest.records.push_back(ManifestRecord{offset, slot.name, doc.id, len, epoch, phase->label()});
                offset += len;
                slot.emitted += len;
                emitted_total += len;
                taken += len;
            } while (taken < options.granularity && offset < end && offset < plan.total_tokens);
        }
    }
    return manifest;
}

ProportionReport verify_proportions(const SampleManifest& manifest, const BlendPlan& plan, double tolerance) {
    ProportionReport report;
    auto fail = [&](std::string why) {
        report.pass = false;
        report.failures.push_back(std::move(why));
    };

    // structure
    TokenCount expected = 0;
    bool in_qb = false;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        if (r.global_token_offset != expected) {
            fail(fmt::format("record {} starts at {} but the previous record ends at {}", i, r.global_token_offset, expected));
        }
        const bool want_qb = r.global_token_offset >= plan.switch_token;
        if ((r.phase == PhaseLabel::QB) != want_qb) {
            fail(fmt::format("record {} at offset {} is labelled {} (switch token {})", i, r.global_token_offset,
                             to_string(r.phase), plan.switch_token));
        }
        if (in_qb && r.phase == PhaseLabel::GB) {
            fail(fmt::format("record {} returns to GB after the switch", i));
        }
        in_qb = in_qb || r.phase == PhaseLabel::QB;
        expected = r.global_token_offset + r.doc_token_count;
    }
    if (expected != plan.total_tokens) {
        fail(fmt::format("manifest covers {} tokens, plan expects {}", expected, plan.total_tokens));
    }

    for (const auto* phase : {&plan.gb, &plan.qb}) {
        PhaseProportions section;
        section.phase = phase->label();
        std::map<std::string, TokenCount> emitted;
        for (const auto& r : manifest.records) {
            if (r.phase == phase->label()) {
                emitted[r.source] += r.doc_token_count;
                section.phase_tokens += r.doc_token_count;
                section.max_doc_len = std::max(section.max_doc_len, r.doc_token_count);
            }
        }
        if (section.phase_tokens > 0) {
            const double n = static_cast<double>(section.phase_tokens);
            section.allowed = tolerance + static_cast<double>(section.max_doc_len) / n;
            std::set<std::string> names;
            for (const auto& [name, w] : phase->weights()) {
                names.insert(name);
            }
            for (const auto& [name, _] : emitted) {
                names.insert(name);
            }
            for (const auto& name : names) {
                SourceDeviation dev;
                dev.source = name;
                dev.weight = phase->weight(name);
                dev.emitted = emitted.contains(name) ? emitted[name] : 0;
                dev.share = static_cast<double>(dev.emitted) / n;
                dev.deviation = std::abs(dev.share - dev.weight);
                dev.pass = dev.deviation <= section.allowed && (dev.weight > 0.0 || dev.emitted == 0);
                report.max_deviation = std::max(report.max_deviation, dev.deviation);
                if (!dev.pass) {
                    fail(fmt::format("{} source '{}' has share {:.6g} vs weight {:.6g} (allowed deviation {:.3g})",
                                     to_string(section.phase), name, dev.share, dev.weight, section.allowed));
                }
                section.sources.push_back(std::move(dev));
            }
        }
        report.phases.push_back(std::move(section));
    }
    return report;
}

void replay(const SampleManifest& manifest, const DocumentRegistry& registry, const TokenStore& store,
            const ReplaySink& sink) {
    std::map<std::string, std::unordered_map<std::string, const Document*>, std::less<>> index;
    std::vector<const Document*> resolved;
    resolved.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        auto it = index.find(r.source);
        if (it == index.end()) {
            std::unordered_map<std::string, const Document*> by_id;
            if (const auto* docs = registry.find(r.source)) {
                for (const auto& d : *docs) {
                    by_id.emplace(d.id, &d);
                }
            }
            it = index.emplace(r.source, std::move(by_id)).first;
        }
        auto doc = it->second.find(r.document_id);
        if (doc == it->second.end()) {
            throw Error(ErrorCode::MissingDocument,
                        fmt::format("document '{}' of source '{}' is not in the registry", r.document_id, r.source));
        }
        resolved.push_back(doc->second);
    }
    const auto digest = registry.digest();
    if (digest != manifest.header.registry_digest) {
        throw Error(ErrorCode::DigestMismatch,
                    fmt::format("registry digest {} does not match manifest {}", digest, manifest.header.registry_digest));
    }
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        const auto tokens = store.load(r.source, *resolved[i]);
        if (tokens.size() < r.doc_token_count) {
            throw Error(ErrorCode::MissingDocument,
                        fmt::format("payload for {}/{} has {} tokens, manifest needs {}", r.source, r.document_id,
                                    tokens.size(), r.doc_token_count));
        }
        sink(r, std::span<const std::uint32_t>(tokens.data(), r.doc_token_count));
    }
}

std::string replay_bytes(const SampleManifest& manifest, const DocumentRegistry& registry, const TokenStore& store) {
    std::string out;
    replay(manifest, registry, store, [&](const ManifestRecord&, std::span<const std::uint32_t> tokens) {
        for (const auto t : tokens) {
            for (int b = 0; b < 4; ++b) {
                out.push_back(static_cast<char>((t >> (8 * b)) & 0xFF));
            }
        }
    });
    return out;
}

void write_manifest(std::ostream& out, const SampleManifest& m) {
    nlohmann::json header{{"format", "cptkit-manifest"},
                          {"version", 1},
                          {"plan_digest", m.header.plan_digest},
                          {"registry_digest", m.header.registry_digest},
                          {"seed", m.header.seed},
                          {"total_tokens", m.header.total_tokens},
                          {"switch_token", m.header.switch_token},
                          {"order_algorithm", m.header.order_algorithm},
                          {"order", order_name(m.header.order)}};
    out << header.dump() << '\n';
    // Same bytes as dumping a json object (keys sorted), without building one per record.
    std::string buf;
    for (const auto& r : m.records) {
        buf.clear();
        fmt::format_to(std::back_inserter(buf),
                       "{{\"doc_token_count\":{},\"document_id\":{},\"epoch_index\":{},\"global_token_offset\":{},"
                       "\"phase\":\"{}\",\"source\":{}}}\n",
                       r.doc_token_count, nlohmann::json(r.document_id).dump(), r.epoch_index, r.global_token_offset,
                       to_string(r.phase), nlohmann::json(r.source).dump());
        out << buf;
    }
}

SampleManifest read_manifest(std::istream& in) {
    SampleManifest m;
    std::string line;
    std::size_t line_no = 0;
    try {
        if (!std::getline(in, line)) {
            throw Error(ErrorCode::Format, "manifest is empty");
        }
        ++line_no;
        const auto h = nlohmann::json::parse(line);
        if (h.value("format", std::string{}) != "cptkit-manifest") {
            throw Error(ErrorCode::Format, "manifest header is missing format=cptkit-manifest");
        }
        m.header.plan_digest = h.at("plan_digest").get<std::string>();
        m.header.registry_digest = h.at("registry_digest").get<std::string>();
        m.header.seed = h.at("seed").get<std::uint64_t>();
        m.header.total_tokens = h.at("total_tokens").get<TokenCount>();
        m.header.switch_token = h.at("switch_token").get<TokenCount>();
        m.header.order_algorithm = h.at("order_algorithm").get<std::string>();
        m.header.order = h.at("order").get<std::string>() == "sequential" ? DocumentOrder::Sequential : DocumentOrder::Shuffled;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            const auto j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.global_token_offset = j.at("global_token_offset").get<TokenCount>();
            r.source = j.at("source").get<std::string>();
            r.document_id = j.at("document_id").get<std::string>();
            r.doc_token_count = j.at("doc_token_count").get<TokenCount>();
            r.epoch_index = j.at("epoch_index").get<std::uint32_t>();
            r.phase = parse_phase(j.at("phase").get<std::string>());
            m.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Format, fmt::format("manifest line {}: {}", line_no, e.what()));
    }
    return m;
}

std::string manifest_digest(const SampleManifest& manifest) {
    std::ostringstream os;
    write_manifest(os, manifest);
    return sha256_hex(os.str());
}

}  // namespace cptkit
