// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/quality.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <fmt/core.h>
#include <json.hpp>

#include "cptkit/digest.hpp"
#include "cptkit/error.hpp"

namespace cptkit {

namespace {

constexpr double kFallbackDiscount = 0.75;
constexpr int kMaxOrder = 16;
constexpr char kModelMagic[8] = {'C', 'P', 'T', 'K', 'N', 'G', 'M', '\0'};
constexpr std::uint32_t kModelVersion = 1;

std::vector<TokenId> padded(const NgramModel& model, const std::vector<std::string>& sentence) {
    std::vector<TokenId> ids;
    ids.reserve(sentence.size() + 2);
    ids.push_back(kBosId);
    for (const auto& w : sentence) {
        ids.push_back(model.id_of(w));
    }
    if (model.options().sentence_end) {
        ids.push_back(kEosId);
    }
    return ids;
}

// ---- little-endian io ----

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(out, bits);
}

class Reader {
public:
    explicit Reader(std::string_view data) : mData(data) {}

    std::uint64_t u64() { return read_le(8); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }
    double f64() {
        const std::uint64_t bits = u64();
        double v = 0.0;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto out = mData.substr(mPos, n);
        mPos += n;
        return out;
    }
    [[nodiscard]] std::size_t pos() const noexcept { return mPos; }

private:
    void need(std::size_t n) const {
        if (mPos + n > mData.size()) {
            throw Error(ErrorCode::Format, fmt::format("model file truncated at byte {}", mPos));
        }
    }
    std::uint64_t read_le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(mData[mPos + i])) << (8 * i);
        }
        mPos += static_cast<std::size_t>(n);
        return v;
    }

    std::string_view mData;
    std::size_t mPos = 0;
};

std::string serialize_payload(const NgramModel& m) {
    std::string out(kModelMagic, sizeof kModelMagic);
    put_u32(out, kModelVersion);
    put_u32(out, static_cast<std::uint32_t>(m.order()));
    put_u32(out, m.options().sentence_end ? 1U : 0U);
    put_u32(out, static_cast<std::uint32_t>(m.words().size()));
    for (const auto& w : m.words()) {
        put_u32(out, static_cast<std::uint32_t>(w.size()));
        out += w;
    }
    for (const double d : m.discounts()) {
        put_f64(out, d);
    }
    for (int k = 1; k <= m.order(); ++k) {
        std::vector<std::pair<std::vector<TokenId>, std::uint64_t>> rows(m.counts(k).begin(), m.counts(k).end());
        std::sort(rows.begin(), rows.end());
        put_u64(out, rows.size());
        for (const auto& [key, count] : rows) {
            for (const TokenId id : key) {
                put_u32(out, id);
            }
            put_u64(out, count);
        }
    }
    return out;
}

}  // namespace

std::size_t NgramKeyHash::operator()(const std::vector<TokenId>& key) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const TokenId id : key) {
        h ^= id;
        h *= 0x100000001b3ULL;
        h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
}

TokenId NgramModel::id_of(std::string_view word) const {
    auto it = mIds.find(std::string(word));
    return it == mIds.end() ? kUnkId : it->second;
}

double NgramModel::interpolate(std::span<const TokenId> context, TokenId word) const {
    const auto k = context.size() + 1;
    if (k == 1) {
        const auto& stats = mContexts[0].at({});
        const double d = mDiscounts[0];
        const auto it = mCounts[0].find({word});
        const double count = it == mCounts[0].end() ? 0.0 : static_cast<double>(it->second);
        const double total = static_cast<double>(stats.total);
        return std::max(count - d, 0.0) / total +
               d * static_cast<double>(stats.types) / total / static_cast<double>(mPredictable.size());
    }
    const double lower = interpolate(context.subspan(1), word);
    const std::vector<TokenId> ctx(context.begin(), context.end());
    const auto cit = mContexts[k - 1].find(ctx);
    if (cit == mContexts[k - 1].end() || cit->second.total == 0) {
        return lower;
    }
    std::vector<TokenId> gram = ctx;
    gram.push_back(word);
    const auto git = mCounts[k - 1].find(gram);
    const double count = git == mCounts[k - 1].end() ? 0.0 : static_cast<double>(git->second);
    const double d = mDiscounts[k - 1];
    const double total = static_cast<double>(cit->second.total);
    return std::max(count - d, 0.0) / total + d * static_cast<double>(cit->second.types) / total * lower;
}

double NgramModel::probability(std::span<const TokenId> context, TokenId word) const {
    const auto keep = std::min<std::size_t>(context.size(), static_cast<std::size_t>(order() - 1));
    return interpolate(context.subspan(context.size() - keep), word);
}

void NgramModel::finalize() {
    mPredictable.clear();
    for (TokenId id = 0; id < mWords.size(); ++id) {
        if (id == kBosId || (id == kEosId && !mOptions.sentence_end)) {
            continue;
        }
        mPredictable.push_back(id);
    }
    mContexts.assign(static_cast<std::size_t>(order()), {});
    mContexts[0][{}];
    for (int k = 1; k <= order(); ++k) {
        auto& ctx = mContexts[static_cast<std::size_t>(k - 1)];
        for (const auto& [gram, count] : mCounts[static_cast<std::size_t>(k - 1)]) {
            auto& s = ctx[std::vector<TokenId>(gram.begin(), gram.end() - 1)];
            s.total += count;
            s.types += 1;
        }
    }
    mDigest = sha256_hex(serialize_payload(*this));
}

NgramModel train_ngram(const Sentences& corpus, const NgramOptions& options) {
    if (options.order < 1 || options.order > kMaxOrder) {
        throw Error(ErrorCode::DegenerateOrder, fmt::format("n-gram order {} must lie in [1, {}]", options.order, kMaxOrder));
    }
    std::size_t words = 0;
    for (const auto& s : corpus) {
        words += s.size();
    }
    if (words == 0) {
        throw Error(ErrorCode::EmptyCorpus, "reference corpus has no tokens");
    }

    NgramModel m;
    m.mOptions = options;
    m.mWords = {std::string(kUnkToken), std::string(kBosToken), std::string(kEosToken)};
    for (TokenId i = 0; i < m.mWords.size(); ++i) {
        m.mIds.emplace(m.mWords[i], i);
    }
    // vocabulary ids assigned in sorted order so the dump does not depend on corpus order
    std::set<std::string> vocab;
    for (const auto& s : corpus) {
        for (const auto& w : s) {
            if (w == kUnkToken || w == kBosToken || w == kEosToken) {
                continue;
            }
            vocab.insert(w);
        }
    }
    for (const auto& w : vocab) {
        m.mIds.emplace(w, static_cast<TokenId>(m.mWords.size()));
        m.mWords.push_back(w);
    }

    const auto n = static_cast<std::size_t>(options.order);
    m.mCounts.assign(n, {});
    // distinct (k+1)-grams for continuation counts of order k < n
    std::vector<std::unordered_set<std::vector<TokenId>, NgramKeyHash>> extended(n);
    for (const auto& sentence : corpus) {
        const auto ids = padded(m, sentence);
        for (std::size_t i = 1; i < ids.size(); ++i) {
            for (std::size_t k = 1; k <= n && k <= i + 1; ++k) {
                const std::size_t start = i + 1 - k;
                std::vector<TokenId> gram(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                          ids.begin() + static_cast<std::ptrdiff_t>(i + 1));
                if (k == n || start == 0) {
                    m.mCounts[k - 1][gram] += 1;
                }
                if (k >= 2) {
                    extended[k - 2].insert(std::move(gram));
                }
            }
        }
    }
    for (std::size_t k = 1; k < n; ++k) {
        for (const auto& longer : extended[k - 1]) {
            m.mCounts[k - 1][std::vector<TokenId>(longer.begin() + 1, longer.end())] += 1;
        }
    }

    m.mDiscounts.assign(n, kFallbackDiscount);
    for (std::size_t k = 0; k < n; ++k) {
        std::uint64_t n1 = 0;
        std::uint64_t n2 = 0;
        for (const auto& [_, c] : m.mCounts[k]) {
            n1 += c == 1 ? 1 : 0;
            n2 += c == 2 ? 1 : 0;
        }
        if (n1 > 0 && n2 > 0) {
            m.mDiscounts[k] = static_cast<double>(n1) / static_cast<double>(n1 + 2 * n2);
        }
    }
    m.finalize();
    return m;
}

double perplexity(const NgramModel& model, const std::vector<std::string>& document) {
    if (document.empty()) {
        throw Error(ErrorCode::EmptyDocument, "cannot score an empty document");
    }
    return perplexity(model, Sentences{document});
}

double perplexity(const NgramModel& model, const Sentences& sentences) {
    double log_sum = 0.0;
    std::size_t predicted = 0;
    for (const auto& sentence : sentences) {
        if (sentence.empty()) {
            continue;
        }
        const auto ids = padded(model, sentence);
        for (std::size_t i = 1; i < ids.size(); ++i) {
            log_sum += std::log(model.probability(std::span(ids.data(), i), ids[i]));
            ++predicted;
        }
    }
    if (predicted == 0) {
        throw Error(ErrorCode::EmptyDocument, "cannot score an empty document");
    }
    return std::exp(-log_sum / static_cast<double>(predicted));
}

void write_model(std::ostream& out, const NgramModel& model) {
    const auto payload = serialize_payload(model);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    const auto digest = sha256_hex(payload);
    out.write(digest.data(), static_cast<std::streamsize>(digest.size()));
}

NgramModel read_model(std::istream& in) {
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    constexpr std::size_t kDigestLen = 64;
    if (data.size() < sizeof kModelMagic + kDigestLen || std::memcmp(data.data(), kModelMagic, sizeof kModelMagic) != 0) {
        throw Error(ErrorCode::Format, "not an n-gram model file");
    }
    const std::string_view payload(data.data(), data.size() - kDigestLen);
    const std::string_view trailer(data.data() + payload.size(), kDigestLen);
    if (sha256_hex(payload) != trailer) {
        throw Error(ErrorCode::DigestMismatch, "n-gram model digest does not match its contents");
    }
    Reader r(payload);
    r.bytes(sizeof kModelMagic);
    if (const auto version = r.u32(); version != kModelVersion) {
        throw Error(ErrorCode::Format, fmt::format("unsupported model version {}", version));
    }
    NgramModel m;
    m.mOptions.order = static_cast<int>(r.u32());
    m.mOptions.sentence_end = r.u32() != 0;
    if (m.mOptions.order < 1 || m.mOptions.order > kMaxOrder) {
        throw Error(ErrorCode::Format, fmt::format("model order {} out of range", m.mOptions.order));
    }
    const auto vocab = r.u32();
    for (std::uint32_t i = 0; i < vocab; ++i) {
        const auto len = r.u32();
        m.mWords.emplace_back(r.bytes(len));
        m.mIds.emplace(m.mWords.back(), i);
    }
    const auto n = static_cast<std::size_t>(m.mOptions.order);
    for (std::size_t k = 0; k < n; ++k) {
        m.mDiscounts.push_back(r.f64());
    }
    m.mCounts.assign(n, {});
    for (std::size_t k = 1; k <= n; ++k) {
        const auto rows = r.u64();
        for (std::uint64_t row = 0; row < rows; ++row) {
            std::vector<TokenId> key(k);
            for (auto& id : key) {
                id = r.u32();
            }
            m.mCounts[k - 1][std::move(key)] = r.u64();
        }
    }
    m.finalize();
    return m;
}

std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i > start) {
            std::string w(text.substr(start, i - start));
            if (lowercase) {
                std::transform(w.begin(), w.end(), w.begin(),
                               [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            }
            out.push_back(std::move(w));
        }
    }
    return out;
}

Sentences tokenize_lines(std::string_view text, bool lowercase) {
    Sentences out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        auto words = tokenize(text.substr(start, end - start), lowercase);
        if (!words.empty()) {
            out.push_back(std::move(words));
        }
        start = end + 1;
    }
    return out;
}

// ---- Quartile filter --------------------------------------------------------------------------

namespace {

void check_scores(const std::vector<ScoredDocument>& scores, double quartile) {
    if (scores.empty()) {
        throw Error(ErrorCode::EmptyScores, "no scored documents");
    }
    if (!(quartile > 0.0 && quartile <= 1.0)) {
        throw Error(ErrorCode::InvalidParameter, fmt::format("quartile {} must lie in (0, 1]", quartile));
    }
    std::unordered_set<std::string_view> ids;
    for (const auto& s : scores) {
        if (!std::isfinite(s.perplexity) || s.perplexity <= 0.0) {
            throw Error(ErrorCode::InvalidParameter, fmt::format("perplexity of '{}' must be finite and positive", s.id));
        }
        if (!ids.insert(s.id).second) {
            throw Error(ErrorCode::InvalidParameter, fmt::format("duplicate scored document '{}'", s.id));
        }
    }
}

std::size_t selection_size(std::size_t n, double quartile) {
    // absorbs products like 100 * 0.29 = 28.999999999999996
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * quartile + 1e-9));
}

// Selects within one population; returns the threshold.
double select_lowest(std::vector<const ScoredDocument*> docs, double quartile, std::set<std::string>& selected) {
    std::sort(docs.begin(), docs.end(), [](const ScoredDocument* a, const ScoredDocument* b) {
        return a->perplexity != b->perplexity ? a->perplexity < b->perplexity : a->id < b->id;
    });
    const auto take = selection_size(docs.size(), quartile);
    double threshold = 0.0;
    for (std::size_t i = 0; i < take; ++i) {
        selected.insert(docs[i]->id);
        threshold = docs[i]->perplexity;
    }
    return threshold;
}

QualityManifest base_manifest(const std::vector<ScoredDocument>& scores, double quartile) {
    QualityManifest m;
    m.quartile = quartile;
    m.scores = scores;
    std::sort(m.scores.begin(), m.scores.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return m;
}

}  // namespace

QualityManifest quartile_filter(const std::vector<ScoredDocument>& scores, double quartile) {
    check_scores(scores, quartile);
    auto m = base_manifest(scores, quartile);
    std::vector<const ScoredDocument*> all;
    for (const auto& s : m.scores) {
        all.push_back(&s);
    }
    m.threshold = select_lowest(std::move(all), quartile, m.selected);
    return m;
}

QualityManifest quartile_filter_grouped(const std::vector<ScoredDocument>& scores, double quartile) {
    check_scores(scores, quartile);
    auto m = base_manifest(scores, quartile);
    std::map<std::string, std::vector<const ScoredDocument*>> groups;
    for (const auto& s : m.scores) {
        groups[s.group].push_back(&s);
    }
    for (auto& [group, docs] : groups) {
        const double t = select_lowest(std::move(docs), quartile, m.selected);
        m.group_thresholds[group] = t;
        m.threshold = std::max(m.threshold, t);
    }
    return m;
}

std::vector<ScoredDocument> score_documents(const NgramModel& model,
                                            const std::vector<std::pair<std::string, Sentences>>& documents,
                                            unsigned threads) {
    std::vector<ScoredDocument> out(documents.size());
    threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(documents.size(), 1))));
    std::vector<std::exception_ptr> errors(threads);
    auto work = [&](unsigned worker) {
        try {
            for (std::size_t i = worker; i < documents.size(); i += threads) {
                out[i].id = documents[i].first;
                out[i].perplexity = perplexity(model, documents[i].second);
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
    return out;
}

void write_quality_manifest(std::ostream& out, const QualityManifest& m) {
    nlohmann::json header{{"format", "cptkit-quality"},
                          {"version", 1},
                          {"model_digest", m.model_digest},
                          {"quartile", m.quartile},
                          {"threshold", m.threshold},
                          {"documents", m.scores.size()},
                          {"selected", m.selected.size()}};
    if (!m.group_thresholds.empty()) {
        header["group_thresholds"] = m.group_thresholds;
    }
    out << header.dump() << '\n';
    for (const auto& s : m.scores) {
        nlohmann::json j{{"id", s.id}, {"perplexity", s.perplexity}, {"selected", m.selected.contains(s.id)}};
        if (!s.group.empty()) {
            j["group"] = s.group;
        }
        out << j.dump() << '\n';
    }
}

QualityManifest read_quality_manifest(std::istream& in) {
    QualityManifest m;
    std::string line;
    std::size_t line_no = 0;
    try {
        if (!std::getline(in, line)) {
            throw Error(ErrorCode::ManifestEmpty, "quality manifest is empty");
        }
        ++line_no;
        const auto h = nlohmann::json::parse(line);
        if (h.value("format", std::string{}) != "cptkit-quality") {
            throw Error(ErrorCode::Format, "quality manifest header is missing format=cptkit-quality");
        }
        m.model_digest = h.at("model_digest").get<std::string>();
        m.quartile = h.at("quartile").get<double>();
        m.threshold = h.at("threshold").get<double>();
        if (h.contains("group_thresholds")) {
            m.group_thresholds = h.at("group_thresholds").get<std::map<std::string, double>>();
        }
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            const auto j = nlohmann::json::parse(line);
            ScoredDocument s{j.at("id").get<std::string>(), j.at("perplexity").get<double>(), j.value("group", std::string{})};
            if (j.at("selected").get<bool>()) {
                m.selected.insert(s.id);
            }
            m.scores.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Format, fmt::format("quality manifest line {}: {}", line_no, e.what()));
    }
    return m;
}

std::string quality_manifest_digest(const QualityManifest& manifest) {
    std::ostringstream os;
    write_quality_manifest(os, manifest);
    return sha256_hex(os.str());
}

DocumentSubset to_document_subset(const QualityManifest& manifest, const std::vector<Document>* documents) {
    DocumentSubset subset;
    subset.origin = quality_manifest_digest(manifest);
    subset.document_ids = manifest.selected;
    if (documents != nullptr) {
        TokenCount total = 0;
        for (const auto& d : *documents) {
            if (subset.document_ids.contains(d.id)) {
                total += d.token_count;
            }
        }
        subset.token_count = total;
    }
    return subset;
}

}  // namespace cptkit
