// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/digest.hpp"

#include <array>

#include <openssl/evp.h>

#include "cptkit/error.hpp"

namespace cptkit {

Digest::Digest() : mCtx(EVP_MD_CTX_new()) {
    if (mCtx == nullptr || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(mCtx), EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::Io, "failed to initialise SHA-256 context");
    }
}

Digest::~Digest() {
    EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(mCtx));
}

Digest& Digest::update(std::span<const std::byte> bytes) {
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(mCtx), bytes.data(), bytes.size());
    return *this;
}

Digest& Digest::update(std::string_view text) {
    return update(std::as_bytes(std::span(text.data(), text.size())));
}

std::string Digest::finish() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(mCtx), md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[md[i] >> 4]);
        out.push_back(kHex[md[i] & 0xF]);
    }
    return out;
}

std::string sha256_hex(std::string_view text) {
    Digest d;
    d.update(text);
    return d.finish();
}

}  // namespace cptkit
