// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace cptkit {

/// Incremental SHA-256, hex-encoded on finish().
class Digest {
public:
    Digest();
    ~Digest();
    Digest(const Digest&) = delete;
    Digest& operator=(const Digest&) = delete;

    Digest& update(std::span<const std::byte> bytes);
    Digest& update(std::string_view text);
    std::string finish();

private:
    void* mCtx;
};

std::string sha256_hex(std::string_view text);

}  // namespace cptkit
