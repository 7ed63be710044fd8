// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cptkit {

enum class ErrorCode {
    InvalidParameter,
    OutOfRange,
    UnreachableTarget,
    EmptyBlend,
    Overlap,
    UnknownSource,
    ManifestEmpty,
    ZeroSizeSource,
    NoOtherSources,
    DegeneratePhase,
    MissingInventory,
    DigestMismatch,
    MissingDocument,
    EmptyCorpus,
    DegenerateOrder,
    EmptyDocument,
    EmptyScores,
    ZeroNorm,
    NonFinite,
    DimensionMismatch,
    KOutOfRange,
    UnknownDocument,
    EmptyMiningResult,
    Format,
    Io,
};

/// Stable kebab-case name used in machine-readable error records.
std::string_view error_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message) : std::runtime_error(message), mCode(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return mCode; }

private:
    ErrorCode mCode;
};

}  // namespace cptkit
