// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/error.hpp"

namespace cptkit {

std::string_view error_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidParameter: return "invalid-parameter";
        case ErrorCode::OutOfRange: return "out-of-range";
        case ErrorCode::UnreachableTarget: return "unreachable-target";
        case ErrorCode::EmptyBlend: return "empty-blend";
        case ErrorCode::Overlap: return "overlap";
        case ErrorCode::UnknownSource: return "unknown-source";
        case ErrorCode::ManifestEmpty: return "manifest-empty";
        case ErrorCode::ZeroSizeSource: return "zero-size-source";
        case ErrorCode::NoOtherSources: return "no-other-sources";
        case ErrorCode::DegeneratePhase: return "degenerate-phase";
        case ErrorCode::MissingInventory: return "missing-inventory";
        case ErrorCode::DigestMismatch: return "digest-mismatch";
        case ErrorCode::MissingDocument: return "missing-document";
        case ErrorCode::EmptyCorpus: return "empty-corpus";
        case ErrorCode::DegenerateOrder: return "degenerate-order";
        case ErrorCode::EmptyDocument: return "empty-document";
        case ErrorCode::EmptyScores: return "empty-scores";
        case ErrorCode::ZeroNorm: return "zero-norm";
        case ErrorCode::NonFinite: return "non-finite";
        case ErrorCode::DimensionMismatch: return "dimension-mismatch";
        case ErrorCode::KOutOfRange: return "k-out-of-range";
        case ErrorCode::UnknownDocument: return "unknown-document";
        case ErrorCode::EmptyMiningResult: return "empty-mining-result";
        case ErrorCode::Format: return "format";
        case ErrorCode::Io: return "io";
    }
    return "unknown";
}

}  // namespace cptkit
