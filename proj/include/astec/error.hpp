// Copyright 2026 The astec-xmc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace astec {

enum class ErrorCode {
    MalformedHeader,
    IndexOutOfRange,
    NonFiniteValue,
    DuplicateFeature,
    InvalidParam,
    ShapeMismatch,
    DimMismatch,
    DegenerateInput,
    UncoveredLabel,
    ConfigError,
    NonFiniteLoss,
    MissingShortlist,
    LabelSpaceMismatch,
    MissingPropensity,
    BoundViolated,
    StagePrereqMissing,
    IncompleteBundle,
    IoError,
    FormatError,
};

inline std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::DuplicateFeature: return "DuplicateFeature";
        case ErrorCode::InvalidParam: return "InvalidParam";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::UncoveredLabel: return "UncoveredLabel";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::MissingShortlist: return "MissingShortlist";
        case ErrorCode::LabelSpaceMismatch: return "LabelSpaceMismatch";
        case ErrorCode::MissingPropensity: return "MissingPropensity";
        case ErrorCode::BoundViolated: return "BoundViolated";
        case ErrorCode::StagePrereqMissing: return "StagePrereqMissing";
        case ErrorCode::IncompleteBundle: return "IncompleteBundle";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::FormatError: return "FormatError";
    }
    return "Unknown";
}

/// Exception carrying a machine-readable code. `line` and `id` are set for
/// file-format errors (1-based data line, offending id) and are zero otherwise.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what, std::size_t line = 0, std::uint64_t id = 0)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), line_(line), id_(id) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    [[nodiscard]] std::size_t line() const noexcept { return line_; }
    [[nodiscard]] std::uint64_t id() const noexcept { return id_; }

  private:
    ErrorCode code_;
    std::size_t line_;
    std::uint64_t id_;
};

/// Process exit code for an error: 2 config, 3 data, 4 numeric.
inline int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ConfigError:
        case ErrorCode::InvalidParam:
        case ErrorCode::StagePrereqMissing:
        case ErrorCode::IncompleteBundle:
            return 2;
        case ErrorCode::NonFiniteLoss:
        case ErrorCode::BoundViolated:
            return 4;
        default:
            return 3;
    }
}

}  // namespace astec
