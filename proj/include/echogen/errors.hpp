// Copyright (C) 2026 echogen contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace echogen {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid numeric parameter or range (schedules, guidance scales, quantiles).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Tensor shape or rank violates an operation contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A latent or checkpoint was produced by a different codec than the one in use.
class CodecMismatchError : public Error {
public:
    using Error::Error;
};

/// Missing, unreadable or insufficient data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Training failed to make progress or produced non-finite values.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent checkpoint file.
class CheckpointError : public Error {
public:
    using Error::Error;
};

/// A block of an autoregressive chain failed; carries the block index.
class BlockSamplingError : public Error {
public:
    BlockSamplingError(int64_t block, const std::string& what)
        : Error("block " + std::to_string(block) + ": " + what), block_(block) {}
    int64_t block() const noexcept { return block_; }

private:
    int64_t block_;
};

/// Configuration validation failure listing every offending field.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    std::vector<std::string> problems_;
};

/// A pipeline stage failed; names the stage.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace echogen
