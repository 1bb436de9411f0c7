// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace optiprune {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes disagree. The message names the offending axes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A numeric or structural precondition was violated (zero-norm row,
/// non-positive sigma, bad subject list, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value; `field()` holds the dotted key path.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Filesystem failure; `path()` holds the path that could not be used.
class IoError : public Error {
public:
    IoError(std::string path, const std::string& what)
        : Error(what + ": " + path), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace optiprune
