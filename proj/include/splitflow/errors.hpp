// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace splitflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes or dimensions of operands do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A scalar argument lies outside its admissible range.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: schedules, empty lists, missing files, bad keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Cached state does not belong to the object it is used with.
class StateError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf appeared during an iterative run.
class NumericError : public Error {
public:
    NumericError(const std::string& what, int step) : Error(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

/// Training loss became non-finite.
class TrainingError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Transport-level failure talking to an external service.
class NetworkError : public Error {
public:
    using Error::Error;
};

/// A reply from an external service could not be interpreted.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

}  // namespace splitflow
