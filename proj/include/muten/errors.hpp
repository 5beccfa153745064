#pragma once

#include <stdexcept>
#include <string>

namespace muten {

// Root of every error the library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* code() const noexcept { return "error"; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "shape"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "config"; }
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::size_t epoch)
        : Error(what), epoch_(epoch) {}
    std::size_t epoch() const noexcept { return epoch_; }
    const char* code() const noexcept override { return "training"; }

private:
    std::size_t epoch_;
};

class IoError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "io"; }
};

// Model container errors. Each failure mode has its own type so callers can
// tell a stale file from a damaged one.
class FormatError : public IoError {
public:
    using IoError::IoError;
    const char* code() const noexcept override { return "format"; }
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
    const char* code() const noexcept override { return "version"; }
};

class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
    const char* code() const noexcept override { return "checksum"; }
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
    const char* code() const noexcept override { return "truncated"; }
};

class DatasetError : public IoError {
public:
    using IoError::IoError;
    const char* code() const noexcept override { return "dataset"; }
};

class DegenerateMutation : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "degenerate_mutation"; }
};

class UndefinedSimilarity : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "undefined_similarity"; }
};

}  // namespace muten
