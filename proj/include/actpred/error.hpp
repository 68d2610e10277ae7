#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace actpred {

/// Root of every error raised by the library. `kind()` is a stable short tag
/// used by the CLI when it emits structured error records.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("parse", "line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public Error {
public:
    SchemaError(std::string field, const std::string& what)
        : Error("schema", what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class CorruptFileError : public Error {
public:
    explicit CorruptFileError(const std::string& what) : Error("corrupt_file", what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& what) : Error("training", what) {}
};

class NoVotesError : public Error {
public:
    NoVotesError() : Error("no_votes", "vote record has no votes") {}
};

class GenerationError : public Error {
public:
    GenerationError(std::size_t index, const std::string& what)
        : Error("generation", "thread " + std::to_string(index) + ": " + what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class ScoringError : public Error {
public:
    explicit ScoringError(const std::string& what) : Error("scoring", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

} // namespace actpred
