#pragma once

#include <stdexcept>
#include <string>

namespace kgforge {

// Base class for all library errors. Subcommands map these to exit code 1
// (validation) or 2 (runtime) depending on where they surface.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DuplicateLabel : public Error {
  public:
    explicit DuplicateLabel(const std::string& label)
        : Error("duplicate label: " + label) {}
};

class VocabularyMiss : public Error {
  public:
    explicit VocabularyMiss(const std::string& what) : Error("vocabulary miss: " + what) {}
};

class SequenceTooLong : public Error {
  public:
    explicit SequenceTooLong(const std::string& what) : Error("sequence too long: " + what) {}
};

class ParseError : public Error {
  public:
    ParseError(const std::string& file, int line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what) {}
};

class UnknownDataset : public Error {
  public:
    explicit UnknownDataset(const std::string& id) : Error("unknown dataset: " + id) {}
};

class ShapeError : public Error {
  public:
    explicit ShapeError(const std::string& what) : Error("shape mismatch: " + what) {}
};

class NonFiniteGradient : public Error {
  public:
    explicit NonFiniteGradient(const std::string& what)
        : Error("non-finite gradient: " + what) {}
};

class EmptyMask : public Error {
  public:
    EmptyMask() : Error("loss mask excludes every position") {}
};

class DegenerateDistribution : public Error {
  public:
    explicit DegenerateDistribution(const std::string& what)
        : Error("degenerate distribution: " + what) {}
};

class InvalidPin : public Error {
  public:
    explicit InvalidPin(const std::string& what) : Error("invalid pin: " + what) {}
};

class CheckpointVersionError : public Error {
  public:
    explicit CheckpointVersionError(const std::string& what)
        : Error("checkpoint mismatch: " + what) {}
};

class CorruptCheckpoint : public Error {
  public:
    explicit CorruptCheckpoint(const std::string& what)
        : Error("corrupt checkpoint: " + what) {}
};

class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

}  // namespace kgforge
