#pragma once

#include <stdexcept>
#include <string>

namespace siri {

/// Root of every error the engine raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Network failure or timeout talking to a remote model. Retryable.
class TransportError : public Error {
public:
    TransportError(const std::string& what, int attempts)
        : Error(what + " (after " + std::to_string(attempts) + " attempt" + (attempts == 1 ? "" : "s") + ")"),
          attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// The remote answered, but the answer is unusable.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// A fixture backend has no record for the request digest.
class FixtureMissError : public Error {
public:
    FixtureMissError(const std::string& digest, const std::string& detail)
        : Error("fixture miss for digest " + digest + (detail.empty() ? "" : ": " + detail)), digest_(digest) {}

    const std::string& digest() const noexcept { return digest_; }

private:
    std::string digest_;
};

/// LLM output could not be turned into the structure a stage needs.
class ParseError : public Error {
public:
    using Error::Error;
};

/// The VLM could not produce K distinct candidates and nothing could pad them.
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// Malformed dataset, fixture or config file.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Cache or trace storage failed.
class StorageError : public Error {
public:
    using Error::Error;
};

/// Results and samples do not line up.
class MismatchError : public Error {
public:
    using Error::Error;
};

}  // namespace siri
