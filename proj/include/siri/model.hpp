#pragma once

/**
 * Model backends.
 *
 * Every model call in the engine goes through ModelBackend::generate(). The
 * concrete backends are:
 *
 *   HttpBackend     - OpenAI-compatible chat-completions over HTTP(S)
 *   FixtureBackend  - replays recorded responses keyed by request digest
 *
 * and the decorators CachedBackend (persistent response cache),
 * RecordingBackend (captures a session as fixture records) and
 * LimitedBackend (bounds in-flight requests).
 *
 * vlm_generate() and llm_complete() wrap generate() with the per-kind
 * contract: candidate lists come back sorted by confidence and truncated to K;
 * completions come back with trailing whitespace stripped.
 */

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

namespace siri {

enum class BackendKind { vlm, llm };

std::string to_string(BackendKind kind);
BackendKind backend_kind_from_string(const std::string& s);

struct RequestParams {
    double temperature = 0.0;
    int max_tokens = 64;
    bool supports_candidate_count = true;
    /// Longest prompt the backend accepts, in bytes. 0 means unbounded.
    std::size_t max_prompt_chars = 0;
};

struct BackendDescriptor {
    BackendKind kind = BackendKind::vlm;
    /// Base URL of a chat-completions service, e.g. "http://localhost:8000/v1".
    std::string endpoint;
    /// JSONL fixture file. When set the backend never touches the network.
    std::string fixture_path;
    std::string model;
    RequestParams params;

    bool is_fixture() const { return !fixture_path.empty(); }
    /// Throws std::invalid_argument when an invariant is broken.
    void validate() const;
};

struct ScoredAnswer {
    std::string text;
    double confidence = 0.0;

    bool operator==(const ScoredAnswer&) const = default;
};

/// Content-addressed image handle. The digest is the SHA-256 of the raw bytes.
class ImageRef {
public:
    ImageRef() = default;
    static ImageRef from_bytes(std::string bytes);
    /// Reads the file once to compute the digest; bytes are reloaded on demand.
    static ImageRef from_file(const std::string& path);

    const std::string& digest() const { return digest_; }
    const std::string& path() const { return path_; }
    std::string bytes() const;
    bool empty() const { return digest_.empty(); }

private:
    std::string digest_;
    std::string path_;
    std::shared_ptr<const std::string> bytes_;
};

struct GenerationRequest {
    std::string prompt;
    std::optional<ImageRef> image;
    int candidate_count = 1;
};

/// A VLM answers with scored candidates, an LLM with raw text.
using ModelResponse = std::variant<std::vector<ScoredAnswer>, std::string>;

nlohmann::json response_to_json(const ModelResponse& response);
ModelResponse response_from_json(const nlohmann::json& j);

/// The identity of a request: everything that influences the response.
nlohmann::json request_key(const BackendDescriptor& backend, const GenerationRequest& req);
/// Hex SHA-256 over the canonical serialization of request_key().
std::string request_digest(const BackendDescriptor& backend, const GenerationRequest& req);

class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual const BackendDescriptor& descriptor() const = 0;
    /// Raw call. Implementations must be safe for concurrent use.
    virtual ModelResponse generate(const GenerationRequest& req) = 0;
};

std::vector<ScoredAnswer> vlm_generate(ModelBackend& backend, const GenerationRequest& req);
std::string llm_complete(ModelBackend& backend, const GenerationRequest& req);

// ---------------------------------------------------------------------------
// Fixtures

struct FixtureRecord {
    std::string digest;
    /// request_key() of the originating call; informational, kept for diffs.
    nlohmann::json request;
    ModelResponse response;
    std::string recorded_at;
};

nlohmann::json fixture_to_json(const FixtureRecord& rec);
/// Records without a digest but with a request object get their digest computed.
FixtureRecord fixture_from_json(const nlohmann::json& j);

/// Digest-indexed set of fixture records. Thread-safe.
class FixtureStore {
public:
    FixtureStore() = default;
    FixtureStore(FixtureStore&& other) noexcept;
    FixtureStore& operator=(FixtureStore&& other) noexcept;

    static FixtureStore load(const std::string& path);

    void add(FixtureRecord rec);
    std::optional<FixtureRecord> find(const std::string& digest) const;
    std::size_t size() const;
    /// Records sorted by digest, so saved files are stable.
    std::vector<FixtureRecord> records() const;
    void save(const std::string& path) const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, FixtureRecord> records_;
};

class FixtureBackend final : public ModelBackend {
public:
    FixtureBackend(BackendDescriptor descriptor, std::shared_ptr<const FixtureStore> store);
    /// Loads descriptor.fixture_path.
    explicit FixtureBackend(BackendDescriptor descriptor);

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    ModelResponse generate(const GenerationRequest& req) override;

private:
    BackendDescriptor descriptor_;
    std::shared_ptr<const FixtureStore> store_;
};

// ---------------------------------------------------------------------------
// HTTP

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::seconds timeout{120};
    /// Replaceable so tests do not sleep.
    std::function<void(std::chrono::milliseconds)> sleep;
};

/// Chat-completions request body for one generation request.
nlohmann::json build_chat_request(const BackendDescriptor& backend, const GenerationRequest& req);
/// Parses a chat-completions response body. Throws ProtocolError.
ModelResponse parse_chat_response(BackendKind kind, const nlohmann::json& body);
/// Inverse of parse_chat_response, the schema fixture responses are served with.
nlohmann::json to_chat_response(const ModelResponse& response, const std::string& model);

class HttpBackend final : public ModelBackend {
public:
    HttpBackend(BackendDescriptor descriptor, std::string api_key, RetryPolicy retry = {});

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    ModelResponse generate(const GenerationRequest& req) override;

private:
    BackendDescriptor descriptor_;
    std::string api_key_;
    RetryPolicy retry_;
};

// ---------------------------------------------------------------------------
// Cache and decorators

/// Digest-keyed response cache, in memory and optionally on disk.
/// Disk layout: <dir>/<digest[0:2]>/<digest>.json, one record per file.
class ResponseCache {
public:
    ResponseCache() = default;
    explicit ResponseCache(std::string directory);

    std::optional<ModelResponse> get(const std::string& digest) const;
    /// Throws StorageError when the disk write fails; the in-memory entry is kept.
    void put(const std::string& digest, const ModelResponse& response);

    const std::string& directory() const { return dir_; }

private:
    std::string path_for(const std::string& digest) const;

    std::string dir_;
    mutable std::shared_mutex mutex_;
    mutable std::map<std::string, ModelResponse> memory_;
};

class CachedBackend final : public ModelBackend {
public:
    using StorageErrorHook = std::function<void(const std::string&)>;

    CachedBackend(std::shared_ptr<ModelBackend> inner, std::shared_ptr<ResponseCache> cache,
                  StorageErrorHook on_storage_error = {});

    const BackendDescriptor& descriptor() const override { return inner_->descriptor(); }
    ModelResponse generate(const GenerationRequest& req) override;

    std::size_t hits() const;
    std::size_t storage_errors() const;

private:
    std::shared_ptr<ModelBackend> inner_;
    std::shared_ptr<ResponseCache> cache_;
    StorageErrorHook on_storage_error_;
    mutable std::mutex stats_mutex_;
    std::size_t hits_ = 0;
    std::size_t storage_errors_ = 0;
};

/// Captures every call as a FixtureRecord in a shared store.
class RecordingBackend final : public ModelBackend {
public:
    RecordingBackend(std::shared_ptr<ModelBackend> inner, std::shared_ptr<FixtureStore> sink);

    const BackendDescriptor& descriptor() const override { return inner_->descriptor(); }
    ModelResponse generate(const GenerationRequest& req) override;

private:
    std::shared_ptr<ModelBackend> inner_;
    std::shared_ptr<FixtureStore> sink_;
};

/// Bounds the number of concurrent generate() calls on the wrapped backend.
class LimitedBackend final : public ModelBackend {
public:
    LimitedBackend(std::shared_ptr<ModelBackend> inner, int max_in_flight);

    const BackendDescriptor& descriptor() const override { return inner_->descriptor(); }
    ModelResponse generate(const GenerationRequest& req) override;

private:
    std::shared_ptr<ModelBackend> inner_;
    std::counting_semaphore<1024> slots_;
};

}  // namespace siri
