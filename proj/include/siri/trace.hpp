#pragma once

/**
 * Interpretability trace.
 *
 * Every model call and every pipeline decision becomes a TraceEvent. Events
 * are numbered per sample and kept in memory; with a sink path configured
 * they are also appended to a JSONL file when the sample finishes.
 *
 * Model-call events carry the full request key and the raw backend
 * response, which is what to_fixture() turns back into replay records.
 */

#include "siri/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace siri {

inline constexpr int kTraceSchemaVersion = 1;

enum class Stage {
    candidates,
    caption,
    issues,
    issue_candidates,
    hypotheses,
    scores,
    words,
    reanswer,
    pool,
    vote,
    gate,
    error,
};

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& s);

struct TraceEvent {
    std::string sample_id;
    Stage stage = Stage::error;
    nlohmann::json payload;
    std::uint64_t sequence = 0;
    std::string timestamp;
};

nlohmann::json to_json(const TraceEvent& ev);
TraceEvent trace_event_from_json(const nlohmann::json& j);

class TraceStore {
public:
    /// In-memory only.
    TraceStore() = default;
    /// Also appends to `sink_path` (truncated on construction) on flush().
    explicit TraceStore(std::string sink_path);

    TraceStore(const TraceStore&) = delete;
    TraceStore& operator=(const TraceStore&) = delete;

    void record(const std::string& sample_id, Stage stage, nlohmann::json payload);
    /// Events of one sample in sequence order.
    std::vector<TraceEvent> export_sample(const std::string& sample_id) const;
    std::vector<std::string> sample_ids() const;
    /// Writes the sample's not-yet-written events to the sink. Throws StorageError.
    void flush(const std::string& sample_id);

    /// Reads a JSONL trace file. Throws SchemaError / StorageError.
    static std::vector<TraceEvent> load(const std::string& path);

private:
    struct SampleLog {
        std::vector<TraceEvent> events;
        std::size_t flushed = 0;
    };

    std::string sink_path_;
    mutable std::mutex mutex_;
    std::map<std::string, SampleLog> samples_;
    std::mutex sink_mutex_;
};

/// Per-sample handle the agents record through. A default-constructed
/// tracer drops everything.
class Tracer {
public:
    Tracer() = default;
    Tracer(TraceStore* store, std::string sample_id) : store_(store), sample_id_(std::move(sample_id)) {}

    void operator()(Stage stage, nlohmann::json payload) const {
        if (store_ != nullptr) store_->record(sample_id_, stage, std::move(payload));
    }
    const std::string& sample_id() const { return sample_id_; }

private:
    TraceStore* store_ = nullptr;
    std::string sample_id_;
};

/// Decorator that records each call (request key, digest, raw response or
/// error) as a model-call event under `stage`.
class TracedBackend final : public ModelBackend {
public:
    TracedBackend(ModelBackend& inner, const Tracer& tracer, Stage stage)
        : inner_(inner), tracer_(tracer), stage_(stage) {}

    const BackendDescriptor& descriptor() const override { return inner_.descriptor(); }
    ModelResponse generate(const GenerationRequest& req) override;

private:
    ModelBackend& inner_;
    const Tracer& tracer_;
    Stage stage_;
};

/// Every successful model call in `events` as a fixture record.
FixtureStore to_fixture(const std::vector<TraceEvent>& events);

/// Events with timestamps dropped; what replay must reproduce exactly.
nlohmann::json trace_payloads(const std::vector<TraceEvent>& events);

/// Human-readable case study of one sample: question, candidates, caption,
/// each issue with its hypotheses and confidence words, re-answers, pool,
/// final vote.
std::string render_case_study(const std::vector<TraceEvent>& events);

}  // namespace siri
