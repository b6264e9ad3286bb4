#include "siri/trace.hpp"

#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <array>
#include <fstream>
#include <sstream>

namespace siri {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Stage, const char*>, 12> kStageNames{{
    {Stage::candidates, "candidates"},
    {Stage::caption, "caption"},
    {Stage::issues, "issues"},
    {Stage::issue_candidates, "issue-candidates"},
    {Stage::hypotheses, "hypotheses"},
    {Stage::scores, "scores"},
    {Stage::words, "words"},
    {Stage::reanswer, "reanswer"},
    {Stage::pool, "pool"},
    {Stage::vote, "vote"},
    {Stage::gate, "gate"},
    {Stage::error, "error"},
}};

}  // namespace

std::string to_string(Stage stage) {
    for (const auto& [s, name] : kStageNames) {
        if (s == stage) return name;
    }
    return "error";
}

Stage stage_from_string(const std::string& s) {
    for (const auto& [stage, name] : kStageNames) {
        if (s == name) return stage;
    }
    throw SchemaError("unknown trace stage '" + s + "'");
}

json to_json(const TraceEvent& ev) {
    return {
        {"v", kTraceSchemaVersion},
        {"sample_id", ev.sample_id},
        {"seq", ev.sequence},
        {"stage", to_string(ev.stage)},
        {"payload", ev.payload},
        {"ts", ev.timestamp},
    };
}

TraceEvent trace_event_from_json(const json& j) {
    try {
        const int version = j.value("v", kTraceSchemaVersion);
        if (version != kTraceSchemaVersion) throw SchemaError("unsupported trace schema version " + std::to_string(version));
        TraceEvent ev;
        ev.sample_id = j.at("sample_id").get<std::string>();
        ev.sequence = j.at("seq").get<std::uint64_t>();
        ev.stage = stage_from_string(j.at("stage").get<std::string>());
        ev.payload = j.at("payload");
        ev.timestamp = j.value("ts", std::string{});
        return ev;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed trace event: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

TraceStore::TraceStore(std::string sink_path) : sink_path_(std::move(sink_path)) {
    std::ofstream out(sink_path_, std::ios::trunc);
    if (!out) throw StorageError("cannot open trace sink " + sink_path_);
}

void TraceStore::record(const std::string& sample_id, Stage stage, json payload) {
    std::lock_guard lock(mutex_);
    auto& log = samples_[sample_id];
    TraceEvent ev;
    ev.sample_id = sample_id;
    ev.stage = stage;
    ev.payload = std::move(payload);
    ev.sequence = log.events.size() + 1;
    ev.timestamp = utc_timestamp();
    log.events.push_back(std::move(ev));
}

std::vector<TraceEvent> TraceStore::export_sample(const std::string& sample_id) const {
    std::lock_guard lock(mutex_);
    auto it = samples_.find(sample_id);
    if (it == samples_.end()) return {};
    return it->second.events;
}

std::vector<std::string> TraceStore::sample_ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> ids;
    ids.reserve(samples_.size());
    for (const auto& [id, _] : samples_) ids.push_back(id);
    return ids;
}

void TraceStore::flush(const std::string& sample_id) {
    std::string lines;
    {
        std::lock_guard lock(mutex_);
        auto it = samples_.find(sample_id);
        if (it == samples_.end()) return;
        auto& log = it->second;
        for (std::size_t i = log.flushed; i < log.events.size(); ++i) lines += to_json(log.events[i]).dump() + "\n";
        log.flushed = log.events.size();
    }
    if (sink_path_.empty() || lines.empty()) return;
    std::lock_guard lock(sink_mutex_);
    std::ofstream out(sink_path_, std::ios::app);
    out << lines;
    out.flush();
    if (!out) throw StorageError("trace sink write failed: " + sink_path_);
}

std::vector<TraceEvent> TraceStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open trace file " + path);
    std::vector<TraceEvent> events;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            events.push_back(trace_event_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const SchemaError& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return events;
}

// ---------------------------------------------------------------------------

ModelResponse TracedBackend::generate(const GenerationRequest& req) {
    const auto& desc = inner_.descriptor();
    json payload = {
        {"event", "model_call"},
        {"request", request_key(desc, req)},
        {"digest", request_digest(desc, req)},
    };
    try {
        auto response = inner_.generate(req);
        payload["response"] = response_to_json(response);
        tracer_(stage_, std::move(payload));
        return response;
    } catch (const std::exception& e) {
        payload["error"] = e.what();
        tracer_(stage_, std::move(payload));
        throw;
    }
}

FixtureStore to_fixture(const std::vector<TraceEvent>& events) {
    FixtureStore store;
    for (const auto& ev : events) {
        const auto& p = ev.payload;
        if (!p.is_object() || p.value("event", "") != "model_call" || !p.contains("response")) continue;
        store.add({p.at("digest").get<std::string>(), p.at("request"), response_from_json(p.at("response")),
                   ev.timestamp});
    }
    return store;
}

json trace_payloads(const std::vector<TraceEvent>& events) {
    json out = json::array();
    for (const auto& ev : events) {
        out.push_back({{"sample_id", ev.sample_id},
                       {"seq", ev.sequence},
                       {"stage", to_string(ev.stage)},
                       {"payload", ev.payload}});
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string candidates_line(const json& cands) {
    std::ostringstream os;
    bool first = true;
    for (const auto& c : cands) {
        if (!first) os << ", ";
        first = false;
        os << '"' << c.value("text", "") << "\" (" << format_score(c.value("confidence", 0.0)) << ")";
    }
    return os.str();
}

}  // namespace

std::string render_case_study(const std::vector<TraceEvent>& events) {
    std::ostringstream os;
    if (events.empty()) return "(no trace events)\n";
    os << "Sample " << events.front().sample_id << "\n";

    std::map<int, std::string> issue_text;
    for (const auto& ev : events) {
        const auto& p = ev.payload;
        if (!p.is_object()) continue;
        const auto kind = p.value("event", "");
        if (kind == "error") {
            os << "  ! error in " << p.value("stage", "?") << ": " << p.value("message", "") << "\n";
            continue;
        }
        if (kind != "decision" && kind != "filter") continue;

        switch (ev.stage) {
        case Stage::candidates:
            os << "Question: " << p.value("question", "") << "\n";
            os << "Answer candidates: " << candidates_line(p.value("candidates", json::array())) << "\n";
            break;
        case Stage::gate:
            if (p.value("gated", false)) {
                os << "Top-1 confidence " << format_score(p.value("top1", 0.0)) << " > eta "
                   << format_score(p.value("eta", 0.0)) << ": answered directly.\n";
                os << "Final answer: \"" << p.value("answer", "") << "\"\n";
            }
            break;
        case Stage::caption:
            os << "Caption: " << p.value("caption", "") << "\n";
            break;
        case Stage::issues:
            if (kind == "filter") {
                const auto discarded = p.value("discarded", json::array());
                if (!discarded.empty()) {
                    os << "Discarded by tau=" << format_score(p.value("tau", 0.0)) << ": issues " << discarded.dump()
                       << "\n";
                }
            } else {
                for (const auto& issue : p.value("issues", json::array())) {
                    issue_text[issue.value("id", 0)] = issue.value("text", "");
                }
            }
            break;
        case Stage::issue_candidates:
            os << "\nRelevant issue #" << p.value("issue_id", 0) << ": " << p.value("issue", "") << "\n";
            os << "  Issue answer candidates: " << candidates_line(p.value("candidates", json::array())) << "\n";
            break;
        case Stage::words:
            os << "  Hypotheses (issue #" << p.value("issue_id", 0) << "):\n";
            for (const auto& e : p.value("entries", json::array())) {
                os << "    H" << e.value("index", 0) << ": " << e.value("hypothesis", "") << " -> "
                   << e.value("word", "") << " (score " << format_score(e.value("score", 0.0)) << ", weight "
                   << format_score(e.value("weight", 0.0)) << ")\n";
            }
            break;
        case Stage::reanswer: {
            os << "  Re-answer for H" << p.value("hypothesis_index", 0) << " (issue #" << p.value("issue_id", 0)
               << "): \"" << p.value("answer", "") << "\"";
            if (p.contains("matched") && p["matched"].is_string()) {
                os << " -> votes " << format_score(p.value("weight", 0.0)) << " for \"" << p["matched"].get<std::string>()
                   << "\"";
            } else {
                os << " -> not an answer candidate, no vote";
            }
            os << "\n";
            break;
        }
        case Stage::pool: {
            os << "\nVoting pool:\n";
            const auto buckets = p.value("buckets", json::object());
            for (const auto& [key, weights] : buckets.items()) {
                double sum = 0.0;
                std::ostringstream ws;
                bool first = true;
                for (const auto& w : weights) {
                    sum += w.get<double>();
                    ws << (first ? "" : " + ") << format_score(w.get<double>());
                    first = false;
                }
                os << "  " << key << ": " << ws.str() << " = " << format_score(sum) << "\n";
            }
            if (buckets.empty()) os << "  (empty)\n";
            break;
        }
        case Stage::vote:
            os << "Final answer: \"" << p.value("answer", "") << "\"";
            if (p.value("pool_empty", false)) os << " (empty pool, baseline top-1 kept)";
            os << "\n";
            break;
        default:
            break;
        }
    }
    return os.str();
}

}  // namespace siri
