#include "siri/model.hpp"

#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace siri {

using nlohmann::json;

std::string to_string(BackendKind kind) { return kind == BackendKind::vlm ? "vlm" : "llm"; }

BackendKind backend_kind_from_string(const std::string& s) {
    if (s == "vlm") return BackendKind::vlm;
    if (s == "llm") return BackendKind::llm;
    throw std::invalid_argument("unknown backend kind '" + s + "'");
}

void BackendDescriptor::validate() const {
    if (model.empty()) throw std::invalid_argument("backend model identifier is empty");
    if (!(params.temperature >= 0.0)) throw std::invalid_argument("backend temperature must be >= 0");
    if (params.max_tokens <= 0) throw std::invalid_argument("backend max_tokens must be positive");
    if (endpoint.empty() && fixture_path.empty())
        throw std::invalid_argument("backend '" + model + "' has neither an endpoint nor a fixture path");
}

// ---------------------------------------------------------------------------

ImageRef ImageRef::from_bytes(std::string bytes) {
    ImageRef ref;
    ref.digest_ = sha256_hex(bytes);
    ref.bytes_ = std::make_shared<const std::string>(std::move(bytes));
    return ref;
}

ImageRef ImageRef::from_file(const std::string& path) {
    ImageRef ref;
    ref.digest_ = sha256_hex(read_file(path));
    ref.path_ = path;
    return ref;
}

std::string ImageRef::bytes() const {
    if (bytes_) return *bytes_;
    if (!path_.empty()) return read_file(path_);
    throw std::logic_error("empty image reference");
}

// ---------------------------------------------------------------------------

json response_to_json(const ModelResponse& response) {
    if (const auto* cands = std::get_if<std::vector<ScoredAnswer>>(&response)) {
        json arr = json::array();
        for (const auto& c : *cands) arr.push_back({{"text", c.text}, {"confidence", c.confidence}});
        return {{"candidates", arr}};
    }
    return {{"text", std::get<std::string>(response)}};
}

ModelResponse response_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("response must be an object");
    if (j.contains("candidates")) {
        std::vector<ScoredAnswer> out;
        for (const auto& c : j.at("candidates")) {
            out.push_back({c.at("text").get<std::string>(), c.at("confidence").get<double>()});
        }
        return out;
    }
    if (j.contains("text")) return j.at("text").get<std::string>();
    throw SchemaError("response has neither 'candidates' nor 'text'");
}

json request_key(const BackendDescriptor& backend, const GenerationRequest& req) {
    return {
        {"backend", backend.model},
        {"kind", to_string(backend.kind)},
        {"prompt", req.prompt},
        {"image", req.image ? json(req.image->digest()) : json(nullptr)},
        {"k", req.candidate_count},
        {"params", {{"temperature", backend.params.temperature}, {"max_tokens", backend.params.max_tokens}}},
    };
}

std::string request_digest(const BackendDescriptor& backend, const GenerationRequest& req) {
    return sha256_hex(request_key(backend, req).dump());
}

// ---------------------------------------------------------------------------

namespace {

void check_prompt_length(const BackendDescriptor& backend, const GenerationRequest& req) {
    const auto limit = backend.params.max_prompt_chars;
    if (limit != 0 && req.prompt.size() > limit) {
        throw ProtocolError("prompt length " + std::to_string(req.prompt.size()) + " exceeds backend '" +
                            backend.model + "' limit of " + std::to_string(limit));
    }
}

}  // namespace

std::vector<ScoredAnswer> vlm_generate(ModelBackend& backend, const GenerationRequest& req) {
    const auto& desc = backend.descriptor();
    if (desc.kind != BackendKind::vlm) throw std::invalid_argument("vlm_generate on a non-VLM backend");
    if (req.candidate_count < 1) throw std::invalid_argument("candidate count must be >= 1");
    if (req.image && req.image->empty()) throw std::invalid_argument("unresolvable image reference");
    check_prompt_length(desc, req);

    auto response = backend.generate(req);
    auto* cands = std::get_if<std::vector<ScoredAnswer>>(&response);
    if (cands == nullptr) throw ProtocolError("VLM backend '" + desc.model + "' returned text, not scored candidates");

    std::vector<ScoredAnswer> out;
    out.reserve(cands->size());
    for (auto& c : *cands) {
        if (std::isnan(c.confidence)) throw ProtocolError("candidate '" + c.text + "' has a NaN confidence");
        std::string text(trim(c.text));
        if (text.empty()) continue;
        out.push_back({std::move(text), std::clamp(c.confidence, 0.0, 1.0)});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ScoredAnswer& a, const ScoredAnswer& b) { return a.confidence > b.confidence; });
    if (out.size() > static_cast<std::size_t>(req.candidate_count)) out.resize(req.candidate_count);
    return out;
}

std::string llm_complete(ModelBackend& backend, const GenerationRequest& req) {
    const auto& desc = backend.descriptor();
    if (desc.kind != BackendKind::llm) throw std::invalid_argument("llm_complete on a non-LLM backend");
    if (req.image) throw std::invalid_argument("LLM requests never carry an image");
    check_prompt_length(desc, req);

    auto response = backend.generate(req);
    auto* text = std::get_if<std::string>(&response);
    if (text == nullptr) throw ProtocolError("LLM backend '" + desc.model + "' returned candidates, not text");
    std::string out(trim_right(*text));
    if (trim(out).empty()) throw ProtocolError("LLM backend '" + desc.model + "' returned an empty completion");
    return out;
}

// ---------------------------------------------------------------------------

json fixture_to_json(const FixtureRecord& rec) {
    return {
        {"digest", rec.digest},
        {"request", rec.request},
        {"response", response_to_json(rec.response)},
        {"recorded_at", rec.recorded_at},
    };
}

FixtureRecord fixture_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("fixture record must be an object");
    FixtureRecord rec;
    rec.request = j.value("request", json(nullptr));
    if (j.contains("digest")) {
        rec.digest = j.at("digest").get<std::string>();
    } else if (rec.request.is_object()) {
        rec.digest = sha256_hex(rec.request.dump());
    } else {
        throw SchemaError("fixture record has neither 'digest' nor 'request'");
    }
    if (!j.contains("response")) throw SchemaError("fixture record " + rec.digest + " has no response");
    rec.response = response_from_json(j.at("response"));
    rec.recorded_at = j.value("recorded_at", std::string{});
    return rec;
}

FixtureStore::FixtureStore(FixtureStore&& other) noexcept {
    std::unique_lock lock(other.mutex_);
    records_ = std::move(other.records_);
}

FixtureStore& FixtureStore::operator=(FixtureStore&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mutex_, other.mutex_);
        records_ = std::move(other.records_);
    }
    return *this;
}

FixtureStore FixtureStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open fixture file " + path);
    FixtureStore store;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            store.add(fixture_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const SchemaError& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return store;
}

void FixtureStore::add(FixtureRecord rec) {
    std::unique_lock lock(mutex_);
    auto digest = rec.digest;
    records_.insert_or_assign(std::move(digest), std::move(rec));
}

std::optional<FixtureRecord> FixtureStore::find(const std::string& digest) const {
    std::shared_lock lock(mutex_);
    auto it = records_.find(digest);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

std::size_t FixtureStore::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

std::vector<FixtureRecord> FixtureStore::records() const {
    std::shared_lock lock(mutex_);
    std::vector<FixtureRecord> out;
    out.reserve(records_.size());
    for (const auto& [_, rec] : records_) out.push_back(rec);
    return out;
}

void FixtureStore::save(const std::string& path) const {
    std::string body;
    for (const auto& rec : records()) {
        body += fixture_to_json(rec).dump();
        body += '\n';
    }
    write_file_atomic(path, body);
}

FixtureBackend::FixtureBackend(BackendDescriptor descriptor, std::shared_ptr<const FixtureStore> store)
    : descriptor_(std::move(descriptor)), store_(std::move(store)) {
    if (descriptor_.model.empty()) throw std::invalid_argument("backend model identifier is empty");
}

FixtureBackend::FixtureBackend(BackendDescriptor descriptor)
    : FixtureBackend(descriptor, std::make_shared<const FixtureStore>(FixtureStore::load(descriptor.fixture_path))) {}

ModelResponse FixtureBackend::generate(const GenerationRequest& req) {
    const auto digest = request_digest(descriptor_, req);
    if (auto rec = store_->find(digest)) return rec->response;
    // A record made with a larger candidate count answers a smaller one;
    // vlm_generate truncates.
    if (descriptor_.kind == BackendKind::vlm) {
        auto wider = req;
        for (int k = req.candidate_count + 1; k <= req.candidate_count + 16; ++k) {
            wider.candidate_count = k;
            if (auto rec = store_->find(request_digest(descriptor_, wider))) return rec->response;
        }
    }
    std::string preview = req.prompt.substr(0, 80);
    throw FixtureMissError(digest, "backend '" + descriptor_.model + "', prompt \"" + preview +
                                       (req.prompt.size() > 80 ? "...\"" : "\""));
}

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(std::string directory) : dir_(std::move(directory)) {}

std::string ResponseCache::path_for(const std::string& digest) const {
    const auto shard = digest.size() >= 2 ? digest.substr(0, 2) : std::string("__");
    return (std::filesystem::path(dir_) / shard / (digest + ".json")).string();
}

std::optional<ModelResponse> ResponseCache::get(const std::string& digest) const {
    {
        std::shared_lock lock(mutex_);
        auto it = memory_.find(digest);
        if (it != memory_.end()) return it->second;
    }
    if (dir_.empty()) return std::nullopt;
    const auto path = path_for(digest);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
        auto j = json::parse(read_file(path));
        if (j.at("digest").get<std::string>() != digest) return std::nullopt;
        auto response = response_from_json(j.at("response"));
        std::unique_lock lock(mutex_);
        memory_.insert_or_assign(digest, response);
        return response;
    } catch (const std::exception&) {
        // Unreadable entries behave as misses and get rewritten by the next put.
        return std::nullopt;
    }
}

void ResponseCache::put(const std::string& digest, const ModelResponse& response) {
    {
        std::unique_lock lock(mutex_);
        memory_.insert_or_assign(digest, response);
    }
    if (dir_.empty()) return;
    const json j = {{"digest", digest}, {"response", response_to_json(response)}};
    write_file_atomic(path_for(digest), j.dump() + "\n");
}

CachedBackend::CachedBackend(std::shared_ptr<ModelBackend> inner, std::shared_ptr<ResponseCache> cache,
                             StorageErrorHook on_storage_error)
    : inner_(std::move(inner)), cache_(std::move(cache)), on_storage_error_(std::move(on_storage_error)) {}

ModelResponse CachedBackend::generate(const GenerationRequest& req) {
    const auto digest = request_digest(inner_->descriptor(), req);
    if (auto hit = cache_->get(digest)) {
        std::lock_guard lock(stats_mutex_);
        ++hits_;
        return *hit;
    }
    auto response = inner_->generate(req);
    try {
        cache_->put(digest, response);
    } catch (const StorageError& e) {
        {
            std::lock_guard lock(stats_mutex_);
            ++storage_errors_;
        }
        if (on_storage_error_) on_storage_error_(e.what());
    }
    return response;
}

std::size_t CachedBackend::hits() const {
    std::lock_guard lock(stats_mutex_);
    return hits_;
}

std::size_t CachedBackend::storage_errors() const {
    std::lock_guard lock(stats_mutex_);
    return storage_errors_;
}

RecordingBackend::RecordingBackend(std::shared_ptr<ModelBackend> inner, std::shared_ptr<FixtureStore> sink)
    : inner_(std::move(inner)), sink_(std::move(sink)) {}

ModelResponse RecordingBackend::generate(const GenerationRequest& req) {
    auto response = inner_->generate(req);
    const auto& desc = inner_->descriptor();
    sink_->add({request_digest(desc, req), request_key(desc, req), response, utc_timestamp()});
    return response;
}

LimitedBackend::LimitedBackend(std::shared_ptr<ModelBackend> inner, int max_in_flight)
    : inner_(std::move(inner)), slots_(std::clamp(max_in_flight, 1, 1024)) {}

ModelResponse LimitedBackend::generate(const GenerationRequest& req) {
    slots_.acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{slots_};
    return inner_->generate(req);
}

}  // namespace siri
