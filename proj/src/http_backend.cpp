#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "siri/errors.hpp"
#include "siri/model.hpp"
#include "siri/util.hpp"

#include <cmath>
#include <thread>

namespace siri {

using nlohmann::json;

namespace {

std::string sniff_mime(std::string_view bytes) {
    if (bytes.size() >= 8 && bytes.substr(0, 8) == "\x89PNG\r\n\x1a\n") return "image/png";
    if (bytes.size() >= 3 && bytes.substr(0, 3) == "\xFF\xD8\xFF") return "image/jpeg";
    if (bytes.size() >= 6 && (bytes.substr(0, 6) == "GIF87a" || bytes.substr(0, 6) == "GIF89a")) return "image/gif";
    if (bytes.size() >= 12 && bytes.substr(0, 4) == "RIFF" && bytes.substr(8, 4) == "WEBP") return "image/webp";
    return "image/png";
}

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;    // request path for chat completions
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint URL needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.origin = url.substr(0, path_start);
    std::string base = path_start == std::string::npos ? std::string{} : url.substr(path_start);
    while (!base.empty() && base.back() == '/') base.pop_back();
    if (base.size() >= 17 && base.compare(base.size() - 17, 17, "/chat/completions") == 0) {
        ep.path = base;
    } else {
        ep.path = base + "/chat/completions";
    }
    return ep;
}

std::string message_text(const json& message) {
    const auto& content = message.at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
        std::string out;
        for (const auto& part : content) {
            if (part.value("type", "") == "text") out += part.value("text", "");
        }
        return out;
    }
    throw ProtocolError("message content is neither a string nor a list of parts");
}

std::optional<double> mean_token_logprob(const json& choice) {
    if (!choice.contains("logprobs") || !choice["logprobs"].is_object()) return std::nullopt;
    const auto& lp = choice["logprobs"];
    if (!lp.contains("content") || !lp["content"].is_array() || lp["content"].empty()) return std::nullopt;
    double sum = 0.0;
    for (const auto& tok : lp["content"]) sum += tok.at("logprob").get<double>();
    return sum / static_cast<double>(lp["content"].size());
}

}  // namespace

json build_chat_request(const BackendDescriptor& backend, const GenerationRequest& req) {
    json content;
    if (req.image) {
        const auto bytes = req.image->bytes();
        content = json::array({
            {{"type", "text"}, {"text", req.prompt}},
            {{"type", "image_url"},
             {"image_url", {{"url", "data:" + sniff_mime(bytes) + ";base64," + base64_encode(bytes)}}}},
        });
    } else {
        content = req.prompt;
    }
    json body = {
        {"model", backend.model},
        {"messages", json::array({{{"role", "user"}, {"content", content}}})},
        {"temperature", backend.params.temperature},
        {"max_tokens", backend.params.max_tokens},
    };
    if (backend.params.supports_candidate_count) body["n"] = req.candidate_count;
    if (backend.kind == BackendKind::vlm) body["logprobs"] = true;
    return body;
}

ModelResponse parse_chat_response(BackendKind kind, const json& body) {
    try {
        if (body.contains("error")) {
            const auto& err = body["error"];
            throw ProtocolError("remote error: " + (err.is_object() ? err.value("message", err.dump()) : err.dump()));
        }
        const auto& choices = body.at("choices");
        if (!choices.is_array() || choices.empty()) throw ProtocolError("response has no choices");

        if (kind == BackendKind::llm) return message_text(choices.at(0).at("message"));

        std::vector<ScoredAnswer> out;
        bool from_logprobs = false;
        for (const auto& choice : choices) {
            ScoredAnswer ans;
            ans.text = message_text(choice.at("message"));
            if (choice.contains("score") && choice["score"].is_number()) {
                ans.confidence = choice["score"].get<double>();
            } else if (auto mean = mean_token_logprob(choice)) {
                ans.confidence = std::exp(*mean);
                from_logprobs = true;
            } else {
                throw ProtocolError("choice " + std::to_string(out.size()) + " carries neither a score nor logprobs");
            }
            out.push_back(std::move(ans));
        }
        if (from_logprobs) {
            double total = 0.0;
            for (const auto& a : out) total += a.confidence;
            if (total > 0.0) {
                for (auto& a : out) a.confidence /= total;
            }
        }
        return out;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed chat-completions response: ") + e.what());
    }
}

json to_chat_response(const ModelResponse& response, const std::string& model) {
    json choices = json::array();
    if (const auto* cands = std::get_if<std::vector<ScoredAnswer>>(&response)) {
        for (std::size_t i = 0; i < cands->size(); ++i) {
            choices.push_back({{"index", i},
                               {"message", {{"role", "assistant"}, {"content", (*cands)[i].text}}},
                               {"score", (*cands)[i].confidence},
                               {"finish_reason", "stop"}});
        }
    } else {
        choices.push_back({{"index", 0},
                           {"message", {{"role", "assistant"}, {"content", std::get<std::string>(response)}}},
                           {"finish_reason", "stop"}});
    }
    return {{"object", "chat.completion"}, {"model", model}, {"choices", choices}};
}

HttpBackend::HttpBackend(BackendDescriptor descriptor, std::string api_key, RetryPolicy retry)
    : descriptor_(std::move(descriptor)), api_key_(std::move(api_key)), retry_(std::move(retry)) {
    descriptor_.validate();
    if (descriptor_.endpoint.empty()) throw std::invalid_argument("HTTP backend needs an endpoint");
    if (!retry_.sleep) retry_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    if (retry_.max_attempts < 1) retry_.max_attempts = 1;
}

ModelResponse HttpBackend::generate(const GenerationRequest& req) {
    const auto ep = split_endpoint(descriptor_.endpoint);
    const auto payload = build_chat_request(descriptor_, req).dump();

    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto backoff = retry_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
        httplib::Client client(ep.origin);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(retry_.timeout).count());
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(retry_.timeout).count());
        client.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(retry_.timeout).count());

        auto res = client.Post(ep.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport failure calling " + descriptor_.endpoint + ": " + httplib::to_string(res.error());
        } else if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status) + " from " + descriptor_.endpoint;
        } else if (res->status != 200) {
            throw ProtocolError("HTTP " + std::to_string(res->status) + " from " + descriptor_.endpoint + ": " +
                                res->body.substr(0, 200));
        } else {
            json body;
            try {
                body = json::parse(res->body);
            } catch (const json::exception& e) {
                throw ProtocolError(std::string("response body is not JSON: ") + e.what());
            }
            return parse_chat_response(descriptor_.kind, body);
        }
        if (attempt < retry_.max_attempts) {
            retry_.sleep(backoff);
            backoff *= 2;
        }
    }
    throw TransportError(last_error, retry_.max_attempts);
}

}  // namespace siri
