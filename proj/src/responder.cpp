#include "siri/responder.hpp"

#include "siri/answers.hpp"
#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <algorithm>
#include <numeric>

namespace siri {

using nlohmann::json;

int CandidateSet::rank_of(const std::string& normalized) const {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (normalize_answer(candidates[i].text) == normalized) return static_cast<int>(i);
    }
    return -1;
}

json to_json(const CandidateSet& set) {
    json arr = json::array();
    for (const auto& c : set.candidates) arr.push_back({{"text", c.text}, {"confidence", c.confidence}});
    return {{"question", set.source_question}, {"candidates", arr}};
}

CandidateSet candidate_set_from_json(const json& j) {
    CandidateSet set;
    set.source_question = j.value("question", std::string{});
    for (const auto& c : j.at("candidates")) {
        set.candidates.push_back({c.at("text").get<std::string>(), c.at("confidence").get<double>()});
    }
    return set;
}

CandidateSet shape_candidates(std::vector<ScoredAnswer> raw, const std::vector<std::string>& choices, int k,
                              const std::string& question) {
    if (k < 1) throw std::invalid_argument("candidate count must be >= 1");

    if (!choices.empty()) {
        std::vector<ScoredAnswer> kept;
        double dropped_mass = 0.0;
        for (auto& c : raw) {
            if (auto idx = match_choice(c.text, choices)) {
                kept.push_back({choices[*idx], c.confidence});
            } else {
                dropped_mass += c.confidence;
            }
        }
        if (dropped_mass > 0.0 && !kept.empty()) {
            const double kept_mass = std::accumulate(kept.begin(), kept.end(), 0.0,
                                                     [](double s, const ScoredAnswer& a) { return s + a.confidence; });
            for (auto& c : kept) {
                c.confidence += kept_mass > 0.0 ? dropped_mass * c.confidence / kept_mass
                                                : dropped_mass / static_cast<double>(kept.size());
            }
        }
        raw = std::move(kept);
    }

    // Merge duplicates into the first occurrence.
    std::vector<ScoredAnswer> merged;
    std::vector<std::string> keys;
    for (auto& c : raw) {
        auto key = normalize_answer(c.text);
        if (key.empty()) continue;
        auto it = std::find(keys.begin(), keys.end(), key);
        if (it == keys.end()) {
            keys.push_back(std::move(key));
            merged.push_back(std::move(c));
        } else {
            merged[static_cast<std::size_t>(it - keys.begin())].confidence += c.confidence;
        }
    }
    const bool overflow = std::any_of(merged.begin(), merged.end(), [](const ScoredAnswer& a) { return a.confidence > 1.0; });
    if (overflow) {
        const double total = std::accumulate(merged.begin(), merged.end(), 0.0,
                                             [](double s, const ScoredAnswer& a) { return s + a.confidence; });
        for (auto& c : merged) c.confidence /= total;
    }
    for (auto& c : merged) c.confidence = std::clamp(c.confidence, 0.0, 1.0);
    std::stable_sort(merged.begin(), merged.end(),
                     [](const ScoredAnswer& a, const ScoredAnswer& b) { return a.confidence > b.confidence; });

    const auto want = static_cast<std::size_t>(k);
    if (merged.size() > want) merged.resize(want);
    if (merged.size() < want) {
        for (const auto& choice : choices) {
            if (merged.size() == want) break;
            const auto key = normalize_answer(choice);
            if (std::find(keys.begin(), keys.end(), key) != keys.end()) continue;
            keys.push_back(key);
            merged.push_back({choice, 0.0});
        }
        if (merged.size() < want) {
            throw DegenerateError("only " + std::to_string(merged.size()) + " distinct answer candidates for \"" +
                                  question + "\", " + std::to_string(k) + " required");
        }
    }
    return {std::move(merged), question};
}

CandidateSet answer_candidates(const AgentContext& ctx, const QuestionImagePair& pair, int k, Stage stage) {
    if (k < 1) throw std::invalid_argument("candidate count must be >= 1");
    TracedBackend vlm(ctx.vlm, ctx.trace, stage);
    GenerationRequest req;
    req.prompt = ctx.templates.question.render({{"question", pair.question}});
    req.image = pair.image;
    req.candidate_count = k;
    return shape_candidates(vlm_generate(vlm, req), pair.choices, k, pair.question);
}

std::string caption(const AgentContext& ctx, const ImageRef& image) {
    TracedBackend vlm(ctx.vlm, ctx.trace, Stage::caption);
    GenerationRequest req;
    req.prompt = ctx.templates.caption.render({});
    req.image = image;
    req.candidate_count = 1;
    auto out = vlm_generate(vlm, req);
    if (out.empty()) throw ProtocolError("VLM returned an empty caption");
    return std::string(trim(out.front().text));
}

ScoredAnswer reanswer(const AgentContext& ctx, std::string_view context, const QuestionImagePair& pair) {
    TracedBackend vlm(ctx.vlm, ctx.trace, Stage::reanswer);
    GenerationRequest req;
    req.prompt = ctx.templates.question.render({{"question", std::string(trim_right(context))}});
    req.image = pair.image;
    req.candidate_count = 1;
    auto out = vlm_generate(vlm, req);
    if (out.empty()) throw ProtocolError("VLM returned no answer to the hypothesis context");
    return out.front();
}

}  // namespace siri
