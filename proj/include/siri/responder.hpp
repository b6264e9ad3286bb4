#pragma once

#include "siri/model.hpp"
#include "siri/prompts.hpp"
#include "siri/trace.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace siri {

/// What every agent needs: the two models, the prompt set and the sample's tracer.
struct AgentContext {
    ModelBackend& vlm;
    ModelBackend& llm;
    const TemplateSet& templates;
    Tracer trace;
};

struct QuestionImagePair {
    std::string question;
    ImageRef image;
    /// Empty for open-ended questions.
    std::vector<std::string> choices;
    std::string sample_id;
};

/// Top-K scored answers for one question, distinct after normalization,
/// sorted by non-increasing confidence.
struct CandidateSet {
    std::vector<ScoredAnswer> candidates;
    std::string source_question;

    std::size_t size() const { return candidates.size(); }
    bool empty() const { return candidates.empty(); }
    const ScoredAnswer& top() const { return candidates.front(); }
    /// Rank of the candidate whose normalized text equals `normalized`, or -1.
    int rank_of(const std::string& normalized) const;
};

nlohmann::json to_json(const CandidateSet& set);
CandidateSet candidate_set_from_json(const nlohmann::json& j);

/**
 * K answer candidates for `pair` from the VLM via the question template.
 *
 * Duplicates after normalization are merged (confidences summed, list
 * rescaled to sum 1 if a merged value exceeds 1). With choices present every
 * candidate is mapped onto a choice by text or letter; generations naming no
 * choice are dropped and their mass shared among the survivors in proportion
 * to their scores. A short list is padded with unused choices at confidence 0,
 * or raises DegenerateError when there are no choices.
 *
 * Model calls are traced under `stage`.
 */
CandidateSet answer_candidates(const AgentContext& ctx, const QuestionImagePair& pair, int k,
                               Stage stage = Stage::candidates);

/// Post-processing half of answer_candidates(), exposed for testing.
CandidateSet shape_candidates(std::vector<ScoredAnswer> raw, const std::vector<std::string>& choices, int k,
                              const std::string& question);

/// Single caption of the image, whitespace-trimmed. Empty caption is a ProtocolError.
std::string caption(const AgentContext& ctx, const ImageRef& image);

/// Top-1 answer of the VLM to the hypothesis-augmented context, sent through
/// the question template. Trailing whitespace of the context is ignored.
ScoredAnswer reanswer(const AgentContext& ctx, std::string_view context, const QuestionImagePair& pair);

}  // namespace siri
