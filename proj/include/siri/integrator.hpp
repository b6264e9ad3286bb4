#pragma once

#include "siri/seeker.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace siri {

/// Normalized candidate text -> vote weights.
struct VotingPool {
    std::map<std::string, std::vector<double>> buckets;

    bool empty() const;
    std::size_t vote_count() const;
};

nlohmann::json to_json(const VotingPool& pool);

struct FinalAnswer {
    std::string text;
    double total_weight = 0.0;
    /// No vote landed on a candidate; text is the baseline top-1.
    bool pool_empty = true;
    /// Candidate text -> summed weight.
    std::map<std::string, double> breakdown;
};

nlohmann::json to_json(const FinalAnswer& answer);
FinalAnswer final_answer_from_json(const nlohmann::json& j);

struct ContextOptions {
    bool caption_wrapper = true;
    bool confidence_word = true;
    /// When false the raw score replaces the confidence word.
    bool word_conversion = true;
    /// Context is "<issue> <top-1 issue answer>." instead of the hypothesis.
    bool issue_and_answer = false;
};

/// This is a scene of "<C>". In the above scene: <H>, <word>. <Q>
/// A trailing period on the hypothesis is dropped before composition.
/// `issue_top_answer` is only read in issue-and-answer mode; empty means the
/// entry's own issue answer.
std::string compose_context(const MvkbEntry& entry, const std::string& caption, const std::string& question,
                            const ContextOptions& opts = {}, const TemplateSet& templates = TemplateSet::defaults(),
                            const std::string& issue_top_answer = {});

/// Appends `weight` to the bucket of the Qac candidate `answer` names.
/// Returns the bucket key, or nullopt when the answer is off-candidate.
std::optional<std::string> accumulate(VotingPool& pool, const ScoredAnswer& answer, double weight,
                                      const CandidateSet& qac);
/// Weighted by the entry's issue-answer weight.
std::optional<std::string> accumulate(VotingPool& pool, const ScoredAnswer& answer, const MvkbEntry& entry,
                                      const CandidateSet& qac);

/// Argmax of summed weights over Qac candidates; ties go to the higher Qac
/// confidence, then the better Qac rank. Empty pool: Qac top-1.
FinalAnswer vote(const VotingPool& pool, const CandidateSet& qac);

/// One re-answer of the integration loop, kept so thresholds can be
/// re-applied without new model calls.
struct ReanswerOutcome {
    int entry_index = 0;
    int issue_id = 0;
    std::string answer;
    /// Bucket key when the answer is a candidate.
    std::optional<std::string> matched;
    double weight = 0.0;
    std::optional<std::string> error;
};

nlohmann::json to_json(const ReanswerOutcome& outcome);
ReanswerOutcome reanswer_outcome_from_json(const nlohmann::json& j);

struct IntegratorOptions {
    ContextOptions context;
    bool weighted = true;
    /// With every entry failed and nothing in the pool, fall back to the
    /// baseline top-1 instead of raising.
    bool empty_pool_fallback = true;
};

struct Integration {
    FinalAnswer final;
    VotingPool pool;
    std::vector<ReanswerOutcome> outcomes;
};

Integration integrate(const AgentContext& ctx, const Mvkb& mvkb, const QuestionImagePair& pair, const CandidateSet& qac,
                      const std::string& caption, const IntegratorOptions& opts = {});

}  // namespace siri
