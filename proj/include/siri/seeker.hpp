#pragma once

#include "siri/responder.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace siri {

struct RelevantIssue {
    std::string text;
    int id = 0;
    /// Filled by the responder; empty until then.
    CandidateSet candidates;
};

/// One fluent statement linking an issue answer (alpha_j) to a question answer (a_i).
struct Hypothesis {
    std::string text;
    ScoredAnswer question_candidate;
    ScoredAnswer issue_candidate;
    int issue_id = 0;
    std::string issue;
    int question_rank = 0;
    int issue_rank = 0;
    /// True when the LLM omitted it and the fallback pattern was used.
    bool synthesized = false;
};

class ConfidenceScore {
public:
    /// Throws std::out_of_range outside [0, 1].
    explicit ConfidenceScore(double value) : value_(value) {
        if (!(value >= 0.0 && value <= 1.0)) throw std::out_of_range("confidence score outside [0, 1]");
    }
    double value() const { return value_; }

private:
    double value_;
};

enum class ConfidenceWord { impossible, unlikely, possible, likely, probable };

std::string to_string(ConfidenceWord word);
ConfidenceWord confidence_word_from_string(const std::string& s);

/// Five-tier partition: [0,.2) Impossible, [.2,.4) Unlikely, [.4,.7) Possible,
/// [.7,.9) Likely, [.9,1] Probable.
ConfidenceWord to_confidence_word(ConfidenceScore score);

struct MvkbEntry {
    Hypothesis hypothesis;
    ConfidenceWord word = ConfidenceWord::impossible;
    double score = 0.0;
    /// Confidence of the hypothesis's issue candidate.
    double issue_answer_weight = 0.0;
};

/// Multi-view knowledge base of one question.
struct Mvkb {
    std::vector<MvkbEntry> entries;
    std::string question;
    CandidateSet question_candidates;
    std::string caption;
    /// Every generated issue with its candidates, before tau filtering.
    std::vector<RelevantIssue> issues;
    std::vector<int> retained_issue_ids;
};

nlohmann::json to_json(const MvkbEntry& entry);
nlohmann::json to_json(const Mvkb& mvkb);
MvkbEntry mvkb_entry_from_json(const nlohmann::json& j);
Mvkb mvkb_from_json(const nlohmann::json& j);

struct SeekerOptions {
    int k = 2;
    int n_issues = 2;
    double tau = 0.0;
    bool candidates_in_issue_gen = true;
    bool caption_in_issue_gen = true;
    bool caption_in_confidence = true;
    /// One LLM call scores all hypotheses of an issue; otherwise one call each.
    bool batched_scores = true;
};

// Parsers, exposed for testing.

/// Question lines from free-form LLM output, numbering and bullets stripped,
/// at most `max_issues`. Throws ParseError when none is found.
std::vector<std::string> parse_issues(const std::string& text, int max_issues);
/// Statement per pair index 1..count; nullopt where the LLM gave none.
std::vector<std::optional<std::string>> parse_hypotheses(const std::string& text, std::size_t count);

struct ParsedScore {
    std::optional<double> value;  // clamped into [0, 1]
    bool clamped = false;
    std::string raw;
};
/// Score per hypothesis index 1..count: the first decimal or percentage token
/// on the line for that index.
std::vector<ParsedScore> parse_scores(const std::string& text, std::size_t count);
/// First decimal or percentage token anywhere in `text`.
ParsedScore parse_single_score(const std::string& text);

/// Fallback statement: If <issue> is answered "<alpha>", then the answer to "<Q>" is "<a>".
std::string fallback_hypothesis(const std::string& issue, const std::string& issue_answer,
                                const std::string& question, const std::string& question_answer);

std::vector<RelevantIssue> relevant_issues(const AgentContext& ctx, const std::string& question, const CandidateSet& qac,
                                           const std::string& caption, const SeekerOptions& opts);

/// |qac| x |issue.candidates| hypotheses ordered by (a_i rank, alpha_j rank).
std::vector<Hypothesis> hypotheses(const AgentContext& ctx, const RelevantIssue& issue, const std::string& question,
                                   const CandidateSet& qac);

/// One optional score per hypothesis; nullopt when unparseable (traced).
std::vector<std::optional<ConfidenceScore>> confidence_scores(const AgentContext& ctx, const std::string& caption,
                                                              const std::vector<Hypothesis>& hyps,
                                                              const SeekerOptions& opts);

/// Issues whose top-1 candidate confidence is >= tau, order preserved.
std::vector<RelevantIssue> filter_issues(const std::vector<RelevantIssue>& issues, double tau);

/// Issues -> issue candidates -> tau filter -> hypotheses -> scores -> words.
Mvkb build_mvkb(const AgentContext& ctx, const QuestionImagePair& pair, const CandidateSet& qac,
                const std::string& caption, const SeekerOptions& opts);

}  // namespace siri
