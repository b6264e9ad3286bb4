#include "siri/integrator.hpp"

#include "siri/answers.hpp"
#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <algorithm>

namespace siri {

using nlohmann::json;

namespace {

// Sum in ascending order so the result does not depend on insertion order.
double bucket_sum(std::vector<double> weights) {
    std::sort(weights.begin(), weights.end());
    double sum = 0.0;
    for (double w : weights) sum += w;
    return sum;
}

std::string strip_terminal_period(std::string_view s) {
    s = trim(s);
    while (!s.empty() && s.back() == '.') s = trim_right(s.substr(0, s.size() - 1));
    return std::string(s);
}

}  // namespace

bool VotingPool::empty() const {
    return std::all_of(buckets.begin(), buckets.end(), [](const auto& kv) { return kv.second.empty(); });
}

std::size_t VotingPool::vote_count() const {
    std::size_t n = 0;
    for (const auto& [_, w] : buckets) n += w.size();
    return n;
}

json to_json(const VotingPool& pool) {
    json buckets = json::object();
    for (const auto& [key, weights] : pool.buckets) buckets[key] = weights;
    return buckets;
}

json to_json(const FinalAnswer& answer) {
    return {
        {"text", answer.text},
        {"total_weight", answer.total_weight},
        {"pool_empty", answer.pool_empty},
        {"breakdown", answer.breakdown},
    };
}

FinalAnswer final_answer_from_json(const json& j) {
    FinalAnswer a;
    a.text = j.at("text").get<std::string>();
    a.total_weight = j.value("total_weight", 0.0);
    a.pool_empty = j.value("pool_empty", true);
    a.breakdown = j.value("breakdown", std::map<std::string, double>{});
    return a;
}

json to_json(const ReanswerOutcome& o) {
    json j = {
        {"entry", o.entry_index},
        {"issue_id", o.issue_id},
        {"answer", o.answer},
        {"matched", o.matched ? json(*o.matched) : json(nullptr)},
        {"weight", o.weight},
    };
    if (o.error) j["error"] = *o.error;
    return j;
}

ReanswerOutcome reanswer_outcome_from_json(const json& j) {
    ReanswerOutcome o;
    o.entry_index = j.at("entry").get<int>();
    o.issue_id = j.at("issue_id").get<int>();
    o.answer = j.value("answer", std::string{});
    if (j.contains("matched") && j["matched"].is_string()) o.matched = j["matched"].get<std::string>();
    o.weight = j.value("weight", 0.0);
    if (j.contains("error")) o.error = j["error"].get<std::string>();
    return o;
}

std::string compose_context(const MvkbEntry& entry, const std::string& caption, const std::string& question,
                            const ContextOptions& opts, const TemplateSet& templates,
                            const std::string& issue_top_answer) {
    std::string statement;
    std::string word;
    if (opts.issue_and_answer) {
        const auto& answer = issue_top_answer.empty() ? entry.hypothesis.issue_candidate.text : issue_top_answer;
        statement = std::string(trim(entry.hypothesis.issue)) + " " + strip_terminal_period(answer);
    } else {
        statement = strip_terminal_period(entry.hypothesis.text);
        if (opts.confidence_word) word = opts.word_conversion ? to_string(entry.word) : format_score(entry.score);
    }
    auto out = templates.context.render({
        {"caption", opts.caption_wrapper ? std::string(trim(caption)) : std::string{}},
        {"hypothesis", statement},
        {"confidence_word", word},
        {"question", std::string(trim(question))},
    });
    return std::string(trim_right(out));
}

std::optional<std::string> accumulate(VotingPool& pool, const ScoredAnswer& answer, double weight,
                                      const CandidateSet& qac) {
    const auto key = normalize_answer(answer.text);
    if (key.empty() || qac.rank_of(key) < 0) return std::nullopt;
    pool.buckets[key].push_back(weight);
    return key;
}

std::optional<std::string> accumulate(VotingPool& pool, const ScoredAnswer& answer, const MvkbEntry& entry,
                                      const CandidateSet& qac) {
    return accumulate(pool, answer, entry.issue_answer_weight, qac);
}

FinalAnswer vote(const VotingPool& pool, const CandidateSet& qac) {
    FinalAnswer out;
    int best = -1;
    double best_sum = 0.0;
    for (std::size_t rank = 0; rank < qac.size(); ++rank) {
        const auto& cand = qac.candidates[rank];
        auto it = pool.buckets.find(normalize_answer(cand.text));
        if (it == pool.buckets.end() || it->second.empty()) continue;
        const double sum = bucket_sum(it->second);
        out.breakdown[cand.text] = sum;
        // Ranks are visited in order, so equal sum and confidence keep the earlier rank.
        if (best < 0 || sum > best_sum ||
            (sum == best_sum && cand.confidence > qac.candidates[static_cast<std::size_t>(best)].confidence)) {
            best = static_cast<int>(rank);
            best_sum = sum;
        }
    }
    if (best < 0) {
        if (qac.empty()) throw std::invalid_argument("vote over an empty candidate set");
        out.text = qac.top().text;
        out.pool_empty = true;
        out.total_weight = 0.0;
        return out;
    }
    out.text = qac.candidates[static_cast<std::size_t>(best)].text;
    out.total_weight = best_sum;
    out.pool_empty = false;
    return out;
}

Integration integrate(const AgentContext& ctx, const Mvkb& mvkb, const QuestionImagePair& pair, const CandidateSet& qac,
                      const std::string& caption, const IntegratorOptions& opts) {
    if (opts.context.caption_wrapper && trim(caption).empty())
        throw std::invalid_argument("caption wrapper enabled but the caption is empty");

    Integration result;
    std::size_t failures = 0;
    for (std::size_t n = 0; n < mvkb.entries.size(); ++n) {
        const auto& entry = mvkb.entries[n];
        std::string top_issue_answer;
        int issue_k = static_cast<int>(qac.size());
        for (const auto& issue : mvkb.issues) {
            if (issue.id == entry.hypothesis.issue_id && !issue.candidates.empty()) {
                top_issue_answer = issue.candidates.top().text;
                issue_k = static_cast<int>(issue.candidates.size());
            }
        }
        const auto context = compose_context(entry, caption, pair.question, opts.context, ctx.templates, top_issue_answer);
        const int hypothesis_index = entry.hypothesis.question_rank * issue_k + entry.hypothesis.issue_rank + 1;

        ReanswerOutcome outcome;
        outcome.entry_index = static_cast<int>(n);
        outcome.issue_id = entry.hypothesis.issue_id;
        outcome.weight = opts.weighted ? entry.issue_answer_weight : 1.0;
        try {
            auto answer = reanswer(ctx, context, pair);
            if (!pair.choices.empty()) {
                if (auto idx = match_choice(answer.text, pair.choices)) answer.text = pair.choices[*idx];
            }
            outcome.answer = answer.text;
            outcome.matched = accumulate(result.pool, answer, outcome.weight, qac);
        } catch (const Error& e) {
            ++failures;
            outcome.error = e.what();
            ctx.trace(Stage::error, {{"event", "error"}, {"stage", "reanswer"}, {"entry", n}, {"message", e.what()}});
        }
        ctx.trace(Stage::reanswer, {{"event", "decision"},
                                    {"entry", n},
                                    {"issue_id", outcome.issue_id},
                                    {"hypothesis_index", hypothesis_index},
                                    {"context", context},
                                    {"answer", outcome.answer},
                                    {"matched", outcome.matched ? json(*outcome.matched) : json(nullptr)},
                                    {"weight", outcome.weight}});
        result.outcomes.push_back(std::move(outcome));
    }

    if (!mvkb.entries.empty() && failures == mvkb.entries.size() && result.pool.empty() && !opts.empty_pool_fallback) {
        throw Error("every re-answer failed and empty-pool fallback is disabled");
    }
    ctx.trace(Stage::pool, {{"event", "decision"}, {"buckets", to_json(result.pool)}});
    result.final = vote(result.pool, qac);
    ctx.trace(Stage::vote, {{"event", "decision"},
                            {"answer", result.final.text},
                            {"total_weight", result.final.total_weight},
                            {"pool_empty", result.final.pool_empty},
                            {"breakdown", result.final.breakdown}});
    return result;
}

}  // namespace siri
