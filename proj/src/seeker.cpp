#include "siri/seeker.hpp"

#include "siri/answers.hpp"
#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <sstream>

namespace siri {

using nlohmann::json;

std::string to_string(ConfidenceWord word) {
    switch (word) {
    case ConfidenceWord::impossible: return "Impossible";
    case ConfidenceWord::unlikely: return "Unlikely";
    case ConfidenceWord::possible: return "Possible";
    case ConfidenceWord::likely: return "Likely";
    case ConfidenceWord::probable: return "Probable";
    }
    return "Impossible";
}

ConfidenceWord to_confidence_word(ConfidenceScore score) {
    const double o = score.value();
    if (o < 0.2) return ConfidenceWord::impossible;
    if (o < 0.4) return ConfidenceWord::unlikely;
    if (o < 0.7) return ConfidenceWord::possible;
    if (o < 0.9) return ConfidenceWord::likely;
    return ConfidenceWord::probable;
}

json to_json(const MvkbEntry& entry) {
    const auto& h = entry.hypothesis;
    return {
        {"issue_id", h.issue_id},
        {"issue", h.issue},
        {"hypothesis", h.text},
        {"question_answer", {{"text", h.question_candidate.text}, {"confidence", h.question_candidate.confidence}}},
        {"issue_answer", {{"text", h.issue_candidate.text}, {"confidence", h.issue_candidate.confidence}}},
        {"question_rank", h.question_rank},
        {"issue_rank", h.issue_rank},
        {"synthesized", h.synthesized},
        {"score", entry.score},
        {"word", to_string(entry.word)},
        {"weight", entry.issue_answer_weight},
    };
}

json to_json(const Mvkb& mvkb) {
    json issues = json::array();
    for (const auto& issue : mvkb.issues) {
        issues.push_back({{"id", issue.id}, {"text", issue.text}, {"candidates", to_json(issue.candidates)["candidates"]}});
    }
    json entries = json::array();
    for (const auto& e : mvkb.entries) entries.push_back(to_json(e));
    return {
        {"question", mvkb.question},
        {"caption", mvkb.caption},
        {"question_candidates", to_json(mvkb.question_candidates)["candidates"]},
        {"issues", issues},
        {"retained_issue_ids", mvkb.retained_issue_ids},
        {"entries", entries},
    };
}

ConfidenceWord confidence_word_from_string(const std::string& s) {
    for (auto w : {ConfidenceWord::impossible, ConfidenceWord::unlikely, ConfidenceWord::possible, ConfidenceWord::likely,
                   ConfidenceWord::probable}) {
        if (to_string(w) == s) return w;
    }
    throw SchemaError("unknown confidence word '" + s + "'");
}

MvkbEntry mvkb_entry_from_json(const json& j) {
    MvkbEntry e;
    auto& h = e.hypothesis;
    h.issue_id = j.at("issue_id").get<int>();
    h.issue = j.at("issue").get<std::string>();
    h.text = j.at("hypothesis").get<std::string>();
    h.question_candidate = {j.at("question_answer").at("text").get<std::string>(),
                            j.at("question_answer").at("confidence").get<double>()};
    h.issue_candidate = {j.at("issue_answer").at("text").get<std::string>(),
                         j.at("issue_answer").at("confidence").get<double>()};
    h.question_rank = j.value("question_rank", 0);
    h.issue_rank = j.value("issue_rank", 0);
    h.synthesized = j.value("synthesized", false);
    e.score = j.at("score").get<double>();
    e.word = confidence_word_from_string(j.at("word").get<std::string>());
    e.issue_answer_weight = j.at("weight").get<double>();
    return e;
}

Mvkb mvkb_from_json(const json& j) {
    Mvkb m;
    m.question = j.value("question", std::string{});
    m.caption = j.value("caption", std::string{});
    m.question_candidates = candidate_set_from_json({{"question", m.question}, {"candidates", j.at("question_candidates")}});
    for (const auto& i : j.at("issues")) {
        RelevantIssue issue;
        issue.id = i.at("id").get<int>();
        issue.text = i.at("text").get<std::string>();
        issue.candidates = candidate_set_from_json({{"question", issue.text}, {"candidates", i.at("candidates")}});
        m.issues.push_back(std::move(issue));
    }
    m.retained_issue_ids = j.at("retained_issue_ids").get<std::vector<int>>();
    for (const auto& e : j.at("entries")) m.entries.push_back(mvkb_entry_from_json(e));
    return m;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

const std::regex& bullet_prefix() {
    static const std::regex re(R"(^\s*(?:[-*•]+|(?:[A-Za-z]+\s*)?\(?[0-9]+\s*(?:[):]|\.(?![0-9]))|[A-Za-z][.)](?=\s))\s*)");
    return re;
}

const std::regex& indexed_line() {
    static const std::regex re(R"(^\s*(?:[A-Za-z]+\s*)?\(?([0-9]+)\s*(?:[):\-]|\.(?![0-9]))\s*(.*)$)");
    return re;
}

const std::regex& number_token() {
    static const std::regex re(R"((-?(?:[0-9]*\.[0-9]+|[0-9]+))(\s*%)?)");
    return re;
}

std::string strip_bullet(const std::string& line) {
    return std::regex_replace(line, bullet_prefix(), "", std::regex_constants::format_first_only);
}

std::string strip_quotes(std::string s) {
    s = std::string(trim(s));
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
        s = std::string(trim(std::string_view(s).substr(1, s.size() - 2)));
    }
    return s;
}

// Index -> remainder for lines that start with a number. Keeps the first
// occurrence of each index.
std::map<std::size_t, std::string> indexed_lines(const std::string& text) {
    std::map<std::size_t, std::string> out;
    for (const auto& line : split_lines(text)) {
        std::smatch m;
        if (std::regex_match(line, m, indexed_line())) {
            const auto idx = static_cast<std::size_t>(std::stoul(m[1].str()));
            out.try_emplace(idx, std::string(trim(m[2].str())));
        }
    }
    return out;
}

std::vector<std::string> plain_lines(const std::string& text) {
    std::vector<std::string> out;
    for (const auto& line : split_lines(text)) {
        auto s = std::string(trim(strip_bullet(line)));
        if (!s.empty()) out.push_back(std::move(s));
    }
    return out;
}

std::string format_candidates(const CandidateSet& set) {
    std::string out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (i) out += ", ";
        out += "\"" + set.candidates[i].text + "\"";
    }
    return out;
}

}  // namespace

std::vector<std::string> parse_issues(const std::string& text, int max_issues) {
    std::vector<std::string> out;
    std::vector<std::string> seen;
    for (const auto& line : split_lines(text)) {
        std::string rest = line;
        std::size_t q;
        while ((q = rest.find('?')) != std::string::npos) {
            auto segment = std::string(trim(strip_bullet(rest.substr(0, q + 1))));
            rest = rest.substr(q + 1);
            // The closing quote, if any, stays in `rest`; drop the opening one.
            segment = std::string(trim(strip_quotes(segment)));
            while (!segment.empty() && (segment.front() == '"' || segment.front() == '\'')) segment.erase(0, 1);
            if (segment.size() < 2) continue;
            auto key = normalize_answer(segment);
            if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
            seen.push_back(key);
            out.push_back(std::move(segment));
            if (static_cast<int>(out.size()) == max_issues) return out;
        }
    }
    if (out.empty()) throw ParseError("no relevant issue (question) found in LLM output");
    return out;
}

std::vector<std::optional<std::string>> parse_hypotheses(const std::string& text, std::size_t count) {
    std::vector<std::optional<std::string>> out(count);
    auto indexed = indexed_lines(text);
    if (!indexed.empty()) {
        for (const auto& [idx, body] : indexed) {
            if (idx >= 1 && idx <= count && !body.empty()) out[idx - 1] = strip_quotes(body);
        }
        return out;
    }
    auto lines = plain_lines(text);
    for (std::size_t i = 0; i < count && i < lines.size(); ++i) out[i] = strip_quotes(lines[i]);
    return out;
}

ParsedScore parse_single_score(const std::string& text) {
    ParsedScore out;
    out.raw = std::string(trim(text));
    std::smatch m;
    if (!std::regex_search(text, m, number_token())) return out;
    double v = std::stod(m[1].str());
    if (m[2].matched) v /= 100.0;
    if (v > 1.0) {
        v = 1.0;
        out.clamped = true;
    } else if (v < 0.0) {
        v = 0.0;
        out.clamped = true;
    }
    out.value = v;
    return out;
}

std::vector<ParsedScore> parse_scores(const std::string& text, std::size_t count) {
    std::vector<ParsedScore> out(count);
    auto indexed = indexed_lines(text);
    if (!indexed.empty()) {
        for (const auto& [idx, body] : indexed) {
            if (idx >= 1 && idx <= count) out[idx - 1] = parse_single_score(body);
        }
        return out;
    }
    auto lines = plain_lines(text);
    for (std::size_t i = 0; i < count && i < lines.size(); ++i) out[i] = parse_single_score(lines[i]);
    return out;
}

std::string fallback_hypothesis(const std::string& issue, const std::string& issue_answer, const std::string& question,
                                const std::string& question_answer) {
    return "If " + issue + " is answered \"" + issue_answer + "\", then the answer to \"" + question + "\" is \"" +
           question_answer + "\".";
}

// ---------------------------------------------------------------------------
// Stages

std::vector<RelevantIssue> relevant_issues(const AgentContext& ctx, const std::string& question, const CandidateSet& qac,
                                           const std::string& caption, const SeekerOptions& opts) {
    if (opts.caption_in_issue_gen && trim(caption).empty())
        throw std::invalid_argument("relevant issue generation needs a caption");
    TracedBackend llm(ctx.llm, ctx.trace, Stage::issues);
    GenerationRequest req;
    req.prompt = ctx.templates.issues.render({
        {"question", question},
        {"caption", opts.caption_in_issue_gen ? caption : std::string{}},
        {"candidates", opts.candidates_in_issue_gen ? format_candidates(qac) : std::string{}},
        {"n_issues", std::to_string(opts.n_issues)},
    });
    const auto text = llm_complete(llm, req);

    std::vector<RelevantIssue> issues;
    try {
        int id = 0;
        for (auto& t : parse_issues(text, opts.n_issues)) issues.push_back({std::move(t), ++id, {}});
    } catch (const ParseError& e) {
        ctx.trace(Stage::error, {{"event", "error"}, {"stage", "issues"}, {"message", e.what()}});
        throw;
    }
    json listed = json::array();
    for (const auto& i : issues) listed.push_back({{"id", i.id}, {"text", i.text}});
    ctx.trace(Stage::issues, {{"event", "decision"}, {"issues", listed}});
    return issues;
}

std::vector<Hypothesis> hypotheses(const AgentContext& ctx, const RelevantIssue& issue, const std::string& question,
                                   const CandidateSet& qac) {
    if (issue.candidates.empty()) throw std::invalid_argument("issue answer candidates not populated");

    std::vector<Hypothesis> out;
    std::ostringstream pairs;
    for (std::size_t i = 0; i < qac.size(); ++i) {
        for (std::size_t j = 0; j < issue.candidates.size(); ++j) {
            Hypothesis h;
            h.question_candidate = qac.candidates[i];
            h.issue_candidate = issue.candidates.candidates[j];
            h.issue_id = issue.id;
            h.issue = issue.text;
            h.question_rank = static_cast<int>(i);
            h.issue_rank = static_cast<int>(j);
            if (!out.empty()) pairs << "\n";
            pairs << out.size() + 1 << ". relevant issue answer \"" << h.issue_candidate.text
                  << "\" -> question answer \"" << h.question_candidate.text << "\"";
            out.push_back(std::move(h));
        }
    }

    TracedBackend llm(ctx.llm, ctx.trace, Stage::hypotheses);
    GenerationRequest req;
    req.prompt = ctx.templates.hypotheses.render({
        {"question", question},
        {"candidates", format_candidates(qac)},
        {"issue", issue.text},
        {"issue_candidates", format_candidates(issue.candidates)},
        {"pairs", pairs.str()},
    });
    const auto parsed = parse_hypotheses(llm_complete(llm, req), out.size());

    json listed = json::array();
    json synthesized = json::array();
    for (std::size_t n = 0; n < out.size(); ++n) {
        auto& h = out[n];
        if (parsed[n]) {
            h.text = *parsed[n];
        } else {
            h.text = fallback_hypothesis(issue.text, h.issue_candidate.text, question, h.question_candidate.text);
            h.synthesized = true;
            synthesized.push_back(n + 1);
        }
        listed.push_back({{"index", n + 1},
                          {"text", h.text},
                          {"question_answer", h.question_candidate.text},
                          {"issue_answer", h.issue_candidate.text},
                          {"synthesized", h.synthesized}});
    }
    if (!synthesized.empty()) {
        ctx.trace(Stage::error, {{"event", "error"},
                                 {"stage", "hypotheses"},
                                 {"message", "LLM omitted hypotheses; fallback pattern used"},
                                 {"issue_id", issue.id},
                                 {"indices", synthesized}});
    }
    ctx.trace(Stage::hypotheses, {{"event", "decision"}, {"issue_id", issue.id}, {"hypotheses", listed}});
    return out;
}

std::vector<std::optional<ConfidenceScore>> confidence_scores(const AgentContext& ctx, const std::string& caption,
                                                              const std::vector<Hypothesis>& hyps,
                                                              const SeekerOptions& opts) {
    if (hyps.empty()) throw std::invalid_argument("no hypotheses to score");
    if (opts.caption_in_confidence && trim(caption).empty())
        throw std::invalid_argument("confidence scoring needs a caption");
    const std::string scene = opts.caption_in_confidence ? caption : std::string{};

    TracedBackend llm(ctx.llm, ctx.trace, Stage::scores);
    std::vector<ParsedScore> parsed;
    if (opts.batched_scores) {
        std::ostringstream listed;
        for (std::size_t n = 0; n < hyps.size(); ++n) listed << (n ? "\n" : "") << n + 1 << ". " << hyps[n].text;
        GenerationRequest req;
        req.prompt = ctx.templates.confidence.render({{"caption", scene}, {"hypotheses", listed.str()}});
        parsed = parse_scores(llm_complete(llm, req), hyps.size());
    } else {
        for (const auto& h : hyps) {
            GenerationRequest req;
            req.prompt = ctx.templates.confidence.render({{"caption", scene}, {"hypotheses", "1. " + h.text}});
            parsed.push_back(parse_scores(llm_complete(llm, req), 1).front());
        }
    }

    std::vector<std::optional<ConfidenceScore>> out;
    json scores = json::array();
    for (std::size_t n = 0; n < hyps.size(); ++n) {
        const auto& p = parsed[n];
        json item = {{"index", n + 1}, {"raw", p.raw}};
        if (p.value) {
            out.emplace_back(ConfidenceScore(*p.value));
            item["score"] = *p.value;
            if (p.clamped) {
                item["clamped"] = true;
                ctx.trace(Stage::error, {{"event", "error"},
                                         {"stage", "scores"},
                                         {"message", "score out of [0,1] clamped"},
                                         {"issue_id", hyps[n].issue_id},
                                         {"index", n + 1},
                                         {"raw", p.raw}});
            }
        } else {
            out.emplace_back(std::nullopt);
            item["score"] = nullptr;
            ctx.trace(Stage::error, {{"event", "error"},
                                     {"stage", "scores"},
                                     {"message", "no score for hypothesis; dropped"},
                                     {"issue_id", hyps[n].issue_id},
                                     {"index", n + 1},
                                     {"raw", p.raw}});
        }
        scores.push_back(std::move(item));
    }
    ctx.trace(Stage::scores, {{"event", "decision"}, {"issue_id", hyps.front().issue_id}, {"scores", scores}});
    return out;
}

std::vector<RelevantIssue> filter_issues(const std::vector<RelevantIssue>& issues, double tau) {
    std::vector<RelevantIssue> out;
    for (const auto& issue : issues) {
        if (issue.candidates.empty()) throw std::invalid_argument("issue answer candidates not populated");
        if (issue.candidates.top().confidence >= tau) out.push_back(issue);
    }
    return out;
}

Mvkb build_mvkb(const AgentContext& ctx, const QuestionImagePair& pair, const CandidateSet& qac,
                const std::string& caption, const SeekerOptions& opts) {
    Mvkb mvkb;
    mvkb.question = pair.question;
    mvkb.question_candidates = qac;
    mvkb.caption = caption;

    auto issues = relevant_issues(ctx, pair.question, qac, caption, opts);
    std::vector<RelevantIssue> answered;
    for (auto& issue : issues) {
        QuestionImagePair sub{issue.text, pair.image, {}, pair.sample_id};
        try {
            issue.candidates = answer_candidates(ctx, sub, opts.k, Stage::issue_candidates);
        } catch (const DegenerateError& e) {
            ctx.trace(Stage::error,
                      {{"event", "error"}, {"stage", "issue-candidates"}, {"issue_id", issue.id}, {"message", e.what()}});
            continue;
        }
        ctx.trace(Stage::issue_candidates, {{"event", "decision"},
                                            {"issue_id", issue.id},
                                            {"issue", issue.text},
                                            {"candidates", to_json(issue.candidates)["candidates"]}});
        answered.push_back(issue);
    }
    mvkb.issues = answered;

    const auto retained = filter_issues(answered, opts.tau);
    json kept = json::array();
    json discarded = json::array();
    for (const auto& issue : answered) {
        const bool keep = std::any_of(retained.begin(), retained.end(), [&](const auto& r) { return r.id == issue.id; });
        (keep ? kept : discarded).push_back(issue.id);
    }
    ctx.trace(Stage::issues, {{"event", "filter"}, {"tau", opts.tau}, {"retained", kept}, {"discarded", discarded}});

    for (const auto& issue : retained) {
        mvkb.retained_issue_ids.push_back(issue.id);
        const auto hyps = hypotheses(ctx, issue, pair.question, qac);
        const auto scores = confidence_scores(ctx, caption, hyps, opts);
        json words = json::array();
        for (std::size_t n = 0; n < hyps.size(); ++n) {
            if (!scores[n]) continue;
            MvkbEntry entry{hyps[n], to_confidence_word(*scores[n]), scores[n]->value(), hyps[n].issue_candidate.confidence};
            words.push_back({{"index", n + 1},
                             {"hypothesis", entry.hypothesis.text},
                             {"score", entry.score},
                             {"word", to_string(entry.word)},
                             {"weight", entry.issue_answer_weight}});
            mvkb.entries.push_back(std::move(entry));
        }
        ctx.trace(Stage::words, {{"event", "decision"}, {"issue_id", issue.id}, {"entries", words}});
    }
    if (mvkb.entries.empty()) {
        ctx.trace(Stage::error, {{"event", "error"}, {"stage", "words"}, {"message", "MVKB is empty"}});
    }
    return mvkb;
}

}  // namespace siri
