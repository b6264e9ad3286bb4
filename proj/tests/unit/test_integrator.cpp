#include "siri/errors.hpp"
#include "siri/integrator.hpp"
#include "world.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace siri;

namespace {

MvkbEntry entry(const std::string& hypothesis, double score, double weight = 0.5) {
    MvkbEntry e;
    e.hypothesis.text = hypothesis;
    e.hypothesis.issue = "Is the sky cloudy?";
    e.hypothesis.issue_candidate = {"yes", weight};
    e.score = score;
    e.word = to_confidence_word(ConfidenceScore(score));
    e.issue_answer_weight = weight;
    return e;
}

// Weights are multiples of 1/4 so every sum is exact and ties are real.
struct OraclePool {
    std::vector<std::vector<int>> quarters;  // per Qac rank
};

// Brute force: total per candidate, best total, then higher confidence, then lower rank.
std::string oracle_vote(const OraclePool& p, const CandidateSet& qac) {
    int best = -1;
    long best_total = 0;
    for (std::size_t r = 0; r < qac.size(); ++r) {
        if (p.quarters[r].empty()) continue;
        long total = 0;
        for (int q : p.quarters[r]) total += q;
        const bool better = best < 0 || total > best_total ||
                            (total == best_total && qac.candidates[r].confidence > qac.candidates[best].confidence);
        if (better) {
            best = static_cast<int>(r);
            best_total = total;
        }
    }
    return best < 0 ? qac.top().text : qac.candidates[best].text;
}

}  // namespace

TEST_CASE("context composition") {
    const auto e = entry("If the sky is cloudy, it will rain.", 0.8);
    CHECK(compose_context(e, "a cloudy sky", "Will it rain soon?") ==
          "This is a scene of \"a cloudy sky\". In the above scene: If the sky is cloudy, it will rain, Likely. "
          "Will it rain soon?");

    ContextOptions no_word;
    no_word.confidence_word = false;
    CHECK(compose_context(e, "a cloudy sky", "Will it rain soon?", no_word) ==
          "This is a scene of \"a cloudy sky\". In the above scene: If the sky is cloudy, it will rain. Will it rain soon?");

    ContextOptions raw;
    raw.word_conversion = false;
    CHECK(compose_context(e, "a cloudy sky", "Will it rain soon?", raw) ==
          "This is a scene of \"a cloudy sky\". In the above scene: If the sky is cloudy, it will rain, 0.8. "
          "Will it rain soon?");

    ContextOptions bare;
    bare.caption_wrapper = false;
    CHECK(compose_context(e, "a cloudy sky", "Will it rain soon?", bare) ==
          "If the sky is cloudy, it will rain, Likely. Will it rain soon?");

    ContextOptions ia;
    ia.issue_and_answer = true;
    CHECK(compose_context(e, "a cloudy sky", "Will it rain soon?", ia, TemplateSet::defaults(), "no") ==
          "This is a scene of \"a cloudy sky\". In the above scene: Is the sky cloudy? no. Will it rain soon?");
    CHECK(compose_context(e, "a cloudy sky", "Will it rain soon?", ia) ==
          "This is a scene of \"a cloudy sky\". In the above scene: Is the sky cloudy? yes. Will it rain soon?");
}

TEST_CASE("every confidence word can appear in the context") {
    for (double s : {0.1, 0.3, 0.5, 0.8, 0.95}) {
        const auto e = entry("H", s);
        const auto ctx = compose_context(e, "c", "Q?");
        CHECK(ctx == "This is a scene of \"c\". In the above scene: H, " + to_string(e.word) + ". Q?");
    }
}

TEST_CASE("accumulate adds to the matching candidate bucket only") {
    const CandidateSet qac{{{"repel", 0.55}, {"attract", 0.45}}, "q"};
    VotingPool pool;
    CHECK(accumulate(pool, {"Repel.", 1.0}, 0.7, qac) == "repel");
    CHECK(pool.buckets.at("repel") == std::vector<double>{0.7});
    CHECK_FALSE(accumulate(pool, {"maybe", 1.0}, 0.3, qac));
    CHECK_FALSE(accumulate(pool, {"  ", 1.0}, 0.3, qac));
    CHECK(pool.vote_count() == 1);
    CHECK(accumulate(pool, {"attract", 0.2}, entry("h", 0.5, 0.25), qac) == "attract");
    CHECK(pool.buckets.at("attract") == std::vector<double>{0.25});
}

TEST_CASE("weighted vote") {
    const CandidateSet qac{{{"no rain", 0.6}, {"rain", 0.4}}, "q"};
    VotingPool pool;
    pool.buckets["rain"] = {0.6, 0.3};
    pool.buckets["no rain"] = {0.8};
    const auto f = vote(pool, qac);
    CHECK(f.text == "rain");
    CHECK(f.total_weight == doctest::Approx(0.9));
    CHECK_FALSE(f.pool_empty);
    CHECK(f.breakdown.at("no rain") == doctest::Approx(0.8));
}

TEST_CASE("vote ties go to the higher candidate confidence, then the earlier rank") {
    const CandidateSet qac{{{"a", 0.5}, {"b", 0.3}, {"c", 0.3}}, "q"};
    VotingPool pool;
    pool.buckets["b"] = {0.5};
    pool.buckets["a"] = {0.25, 0.25};
    CHECK(vote(pool, qac).text == "a");
    pool.buckets.erase("a");
    pool.buckets["c"] = {0.5};
    CHECK(vote(pool, qac).text == "b");
}

TEST_CASE("empty pool falls back to the top-1 candidate") {
    const CandidateSet qac{{{"yes", 0.6}, {"no", 0.4}}, "q"};
    const auto f = vote(VotingPool{}, qac);
    CHECK(f.text == "yes");
    CHECK(f.pool_empty);
    CHECK(f.total_weight == 0.0);
    CHECK_THROWS_AS(vote(VotingPool{}, CandidateSet{}), std::invalid_argument);
}

TEST_CASE("unweighted vote is a plain count") {
    const CandidateSet qac{{{"a", 0.9}, {"b", 0.1}}, "q"};
    VotingPool pool;
    pool.buckets["a"] = {1, 1};
    pool.buckets["b"] = {1, 1, 1};
    CHECK(vote(pool, qac).text == "b");
}

TEST_CASE("vote matches the brute-force oracle, including ties") {
    std::mt19937 rng(17);
    for (int iter = 0; iter < 3000; ++iter) {
        const int n = std::uniform_int_distribution<int>(1, 6)(rng);
        CandidateSet qac;
        for (int r = 0; r < n; ++r) {
            qac.candidates.push_back({"c" + std::to_string(r), std::uniform_int_distribution<int>(0, 4)(rng) / 4.0});
        }
        std::stable_sort(qac.candidates.begin(), qac.candidates.end(),
                         [](const ScoredAnswer& a, const ScoredAnswer& b) { return a.confidence > b.confidence; });
        OraclePool oracle{std::vector<std::vector<int>>(static_cast<std::size_t>(n))};
        VotingPool pool;
        const int votes = std::uniform_int_distribution<int>(0, 20)(rng);
        for (int v = 0; v < votes; ++v) {
            const int r = std::uniform_int_distribution<int>(0, n - 1)(rng);
            const int q = std::uniform_int_distribution<int>(0, 4)(rng);
            oracle.quarters[static_cast<std::size_t>(r)].push_back(q);
            pool.buckets[qac.candidates[static_cast<std::size_t>(r)].text].push_back(q / 4.0);
        }
        CHECK(vote(pool, qac).text == oracle_vote(oracle, qac));
    }
}

TEST_CASE("vote is invariant to weight order and positive scaling") {
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int iter = 0; iter < 1000; ++iter) {
        const CandidateSet qac{{{"x", 0.5}, {"y", 0.3}, {"z", 0.2}}, "q"};
        VotingPool pool;
        for (const auto& c : qac.candidates) {
            const int n = std::uniform_int_distribution<int>(0, 5)(rng);
            for (int i = 0; i < n; ++i) pool.buckets[c.text].push_back(u(rng));
        }
        const auto base = vote(pool, qac).text;
        VotingPool shuffled = pool;
        for (auto& [_, ws] : shuffled.buckets) std::shuffle(ws.begin(), ws.end(), rng);
        CHECK(vote(shuffled, qac).text == base);
        VotingPool scaled = pool;
        for (auto& [_, ws] : scaled.buckets) {
            for (auto& w : ws) w *= 4.0;
        }
        CHECK(vote(scaled, qac).text == base);
    }
}

TEST_CASE("integrate re-answers once per MVKB entry") {
    testing::World w;
    auto s = testing::rain_sample();
    s.issues.push_back({"Is the ground wet?", {{"no", 0.6}, {"yes", 0.4}}});
    w.add(s);
    const auto templates = TemplateSet::defaults();
    const AgentContext ctx{*w.vlm(), *w.llm(), templates, Tracer{}};
    const auto pair = w.samples().front().pair();
    const CandidateSet qac{{{"yes", 0.6}, {"no", 0.4}}, pair.question};
    const auto mvkb = build_mvkb(ctx, pair, qac, s.caption, SeekerOptions{});
    REQUIRE(mvkb.entries.size() == 8);

    const auto before = w.vlm()->calls();
    const auto result = integrate(ctx, mvkb, pair, qac, s.caption);
    CHECK(w.vlm()->calls() - before == 8);
    CHECK(result.outcomes.size() == 8);
    CHECK(result.pool.vote_count() == 8);
    for (std::size_t n = 0; n < result.outcomes.size(); ++n) {
        CHECK(result.outcomes[n].entry_index == static_cast<int>(n));
        CHECK(result.outcomes[n].weight == mvkb.entries[n].issue_answer_weight);
    }

    IntegratorOptions unweighted;
    unweighted.weighted = false;
    for (const auto& o : integrate(ctx, mvkb, pair, qac, s.caption, unweighted).outcomes) CHECK(o.weight == 1.0);

    CHECK_THROWS_AS(integrate(ctx, mvkb, pair, qac, ""), std::invalid_argument);
}

TEST_CASE("failed re-answers are recorded and skipped") {
    auto vlm = std::make_shared<testing::ScriptedBackend>(BackendKind::vlm, "v", [](const GenerationRequest&) -> ModelResponse {
        throw TransportError("down", 3);
    });
    auto llm = std::make_shared<testing::ScriptedBackend>(BackendKind::llm, "l", [](const GenerationRequest&) { return "x"; });
    const auto templates = TemplateSet::defaults();
    const AgentContext ctx{*vlm, *llm, templates, Tracer{}};
    const CandidateSet qac{{{"yes", 0.6}, {"no", 0.4}}, "q"};
    Mvkb mvkb;
    mvkb.entries = {entry("h1", 0.5), entry("h2", 0.5)};
    const QuestionImagePair pair{"q", ImageRef::from_bytes("i"), {}, "s"};

    const auto r = integrate(ctx, mvkb, pair, qac, "c");
    CHECK(r.final.text == "yes");
    CHECK(r.final.pool_empty);
    REQUIRE(r.outcomes.size() == 2);
    CHECK(r.outcomes[0].error == "down (after 3 attempts)");

    IntegratorOptions strict;
    strict.empty_pool_fallback = false;
    CHECK_THROWS_AS(integrate(ctx, mvkb, pair, qac, "c", strict), Error);
}

TEST_CASE("final answer and outcome JSON round-trip") {
    FinalAnswer f{"attract", 1.4, false, {{"attract", 1.4}, {"repel", 0.6}}};
    const auto back = final_answer_from_json(to_json(f));
    CHECK(back.text == f.text);
    CHECK(back.total_weight == f.total_weight);
    CHECK(back.pool_empty == f.pool_empty);
    CHECK(back.breakdown == f.breakdown);

    ReanswerOutcome o{3, 2, "maybe", std::nullopt, 0.25, std::string("boom")};
    const auto ob = reanswer_outcome_from_json(to_json(o));
    CHECK(to_json(ob) == to_json(o));
}
