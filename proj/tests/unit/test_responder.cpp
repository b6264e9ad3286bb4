#include "siri/answers.hpp"
#include "siri/errors.hpp"
#include "siri/responder.hpp"
#include "world.hpp"

#include <doctest.h>

#include <numeric>
#include <random>

using namespace siri;
using siri::testing::ScriptedBackend;

namespace {

double mass(const CandidateSet& s) {
    return std::accumulate(s.candidates.begin(), s.candidates.end(), 0.0,
                           [](double acc, const ScoredAnswer& a) { return acc + a.confidence; });
}

}  // namespace

TEST_CASE("open-ended candidates keep model order and scores") {
    const auto s = shape_candidates({{"yes", 0.6}, {"no", 0.3}, {"maybe", 0.1}}, {}, 2, "q");
    REQUIRE(s.size() == 2);
    CHECK(s.candidates[0] == ScoredAnswer{"yes", 0.6});
    CHECK(s.candidates[1] == ScoredAnswer{"no", 0.3});
    CHECK(s.source_question == "q");
    CHECK(s.rank_of("no") == 1);
    CHECK(s.rank_of("nope") == -1);
}

TEST_CASE("normalized duplicates merge into the first spelling") {
    const auto s = shape_candidates({{"Yes.", 0.4}, {"no", 0.35}, {"yes", 0.2}}, {}, 2, "q");
    CHECK(s.candidates[0].text == "Yes.");
    CHECK(s.candidates[0].confidence == doctest::Approx(0.6));
    CHECK(s.candidates[1].text == "no");

    // Merged mass above 1 rescales the whole list to sum 1.
    const auto over = shape_candidates({{"a", 0.8}, {"A", 0.7}, {"b", 0.5}}, {}, 2, "q");
    CHECK(over.candidates[0].confidence == doctest::Approx(0.75));
    CHECK(over.candidates[1].confidence == doctest::Approx(0.25));
}

TEST_CASE("multiple-choice candidates map by text or letter") {
    const std::vector<std::string> choices{"attract", "repel"};
    const auto s = shape_candidates({{"(B)", 0.5}, {"Attract.", 0.3}}, choices, 2, "q");
    CHECK(s.candidates[0] == ScoredAnswer{"repel", 0.5});
    CHECK(s.candidates[1] == ScoredAnswer{"attract", 0.3});
}

TEST_CASE("off-choice mass is shared in proportion to the survivors") {
    const std::vector<std::string> choices{"red", "blue", "green"};
    const auto s = shape_candidates({{"red", 0.4}, {"purple", 0.3}, {"blue", 0.2}}, choices, 2, "q");
    REQUIRE(s.size() == 2);
    CHECK(s.candidates[0].text == "red");
    CHECK(s.candidates[0].confidence == doctest::Approx(0.4 + 0.3 * 0.4 / 0.6));
    CHECK(s.candidates[1].confidence == doctest::Approx(0.2 + 0.3 * 0.2 / 0.6));
    CHECK(mass(s) == doctest::Approx(0.9));
}

TEST_CASE("short lists are padded with unused choices at zero") {
    const std::vector<std::string> choices{"A dog", "a cat", "a bird"};
    const auto s = shape_candidates({{"cat", 0.9}}, choices, 3, "q");
    REQUIRE(s.size() == 3);
    CHECK(s.candidates[0] == ScoredAnswer{"a cat", 0.9});
    CHECK(s.candidates[1] == ScoredAnswer{"A dog", 0.0});
    CHECK(s.candidates[2] == ScoredAnswer{"a bird", 0.0});
}

TEST_CASE("too few distinct candidates") {
    CHECK_THROWS_AS(shape_candidates({{"yes", 0.5}, {"Yes", 0.4}}, {}, 2, "q"), DegenerateError);
    CHECK_THROWS_AS(shape_candidates({{"x", 0.5}}, {"only"}, 2, "q"), DegenerateError);
    CHECK_THROWS_AS(shape_candidates({}, {}, 0, "q"), std::invalid_argument);
}

TEST_CASE("shaped candidates are distinct, sorted, in [0,1] and exactly K") {
    std::mt19937 rng(11);
    const std::vector<std::string> words{"yes", "Yes", "no", "the cat", "cat", "dog", "A", "b", "red."};
    const std::vector<std::string> choices{"cat", "dog", "red", "no"};
    for (int iter = 0; iter < 2000; ++iter) {
        std::vector<ScoredAnswer> raw;
        const int n = std::uniform_int_distribution<int>(0, 6)(rng);
        for (int i = 0; i < n; ++i) {
            raw.push_back({words[rng() % words.size()], std::uniform_real_distribution<double>(0, 0.6)(rng)});
        }
        const int k = std::uniform_int_distribution<int>(1, 3)(rng);
        const bool mc = rng() % 2 == 0;
        try {
            const auto s = shape_candidates(raw, mc ? choices : std::vector<std::string>{}, k, "q");
            REQUIRE(s.size() == static_cast<std::size_t>(k));
            for (std::size_t i = 0; i < s.size(); ++i) {
                CHECK(s.candidates[i].confidence >= 0.0);
                CHECK(s.candidates[i].confidence <= 1.0);
                if (i) CHECK(s.candidates[i - 1].confidence >= s.candidates[i].confidence);
                CHECK(s.rank_of(normalize_answer(s.candidates[i].text)) == static_cast<int>(i));
                if (mc) CHECK(match_choice(s.candidates[i].text, choices).has_value());
            }
        } catch (const DegenerateError&) {
            CHECK_FALSE(mc);
        }
    }
}

TEST_CASE("agents send the fixed prompts") {
    std::vector<GenerationRequest> seen;
    auto vlm = std::make_shared<ScriptedBackend>(BackendKind::vlm, "v", [&](const GenerationRequest& r) -> ModelResponse {
        seen.push_back(r);
        if (r.prompt == "a photo of :") return std::vector<ScoredAnswer>{{"  a red barn \n", 1.0}};
        return std::vector<ScoredAnswer>{{"yes", 0.7}, {"no", 0.2}};
    });
    auto llm = std::make_shared<ScriptedBackend>(BackendKind::llm, "l", [](const GenerationRequest&) { return "x"; });
    const auto templates = TemplateSet::defaults();
    TraceStore store;
    const AgentContext ctx{*vlm, *llm, templates, Tracer(&store, "s")};
    const QuestionImagePair pair{"Is it red?", ImageRef::from_bytes("img"), {}, "s"};

    const auto qac = answer_candidates(ctx, pair, 2);
    CHECK(qac.top().text == "yes");
    CHECK(caption(ctx, pair.image) == "a red barn");
    CHECK(reanswer(ctx, "context text.  \n", pair).text == "yes");

    REQUIRE(seen.size() == 3);
    CHECK(seen[0].prompt == "Is it red? short question:");
    CHECK(seen[0].candidate_count == 2);
    CHECK(seen[1].prompt == "a photo of :");
    CHECK(seen[1].candidate_count == 1);
    CHECK(seen[2].prompt == "context text. short question:");
    CHECK(seen[2].candidate_count == 1);
    for (const auto& r : seen) CHECK(r.image->digest() == pair.image.digest());

    const auto evs = store.export_sample("s");
    REQUIRE(evs.size() == 3);
    CHECK(evs[0].stage == Stage::candidates);
    CHECK(evs[1].stage == Stage::caption);
    CHECK(evs[2].stage == Stage::reanswer);
}

TEST_CASE("empty caption is a protocol error") {
    auto vlm = std::make_shared<ScriptedBackend>(BackendKind::vlm, "v", [](const GenerationRequest&) {
        return std::vector<ScoredAnswer>{{"   ", 1.0}};
    });
    auto llm = std::make_shared<ScriptedBackend>(BackendKind::llm, "l", [](const GenerationRequest&) { return "x"; });
    const auto templates = TemplateSet::defaults();
    const AgentContext ctx{*vlm, *llm, templates, Tracer{}};
    CHECK_THROWS_AS(caption(ctx, ImageRef::from_bytes("i")), ProtocolError);
}

TEST_CASE("candidate set JSON round-trips") {
    const CandidateSet s{{{"yes", 0.6}, {"no", 0.25}}, "q?"};
    const auto back = candidate_set_from_json(to_json(s));
    CHECK(back.candidates == s.candidates);
    CHECK(back.source_question == "q?");
}
