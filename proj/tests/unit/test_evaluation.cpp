#include "siri/answers.hpp"
#include "siri/errors.hpp"
#include "siri/evaluation.hpp"
#include "world.hpp"

#include <doctest.h>

#include <algorithm>

using namespace siri;
using siri::testing::World;

namespace {

struct Run {
    std::vector<QuestionResult> results;
    std::vector<VqaSample> samples;
    PipelineConfig config;
};

Run synthetic_run(int n, double eta, double tau = 0.0, bool oracle = false) {
    World w;
    for (auto& s : testing::synthetic_samples(n)) w.add(std::move(s));
    Run run;
    run.config.eta = eta;
    run.config.tau = tau;
    run.config.oracle = oracle;
    run.samples = w.samples();
    run.results = Engine(run.config, w.vlm(), w.llm()).run_dataset(run.samples);
    return run;
}

const VqaSample& sample_of(const Run& run, const std::string& id) {
    for (const auto& s : run.samples) {
        if (s.id == id) return s;
    }
    throw std::logic_error("no sample " + id);
}

}  // namespace

TEST_CASE("accuracy accumulates") {
    Accuracy a;
    CHECK_FALSE(a.value);
    for (bool ok : {true, true, false, true}) a.add(ok);
    CHECK(a.value == 0.75);
    CHECK(a.correct == 3);
    CHECK(a.count == 4);
    CHECK(to_json(Accuracy{}).at("accuracy").is_null());
}

TEST_CASE("report counts match a direct recount") {
    const auto run = synthetic_run(40, 0.8);
    const auto rep = evaluate(run.results, run.samples, run.config, "synthetic");

    std::size_t base = 0, siri = 0, gated = 0, empty = 0, w2r = 0, r2w = 0, through = 0;
    for (const auto& r : run.results) {
        const auto& s = sample_of(run, r.sample_id);
        const bool b = normalize_answer(r.baseline.text) == normalize_answer(s.answer);
        const bool f = normalize_answer(r.final.text) == normalize_answer(s.answer);
        base += b;
        siri += f;
        gated += r.gated;
        empty += !r.gated && r.final.pool_empty;
        through += !r.gated && !r.final.pool_empty;
        w2r += !b && f;
        r2w += b && !f;
    }
    CHECK(rep.total == 40);
    CHECK(rep.baseline.correct == base);
    CHECK(rep.siri.correct == siri);
    CHECK(rep.gated == gated);
    CHECK(rep.empty_pool == empty);
    CHECK(rep.siri_through.count == through);
    CHECK(rep.wrong_to_right == w2r);
    CHECK(rep.right_to_wrong == r2w);
    CHECK(*rep.delta == doctest::Approx((static_cast<double>(siri) - static_cast<double>(base)) / 40.0));
    CHECK(rep.errors == 0);
    CHECK(gated > 0);
    CHECK(through > 0);
}

TEST_CASE("overall accuracy is the weighted combination of its partitions") {
    for (double eta : {0.0, 0.6, 0.75, 0.9, 1.0}) {
        const auto run = synthetic_run(30, eta);
        const auto rep = evaluate(run.results, run.samples, run.config);
        CHECK(rep.siri_gated.count + rep.siri_through.count + rep.siri_empty_pool.count + rep.errors == rep.total);
        CHECK(rep.siri_gated.correct + rep.siri_through.correct + rep.siri_empty_pool.correct == rep.siri.correct);
        double combined = 0.0;
        for (const auto* part : {&rep.siri_gated, &rep.siri_through, &rep.siri_empty_pool}) {
            if (part->value) combined += *part->value * static_cast<double>(part->count) / static_cast<double>(rep.total);
        }
        CHECK(combined == doctest::Approx(*rep.siri.value));
        // Gated and empty-pool answers are the baseline answer.
        CHECK(rep.siri_gated.correct + rep.siri_empty_pool.correct + rep.baseline_through.correct ==
              rep.baseline.correct);
    }
}

TEST_CASE("eta of zero reproduces the baseline") {
    const auto run = synthetic_run(30, 0.0);
    const auto rep = evaluate(run.results, run.samples, run.config);
    CHECK(rep.gated == 30);
    CHECK(rep.siri.correct == rep.baseline.correct);
    CHECK(*rep.delta == 0.0);
    CHECK(rep.siri_through.count == 0);
    CHECK_FALSE(rep.siri_through.value);
    CHECK(to_json(rep)["accuracy"]["siri_through_pipeline"]["accuracy"].is_null());
}

TEST_CASE("top-k hit rate grows with k and top-1 is the baseline") {
    const auto run = synthetic_run(30, 1.0);
    const auto rep = evaluate(run.results, run.samples, run.config);
    CHECK(rep.topk.at(1).correct == rep.baseline.correct);
    CHECK(rep.topk.at(2).correct >= rep.topk.at(1).correct);
    CHECK(topk_hit_rate(run.results, run.samples, 5).correct == rep.topk.at(2).correct);
}

TEST_CASE("confidence word histogram covers every word") {
    const auto run = synthetic_run(10, 1.0);
    const auto rep = evaluate(run.results, run.samples, run.config);
    std::size_t total = 0;
    for (const auto& [_, n] : rep.confidence_words) total += n;
    std::size_t entries = 0;
    for (const auto& r : run.results) entries += r.mvkb.entries.size();
    CHECK(total == entries);
    CHECK(rep.confidence_words.size() == 5);
}

TEST_CASE("oracle accuracy is reported and dominates") {
    const auto run = synthetic_run(40, 0.9, 0.0, true);
    const auto rep = evaluate(run.results, run.samples, run.config);
    REQUIRE(rep.oracle);
    CHECK(rep.oracle->correct >= rep.siri.correct);
    CHECK(to_json(rep).contains("oracle_accuracy"));
}

TEST_CASE("report JSON is stable and complete") {
    const auto run = synthetic_run(12, 0.8);
    const auto a = to_json(evaluate(run.results, run.samples, run.config, "d")).dump(2);
    const auto b = to_json(evaluate(run.results, run.samples, run.config, "d")).dump(2);
    CHECK(a == b);
    const auto j = nlohmann::json::parse(a);
    for (const auto* key : {"dataset", "total", "accuracy", "delta", "counts", "flips", "topk", "confidence_words", "eta",
                            "tau", "k", "ablations"}) {
        CHECK_MESSAGE(j.contains(key), key);
    }
    CHECK_FALSE(j.contains("oracle_accuracy"));
}

TEST_CASE("errored questions count as wrong") {
    auto run = synthetic_run(4, 1.0);
    run.results[0].error = "backend down";
    run.results[0].final = FinalAnswer{};
    const auto rep = evaluate(run.results, run.samples, run.config);
    CHECK(rep.errors == 1);
    CHECK(rep.siri_through.count == 3 - rep.empty_pool);
    const auto csv = results_csv(run.results, run.samples);
    CHECK(csv.find("backend down") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("results without a sample are rejected") {
    auto run = synthetic_run(2, 1.0);
    run.results[0].sample_id = "ghost";
    CHECK_THROWS_AS(evaluate(run.results, run.samples, run.config), MismatchError);
}

TEST_CASE("text table") {
    const auto run = synthetic_run(6, 0.8);
    const auto table = render_table(evaluate(run.results, run.samples, run.config, "synthetic"));
    CHECK(table.rfind("synthetic: 6 questions\n", 0) == 0);
    CHECK(table.find("top-2 hit rate") != std::string::npos);
    CHECK(table.find("eta=0.80 tau=0.00 k=2") != std::string::npos);
}
