#include "siri/pipeline.hpp"

#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <thread>

namespace siri {

using nlohmann::json;

std::string to_string(Ablation a) {
    switch (a) {
    case Ablation::no_answer_candidates_in_issue_gen: return "no-answer-candidates-in-issue-gen";
    case Ablation::no_caption_in_confidence: return "no-caption-in-confidence";
    case Ablation::no_caption_in_issue_gen: return "no-caption-in-issue-gen";
    case Ablation::no_word_conversion: return "no-word-conversion";
    case Ablation::no_confidence_word_in_context: return "no-confidence-word-in-context";
    case Ablation::unweighted_voting: return "unweighted-voting";
    case Ablation::issue_and_answer_context: return "issue-and-answer-context";
    }
    return "?";
}

const std::vector<Ablation>& all_ablations() {
    static const std::vector<Ablation> all{
        Ablation::no_answer_candidates_in_issue_gen, Ablation::no_caption_in_confidence,
        Ablation::no_caption_in_issue_gen,           Ablation::no_word_conversion,
        Ablation::no_confidence_word_in_context,     Ablation::unweighted_voting,
        Ablation::issue_and_answer_context,
    };
    return all;
}

Ablation ablation_from_string(const std::string& s) {
    for (auto a : all_ablations()) {
        if (to_string(a) == s) return a;
    }
    throw std::invalid_argument("unknown ablation '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

json to_json(const BackendDescriptor& d) {
    return {
        {"endpoint", d.endpoint},
        {"fixture_path", d.fixture_path},
        {"model", d.model},
        {"temperature", d.params.temperature},
        {"max_tokens", d.params.max_tokens},
        {"supports_candidate_count", d.params.supports_candidate_count},
        {"max_prompt_chars", d.params.max_prompt_chars},
    };
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
            throw SchemaError("unknown " + where + " key '" + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

BackendDescriptor backend_descriptor_from_json(const json& j, BackendKind kind) {
    if (!j.is_object()) throw SchemaError("backend must be an object");
    reject_unknown(j,
                   {"endpoint", "fixture_path", "model", "temperature", "max_tokens", "supports_candidate_count",
                    "max_prompt_chars"},
                   "backend");
    BackendDescriptor d;
    d.kind = kind;
    try {
        read(j, "endpoint", d.endpoint);
        read(j, "fixture_path", d.fixture_path);
        read(j, "model", d.model);
        read(j, "temperature", d.params.temperature);
        read(j, "max_tokens", d.params.max_tokens);
        read(j, "supports_candidate_count", d.params.supports_candidate_count);
        read(j, "max_prompt_chars", d.params.max_prompt_chars);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("backend: ") + e.what());
    }
    return d;
}

SeekerOptions PipelineConfig::seeker_options() const {
    SeekerOptions o;
    o.k = k;
    o.n_issues = n_issues;
    o.tau = tau;
    o.candidates_in_issue_gen = !has(Ablation::no_answer_candidates_in_issue_gen);
    o.caption_in_issue_gen = !has(Ablation::no_caption_in_issue_gen);
    o.caption_in_confidence = !has(Ablation::no_caption_in_confidence);
    o.batched_scores = batched_scores;
    return o;
}

IntegratorOptions PipelineConfig::integrator_options() const {
    IntegratorOptions o;
    o.context.caption_wrapper = caption_wrapper;
    o.context.confidence_word = !has(Ablation::no_confidence_word_in_context);
    o.context.word_conversion = !has(Ablation::no_word_conversion);
    o.context.issue_and_answer = has(Ablation::issue_and_answer_context);
    o.weighted = !has(Ablation::unweighted_voting);
    return o;
}

void PipelineConfig::validate() const {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (n_issues < 1) throw std::invalid_argument("n_issues must be >= 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must be in [0, 1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in [0, 1]");
    if (concurrency < 1) throw std::invalid_argument("concurrency must be >= 1");
}

json to_json(const PipelineConfig& c) {
    json ablations = json::array();
    for (auto a : all_ablations()) {
        if (c.has(a)) ablations.push_back(to_string(a));
    }
    return {
        {"k", c.k},
        {"eta", c.eta},
        {"tau", c.tau},
        {"n_issues", c.n_issues},
        {"ablations", ablations},
        {"oracle", c.oracle},
        {"caption_wrapper", c.caption_wrapper},
        {"batched_scores", c.batched_scores},
        {"vlm", to_json(c.vlm)},
        {"llm", to_json(c.llm)},
        {"templates", c.templates.to_json()},
        {"concurrency", c.concurrency},
        {"cache_dir", c.cache_dir},
    };
}

PipelineConfig pipeline_config_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("config must be a JSON object");
    reject_unknown(j,
                   {"k", "eta", "tau", "n_issues", "ablations", "oracle", "caption_wrapper", "batched_scores", "vlm",
                    "llm", "templates", "templates_dir", "concurrency", "cache_dir"},
                   "config");
    PipelineConfig c;
    try {
        read(j, "k", c.k);
        read(j, "eta", c.eta);
        read(j, "tau", c.tau);
        read(j, "n_issues", c.n_issues);
        read(j, "oracle", c.oracle);
        read(j, "caption_wrapper", c.caption_wrapper);
        read(j, "batched_scores", c.batched_scores);
        read(j, "concurrency", c.concurrency);
        read(j, "cache_dir", c.cache_dir);
        if (j.contains("ablations")) {
            for (const auto& a : j["ablations"]) c.ablations.insert(ablation_from_string(a.get<std::string>()));
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    if (j.contains("vlm")) c.vlm = backend_descriptor_from_json(j["vlm"], BackendKind::vlm);
    if (j.contains("llm")) c.llm = backend_descriptor_from_json(j["llm"], BackendKind::llm);
    if (j.contains("templates_dir")) c.templates = TemplateSet::load_dir(j["templates_dir"].get<std::string>());
    if (j.contains("templates")) {
        const auto base = c.templates.to_json();
        json merged = base;
        for (const auto& [name, text] : j["templates"].items()) merged[name] = text;
        c.templates = TemplateSet::from_json(merged);
    }
    return c;
}

PipelineConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
    // Relative fixture, template and cache paths resolve against the config file.
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](json& obj, const char* key) {
        if (obj.is_object() && obj.contains(key) && obj[key].is_string()) {
            const std::filesystem::path p(obj[key].get<std::string>());
            if (!p.empty() && p.is_relative()) obj[key] = (base / p).string();
        }
    };
    if (j.is_object()) {
        resolve(j, "templates_dir");
        resolve(j, "cache_dir");
        if (j.contains("vlm")) resolve(j["vlm"], "fixture_path");
        if (j.contains("llm")) resolve(j["llm"], "fixture_path");
    }
    return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Results

json to_json(const QuestionResult& r) {
    json outcomes = json::array();
    for (const auto& o : r.outcomes) outcomes.push_back(to_json(o));
    return {
        {"sample_id", r.sample_id},
        {"candidates", to_json(r.candidates)},
        {"baseline", {{"text", r.baseline.text}, {"confidence", r.baseline.confidence}}},
        {"final", to_json(r.final)},
        {"gated", r.gated},
        {"caption", r.caption},
        {"mvkb", to_json(r.mvkb)},
        {"pool", to_json(r.pool)},
        {"outcomes", outcomes},
        {"error", r.error ? json(*r.error) : json(nullptr)},
        {"eta", r.eta_applied},
        {"tau", r.tau_applied},
    };
}

QuestionResult question_result_from_json(const json& j) {
    QuestionResult r;
    try {
        r.sample_id = j.at("sample_id").get<std::string>();
        r.candidates = candidate_set_from_json(j.at("candidates"));
        r.baseline = {j.at("baseline").at("text").get<std::string>(), j.at("baseline").at("confidence").get<double>()};
        r.final = final_answer_from_json(j.at("final"));
        r.gated = j.at("gated").get<bool>();
        r.caption = j.value("caption", std::string{});
        r.mvkb = mvkb_from_json(j.at("mvkb"));
        for (const auto& [key, weights] : j.at("pool").items()) r.pool.buckets[key] = weights.get<std::vector<double>>();
        for (const auto& o : j.at("outcomes")) r.outcomes.push_back(reanswer_outcome_from_json(o));
        if (j.contains("error") && j["error"].is_string()) r.error = j["error"].get<std::string>();
        r.eta_applied = j.at("eta").get<double>();
        r.tau_applied = j.at("tau").get<double>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("question result: ") + e.what());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(PipelineConfig config, std::shared_ptr<ModelBackend> vlm, std::shared_ptr<ModelBackend> llm,
               TraceStore* trace)
    : config_(std::move(config)), vlm_(std::move(vlm)), llm_(std::move(llm)), trace_(trace) {
    config_.validate();
    if (!vlm_ || !llm_) throw std::invalid_argument("engine needs both a VLM and an LLM backend");
    if (vlm_->descriptor().kind != BackendKind::vlm) throw std::invalid_argument("VLM slot holds a non-VLM backend");
    if (llm_->descriptor().kind != BackendKind::llm) throw std::invalid_argument("LLM slot holds a non-LLM backend");
}

QuestionResult Engine::run_question(const QuestionImagePair& pair) const {
    QuestionResult r;
    r.sample_id = pair.sample_id;
    r.eta_applied = config_.eta;
    r.tau_applied = config_.tau;
    const Tracer tracer(trace_, pair.sample_id);
    const AgentContext ctx{*vlm_, *llm_, config_.templates, tracer};

    auto timed = [&](const char* stage, auto&& fn) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        r.timing_ms[stage] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    };

    try {
        timed("candidates", [&] { r.candidates = answer_candidates(ctx, pair, config_.k); });
        r.baseline = r.candidates.top();
        tracer(Stage::candidates, {{"event", "decision"},
                                   {"question", pair.question},
                                   {"k", config_.k},
                                   {"candidates", to_json(r.candidates)["candidates"]}});

        r.gated = r.baseline.confidence > config_.eta;
        tracer(Stage::gate, {{"event", "decision"},
                             {"eta", config_.eta},
                             {"top1", r.baseline.confidence},
                             {"gated", r.gated},
                             {"answer", r.baseline.text}});
        if (r.gated) {
            r.final.text = r.baseline.text;
            r.final.pool_empty = true;
            return r;
        }

        timed("caption", [&] { r.caption = caption(ctx, pair.image); });
        ctx.trace(Stage::caption, {{"event", "decision"}, {"caption", r.caption}});
        timed("seeker", [&] { r.mvkb = build_mvkb(ctx, pair, r.candidates, r.caption, config_.seeker_options()); });
        timed("integrator", [&] {
            auto integration = integrate(ctx, r.mvkb, pair, r.candidates, r.caption, config_.integrator_options());
            r.final = std::move(integration.final);
            r.pool = std::move(integration.pool);
            r.outcomes = std::move(integration.outcomes);
        });
    } catch (const std::exception& e) {
        r.error = e.what();
        r.final = FinalAnswer{};
        tracer(Stage::error, {{"event", "error"}, {"stage", "pipeline"}, {"message", e.what()}});
    }
    return r;
}

std::vector<QuestionResult> Engine::run_dataset(const std::vector<VqaSample>& samples) const {
    {
        std::set<std::string> ids;
        for (const auto& s : samples) {
            if (!ids.insert(s.id).second) throw std::invalid_argument("duplicate sample id " + s.id);
        }
    }
    std::vector<QuestionResult> results(samples.size());
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;

    auto worker = [&] {
        for (;;) {
            const auto i = next.fetch_add(1);
            if (i >= samples.size()) return;
            results[i] = run_question(samples[i].pair());
            if (trace_ != nullptr) {
                try {
                    trace_->flush(samples[i].id);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        }
    };

    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(config_.concurrency), samples.size());
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::sort(results.begin(), results.end(),
              [](const QuestionResult& a, const QuestionResult& b) { return a.sample_id < b.sample_id; });
    return results;
}

// ---------------------------------------------------------------------------
// Post-hoc evaluation

FinalAnswer answer_at(const QuestionResult& r, double eta, double tau) {
    if (r.error) return FinalAnswer{};
    if (r.candidates.empty()) throw MismatchError("result " + r.sample_id + " has no candidates");
    if (r.baseline.confidence > eta) {
        FinalAnswer f;
        f.text = r.baseline.text;
        return f;
    }
    if (r.gated)
        throw MismatchError("result " + r.sample_id + " was gated at eta " + format_score(r.eta_applied) +
                            " and cannot be evaluated at eta " + format_score(eta));
    if (tau < r.tau_applied - 1e-12)
        throw MismatchError("result " + r.sample_id + " was filtered at tau " + format_score(r.tau_applied) +
                            " and cannot be evaluated at tau " + format_score(tau));

    std::set<int> kept;
    for (const auto& issue : r.mvkb.issues) {
        const bool retained = std::find(r.mvkb.retained_issue_ids.begin(), r.mvkb.retained_issue_ids.end(), issue.id) !=
                              r.mvkb.retained_issue_ids.end();
        if (retained && !issue.candidates.empty() && issue.candidates.top().confidence >= tau) kept.insert(issue.id);
    }
    VotingPool pool;
    for (const auto& o : r.outcomes) {
        if (o.matched && kept.count(o.issue_id)) pool.buckets[*o.matched].push_back(o.weight);
    }
    return vote(pool, r.candidates);
}

std::vector<double> make_grid(double lo, double hi, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grid step must be positive");
    if (!(hi >= lo)) throw std::invalid_argument("grid upper bound is below the lower bound");
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    std::vector<double> grid;
    for (long i = 0; i <= n; ++i) grid.push_back(std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9);
    return grid;
}

std::vector<double> default_grid() {
    std::vector<double> grid;
    for (int i = 50; i <= 100; ++i) grid.push_back(i / 100.0);
    return grid;
}

namespace {

std::map<std::string, const VqaSample*> index_samples(const std::vector<VqaSample>& samples) {
    std::map<std::string, const VqaSample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;
    return by_id;
}

const VqaSample& sample_for(const std::map<std::string, const VqaSample*>& by_id, const QuestionResult& r) {
    auto it = by_id.find(r.sample_id);
    if (it == by_id.end()) throw MismatchError("no sample with id " + r.sample_id);
    return *it->second;
}

}  // namespace

GridResult grid_search(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples,
                       const std::vector<double>& eta_grid, const std::vector<double>& tau_grid) {
    if (eta_grid.empty() || tau_grid.empty()) throw std::invalid_argument("empty search grid");
    auto etas = eta_grid;
    auto taus = tau_grid;
    std::sort(etas.begin(), etas.end());
    std::sort(taus.begin(), taus.end());
    const auto by_id = index_samples(samples);

    GridResult out;
    bool have_best = false;
    for (double eta : etas) {
        for (double tau : taus) {
            GridPoint p{eta, tau, 0, results.size()};
            for (const auto& r : results) {
                if (is_correct(answer_at(r, eta, tau), sample_for(by_id, r))) ++p.correct;
            }
            // Integer comparison; strict, so earlier (smaller) points win ties.
            if (!have_best || p.correct > out.best.correct) {
                out.best = p;
                have_best = true;
            }
            out.surface.push_back(p);
        }
    }
    return out;
}

OracleResult oracle_select(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples) {
    const auto by_id = index_samples(samples);
    OracleResult out;
    for (const auto& r : results) {
        const auto& sample = sample_for(by_id, r);
        bool correct = !r.error && is_correct(r.final, sample);
        if (!correct && !r.error && !r.gated) {
            for (int id : r.mvkb.retained_issue_ids) {
                VotingPool pool;
                for (const auto& o : r.outcomes) {
                    if (o.issue_id == id && o.matched) pool.buckets[*o.matched].push_back(o.weight);
                }
                if (pool.empty()) continue;
                if (is_correct(vote(pool, r.candidates), sample)) {
                    correct = true;
                    break;
                }
            }
        }
        out.per_sample_correct.push_back(correct);
        ++out.total;
        if (correct) ++out.correct;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backends

std::shared_ptr<ModelBackend> make_backend(const BackendDescriptor& d, const BackendOptions& opts) {
    d.validate();
    std::shared_ptr<ModelBackend> backend;
    if (d.is_fixture()) {
        backend = std::make_shared<FixtureBackend>(d);
    } else {
        std::string key;
        if (const char* k = std::getenv("SIRI_API_KEY")) key = k;
        else if (const char* k2 = std::getenv("OPENAI_API_KEY")) key = k2;
        backend = std::make_shared<HttpBackend>(d, key, opts.retry);
    }
    if (!opts.cache_dir.empty()) {
        backend = std::make_shared<CachedBackend>(backend, std::make_shared<ResponseCache>(opts.cache_dir),
                                                  [](const std::string& msg) { std::cerr << "cache: " << msg << "\n"; });
    }
    if (opts.record_into) backend = std::make_shared<RecordingBackend>(backend, opts.record_into);
    if (opts.max_in_flight > 0) backend = std::make_shared<LimitedBackend>(backend, opts.max_in_flight);
    return backend;
}

}  // namespace siri
