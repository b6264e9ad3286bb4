#include "siri/cli.hpp"

#include "siri/errors.hpp"
#include "siri/evaluation.hpp"
#include "siri/pipeline.hpp"
#include "siri/util.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace siri {

using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flag values; applied over the config file only when given.
struct Flags {
    std::string config_path;
    int k = 2;
    double eta = 1.0;
    double tau = 0.0;
    int n_issues = 2;
    std::vector<std::string> ablations;
    bool oracle = false;
    bool no_caption_wrapper = false;
    bool per_hypothesis_scores = false;
    std::string vlm_endpoint, llm_endpoint, vlm_model, llm_model;
    std::string fixtures;
    std::string cache_dir;
    std::string templates_dir;
    int jobs = 4;
    int max_in_flight = 0;

    std::string dataset = "generic";
    std::string data;
    std::string split;
    std::size_t limit = 0;

    std::string trace_out, report_out, results_out, csv_out;

    // Each subcommand registers its own copy of a flag.
    std::multimap<std::string, CLI::Option*> opts;
    bool given(const std::string& name) const {
        auto [lo, hi] = opts.equal_range(name);
        for (auto it = lo; it != hi; ++it) {
            if (it->second->count() > 0) return true;
        }
        return false;
    }
};

void add_config_flags(CLI::App& app, Flags& f) {
    f.opts.emplace("config", app.add_option("--config", f.config_path, "Pipeline config JSON"));
    f.opts.emplace("k", app.add_option("--k", f.k, "Answer candidates per question"));
    f.opts.emplace("eta", app.add_option("--eta", f.eta, "Skip the pipeline when the baseline top-1 exceeds this"));
    f.opts.emplace("tau", app.add_option("--tau", f.tau, "Discard issues whose top-1 confidence is below this"));
    f.opts.emplace("n-issues", app.add_option("--n-issues", f.n_issues, "Relevant issues per question"));
    f.opts.emplace("ablation", app.add_option("--ablation", f.ablations, "Disable a component (repeatable)"));
    f.opts.emplace("oracle", app.add_flag("--oracle", f.oracle, "Also report best-single-issue accuracy"));
    f.opts.emplace("no-caption-wrapper", app.add_flag("--no-caption-wrapper", f.no_caption_wrapper, "Compose re-answer contexts without the caption"));
    f.opts.emplace("per-hypothesis-scores", app.add_flag("--per-hypothesis-scores", f.per_hypothesis_scores, "One LLM call per confidence score"));
    f.opts.emplace("vlm-endpoint", app.add_option("--vlm-endpoint", f.vlm_endpoint, "VLM chat-completions base URL"));
    f.opts.emplace("llm-endpoint", app.add_option("--llm-endpoint", f.llm_endpoint, "LLM chat-completions base URL"));
    f.opts.emplace("vlm-model", app.add_option("--vlm-model", f.vlm_model, "VLM model identifier"));
    f.opts.emplace("llm-model", app.add_option("--llm-model", f.llm_model, "LLM model identifier"));
    f.opts.emplace("fixtures", app.add_option("--fixtures", f.fixtures, "Serve both models from this fixture JSONL"));
    f.opts.emplace("cache-dir", app.add_option("--cache-dir", f.cache_dir, "On-disk response cache"));
    f.opts.emplace("templates", app.add_option("--templates", f.templates_dir, "Directory of <name>.txt prompt templates"));
    f.opts.emplace("jobs", app.add_option("--jobs", f.jobs, "Questions processed concurrently"));
    f.opts.emplace("max-in-flight", app.add_option("--max-in-flight", f.max_in_flight, "Concurrent calls per backend"));
}

void add_dataset_flags(CLI::App& app, Flags& f) {
    app.add_option("--dataset", f.dataset, "generic | scienceqa | aokvqa | vqarad | winoground");
    app.add_option("--data", f.data, "Dataset root, or the JSONL file for generic")->required();
    app.add_option("--split", f.split, "Dataset split");
    app.add_option("--limit", f.limit, "Use at most this many samples");
}

void add_output_flags(CLI::App& app, Flags& f) {
    app.add_option("--trace-out", f.trace_out, "Write the trace JSONL here");
    app.add_option("--report-out", f.report_out, "Write the report JSON here");
    app.add_option("--results-out", f.results_out, "Write per-question results JSONL here");
    app.add_option("--csv-out", f.csv_out, "Write per-question CSV here");
}

PipelineConfig build_config(const Flags& f) {
    PipelineConfig c;
    try {
        if (!f.config_path.empty()) c = load_config(f.config_path);
        if (f.given("k")) c.k = f.k;
        if (f.given("eta")) c.eta = f.eta;
        if (f.given("tau")) c.tau = f.tau;
        if (f.given("n-issues")) c.n_issues = f.n_issues;
        if (f.given("ablation")) {
            for (const auto& a : f.ablations) c.ablations.insert(ablation_from_string(a));
        }
        if (f.oracle) c.oracle = true;
        if (f.no_caption_wrapper) c.caption_wrapper = false;
        if (f.per_hypothesis_scores) c.batched_scores = false;
        if (f.given("vlm-endpoint")) c.vlm.endpoint = f.vlm_endpoint;
        if (f.given("llm-endpoint")) c.llm.endpoint = f.llm_endpoint;
        if (f.given("vlm-model")) c.vlm.model = f.vlm_model;
        if (f.given("llm-model")) c.llm.model = f.llm_model;
        if (f.given("fixtures")) c.vlm.fixture_path = c.llm.fixture_path = f.fixtures;
        if (f.given("cache-dir")) c.cache_dir = f.cache_dir;
        if (f.given("templates")) c.templates = TemplateSet::load_dir(f.templates_dir);
        if (f.given("jobs")) c.concurrency = f.jobs;
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    } catch (const SchemaError& e) {
        throw UsageError(e.what());
    }
    return c;
}

struct Backends {
    std::shared_ptr<ModelBackend> vlm;
    std::shared_ptr<ModelBackend> llm;
};

Backends build_backends(const PipelineConfig& c, const Flags& f, std::shared_ptr<FixtureStore> record_into = {}) {
    BackendOptions opts;
    opts.cache_dir = c.cache_dir;
    opts.record_into = std::move(record_into);
    opts.max_in_flight = f.max_in_flight;
    try {
        c.vlm.validate();
        c.llm.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return {make_backend(c.vlm, opts), make_backend(c.llm, opts)};
}

std::vector<VqaSample> load_samples(const Flags& f, std::ostream& err) {
    DatasetSpec spec;
    spec.root = f.data;
    spec.split = f.split;
    try {
        spec.format = dataset_tag_from_string(f.dataset);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (f.limit > 0) spec.limit = f.limit;
    auto loaded = load(spec);
    if (loaded.missing_images > 0) err << "skipped " << loaded.missing_images << " samples with missing images\n";
    if (loaded.samples.empty()) throw Error("dataset " + f.data + " has no usable samples");
    return std::move(loaded.samples);
}

void write_outputs(const Flags& f, const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples,
                   const json& report) {
    if (!f.report_out.empty()) write_file_atomic(f.report_out, report.dump(2) + "\n");
    if (!f.results_out.empty()) {
        std::string lines;
        for (const auto& r : results) lines += to_json(r).dump() + "\n";
        write_file_atomic(f.results_out, lines);
    }
    if (!f.csv_out.empty()) write_file_atomic(f.csv_out, results_csv(results, samples));
}

std::unique_ptr<TraceStore> make_trace(const Flags& f) {
    return f.trace_out.empty() ? std::make_unique<TraceStore>() : std::make_unique<TraceStore>(f.trace_out);
}

int cmd_run(const Flags& f, std::ostream& out, std::ostream& err) {
    const auto config = build_config(f);
    const auto samples = load_samples(f, err);
    const auto backends = build_backends(config, f);
    auto trace = make_trace(f);
    const Engine engine(config, backends.vlm, backends.llm, trace.get());
    const auto results = engine.run_dataset(samples);
    const auto report = evaluate(results, samples, config, f.dataset);
    out << render_table(report);
    write_outputs(f, results, samples, to_json(report));
    return 0;
}

// Final answer first, then what the knowledge base held and how the vote went.
void print_ask_summary(const QuestionResult& r, double eta, std::ostream& out) {
    out << r.final.text << "\n";
    out << "baseline: " << r.baseline.text << " (" << format_score(r.baseline.confidence) << ")\n";
    if (r.gated) {
        out << "answered at the gate: top-1 " << format_score(r.baseline.confidence) << " > eta " << format_score(eta)
            << "\n";
        return;
    }
    out << "caption: " << r.caption << "\n";
    out << "knowledge base: " << r.mvkb.entries.size() << " entries from " << r.mvkb.retained_issue_ids.size() << " of "
        << r.mvkb.issues.size() << " issues\n";
    for (const auto& issue : r.mvkb.issues) {
        const bool kept = std::find(r.mvkb.retained_issue_ids.begin(), r.mvkb.retained_issue_ids.end(), issue.id) !=
                          r.mvkb.retained_issue_ids.end();
        out << "  issue " << issue.id << ": " << issue.text << (kept ? "" : " (filtered)") << "\n";
        for (const auto& e : r.mvkb.entries) {
            if (e.hypothesis.issue_id != issue.id) continue;
            out << "    " << to_string(e.word) << ", weight " << format_score(e.issue_answer_weight) << ": "
                << e.hypothesis.text << "\n";
        }
    }
    out << "votes:";
    if (r.final.breakdown.empty()) out << " none, baseline top-1 kept";
    for (const auto& [text, sum] : r.final.breakdown) out << " " << text << "=" << format_score(sum);
    out << "\n";
}

int cmd_ask(const Flags& f, const std::string& image, const std::string& question,
            const std::vector<std::string>& choices, bool show_trace, std::ostream& out) {
    const auto config = build_config(f);
    const auto backends = build_backends(config, f);
    auto trace = make_trace(f);
    const Engine engine(config, backends.vlm, backends.llm, trace.get());
    const QuestionImagePair pair{question, ImageRef::from_file(image), choices, "ask"};
    const auto r = engine.run_question(pair);
    if (!f.trace_out.empty()) trace->flush("ask");
    if (show_trace) out << render_case_study(trace->export_sample("ask")) << "\n";
    if (r.error) throw Error(*r.error);
    print_ask_summary(r, config.eta, out);
    return 0;
}

int cmd_grid(const Flags& f, const std::string& eta_grid, const std::string& tau_grid, std::ostream& out,
             std::ostream& err) {
    auto parse_grid = [](const std::string& spec) {
        if (spec.empty()) return default_grid();
        double lo = 0, hi = 0, step = 0;
        char tail = 0;
        if (std::sscanf(spec.c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &tail) != 3)
            throw UsageError("grid must be lo:hi:step, got '" + spec + "'");
        try {
            return make_grid(lo, hi, step);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    };
    const auto etas = parse_grid(eta_grid);
    const auto taus = parse_grid(tau_grid);

    auto config = build_config(f);
    config.eta = 1.0;
    config.tau = 0.0;
    const auto samples = load_samples(f, err);
    const auto backends = build_backends(config, f);
    auto trace = make_trace(f);
    const Engine engine(config, backends.vlm, backends.llm, trace.get());
    const auto results = engine.run_dataset(samples);
    const auto grid = grid_search(results, samples, etas, taus);

    char line[160];
    std::snprintf(line, sizeof line, "best eta=%.2f tau=%.2f accuracy=%.2f%% (%zu/%zu)\n", grid.best.eta,
                  grid.best.tau, grid.best.accuracy() * 100.0, grid.best.correct, grid.best.total);
    out << line;

    config.eta = grid.best.eta;
    config.tau = grid.best.tau;
    std::vector<QuestionResult> at_best = results;
    for (auto& r : at_best) {
        r.final = answer_at(r, config.eta, config.tau);
        r.gated = !r.error && !r.candidates.empty() && r.baseline.confidence > config.eta;
        r.eta_applied = config.eta;
        r.tau_applied = config.tau;
    }
    auto report = to_json(evaluate(at_best, samples, config, f.dataset));
    json surface = json::array();
    for (const auto& p : grid.surface) {
        surface.push_back({{"eta", p.eta}, {"tau", p.tau}, {"correct", p.correct}, {"total", p.total}});
    }
    report["grid"] = {{"best", {{"eta", grid.best.eta}, {"tau", grid.best.tau}, {"correct", grid.best.correct}}},
                      {"surface", surface}};
    write_outputs(f, results, samples, report);
    return 0;
}

int cmd_render(const std::string& trace_path, const std::string& sample, std::ostream& out) {
    const auto events = TraceStore::load(trace_path);
    std::map<std::string, std::vector<TraceEvent>> by_sample;
    for (const auto& ev : events) by_sample[ev.sample_id].push_back(ev);
    if (!sample.empty()) {
        auto it = by_sample.find(sample);
        if (it == by_sample.end()) throw Error("no sample '" + sample + "' in " + trace_path);
        out << render_case_study(it->second);
        return 0;
    }
    bool first = true;
    for (const auto& [_, evs] : by_sample) {
        if (!first) out << "\n";
        first = false;
        out << render_case_study(evs);
    }
    return 0;
}

int cmd_record(const Flags& f, const std::string& fixtures_out, std::ostream& out, std::ostream& err) {
    const auto config = build_config(f);
    const auto samples = load_samples(f, err);
    auto sink = std::make_shared<FixtureStore>();
    const auto backends = build_backends(config, f, sink);
    auto trace = make_trace(f);
    const Engine engine(config, backends.vlm, backends.llm, trace.get());
    const auto results = engine.run_dataset(samples);
    sink->save(fixtures_out);
    std::size_t errors = 0;
    for (const auto& r : results) errors += r.error ? 1 : 0;
    out << "recorded " << sink->size() << " model calls for " << results.size() << " questions to " << fixtures_out
        << "\n";
    if (errors > 0) err << errors << " questions failed; their calls up to the failure were recorded\n";
    return 0;
}

int cmd_replay(const Flags& f, const std::string& trace_path, std::ostream& out, std::ostream& err) {
    auto config = build_config(f);
    const auto original = TraceStore::load(trace_path);
    auto store = std::make_shared<FixtureStore>(to_fixture(original));
    config.vlm.fixture_path = config.llm.fixture_path = trace_path;
    const auto samples = load_samples(f, err);
    auto vlm = std::make_shared<FixtureBackend>(config.vlm, store);
    auto llm = std::make_shared<FixtureBackend>(config.llm, store);
    auto trace = make_trace(f);
    const Engine engine(config, vlm, llm, trace.get());
    const auto results = engine.run_dataset(samples);

    std::map<std::string, std::vector<TraceEvent>> recorded;
    for (const auto& ev : original) recorded[ev.sample_id].push_back(ev);
    std::size_t diverged = 0;
    for (const auto& s : samples) {
        if (trace_payloads(trace->export_sample(s.id)) != trace_payloads(recorded[s.id])) {
            ++diverged;
            err << "replay diverged for sample " << s.id << "\n";
        }
    }
    const auto report = evaluate(results, samples, config, f.dataset);
    out << render_table(report);
    write_outputs(f, results, samples, to_json(report));
    if (diverged > 0) throw MismatchError(std::to_string(diverged) + " samples diverged from the recorded trace");
    out << "replay matched the recorded trace for " << samples.size() << " samples\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-agent visual question answering with self-generated relevant issues"};
    app.require_subcommand(1);

    Flags f;

    auto* run = app.add_subcommand("run", "Answer a dataset and report accuracy");
    add_config_flags(*run, f);
    add_dataset_flags(*run, f);
    add_output_flags(*run, f);

    std::string image, question;
    std::vector<std::string> choices;
    bool show_trace = false;
    auto* ask = app.add_subcommand("ask", "Answer one question about one image");
    add_config_flags(*ask, f);
    ask->add_option("--image", image, "Image file")->required()->check(CLI::ExistingFile);
    ask->add_option("--question", question, "Question text")->required();
    ask->add_option("--choice", choices, "Answer choice (repeatable)");
    ask->add_flag("--show-trace", show_trace, "Print the reasoning trace");
    ask->add_option("--trace-out", f.trace_out, "Write the trace JSONL here");

    std::string eta_grid, tau_grid;
    auto* grid = app.add_subcommand("grid", "Search eta and tau on one recorded run");
    add_config_flags(*grid, f);
    add_dataset_flags(*grid, f);
    add_output_flags(*grid, f);
    grid->add_option("--eta-grid", eta_grid, "lo:hi:step (default 0.50:1.00:0.01)");
    grid->add_option("--tau-grid", tau_grid, "lo:hi:step (default 0.50:1.00:0.01)");

    auto* oracle = app.add_subcommand("oracle", "Run with best-single-issue accuracy reported");
    add_config_flags(*oracle, f);
    add_dataset_flags(*oracle, f);
    add_output_flags(*oracle, f);

    std::string trace_in, sample;
    auto* render = app.add_subcommand("render-trace", "Print case studies from a trace JSONL");
    render->add_option("--trace", trace_in, "Trace JSONL")->required();
    render->add_option("--sample", sample, "Only this sample id");

    std::string fixtures_out;
    auto* record = app.add_subcommand("record-fixtures", "Run against live backends and save every call");
    add_config_flags(*record, f);
    add_dataset_flags(*record, f);
    record->add_option("--trace-out", f.trace_out, "Write the trace JSONL here");
    record->add_option("--out", fixtures_out, "Fixture JSONL to write")->required();

    auto* replay = app.add_subcommand("replay", "Re-run a dataset from a trace and check it reproduces");
    add_config_flags(*replay, f);
    add_dataset_flags(*replay, f);
    add_output_flags(*replay, f);
    replay->add_option("--trace", trace_in, "Recorded trace JSONL")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, eo;
        const int code = app.exit(e, o, eo);
        out << o.str();
        err << eo.str();
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return cmd_run(f, out, err);
        if (*ask) return cmd_ask(f, image, question, choices, show_trace, out);
        if (*grid) return cmd_grid(f, eta_grid, tau_grid, out, err);
        if (*oracle) {
            f.oracle = true;
            return cmd_run(f, out, err);
        }
        if (*render) return cmd_render(trace_in, sample, out);
        if (*record) return cmd_record(f, fixtures_out, out, err);
        if (*replay) return cmd_replay(f, trace_in, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace siri
