#pragma once

#include "siri/datasets.hpp"
#include "siri/integrator.hpp"
#include "siri/seeker.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace siri {

enum class Ablation {
    no_answer_candidates_in_issue_gen,
    no_caption_in_confidence,
    no_caption_in_issue_gen,
    no_word_conversion,
    no_confidence_word_in_context,
    unweighted_voting,
    issue_and_answer_context,
};

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);
const std::vector<Ablation>& all_ablations();

nlohmann::json to_json(const BackendDescriptor& d);
BackendDescriptor backend_descriptor_from_json(const nlohmann::json& j, BackendKind kind);

struct PipelineConfig {
    int k = 2;
    /// Baseline top-1 strictly above eta skips the pipeline. 1.0 never gates.
    double eta = 1.0;
    double tau = 0.0;
    int n_issues = 2;
    std::set<Ablation> ablations;
    /// Also report the best-single-issue accuracy.
    bool oracle = false;
    bool caption_wrapper = true;
    bool batched_scores = true;
    BackendDescriptor vlm{BackendKind::vlm, {}, {}, {}, {}};
    BackendDescriptor llm{BackendKind::llm, {}, {}, {}, {}};
    TemplateSet templates = TemplateSet::defaults();
    /// Questions in flight at once.
    int concurrency = 4;
    std::string cache_dir;

    bool has(Ablation a) const { return ablations.count(a) > 0; }
    SeekerOptions seeker_options() const;
    IntegratorOptions integrator_options() const;
    /// Throws std::invalid_argument. Backends are checked separately.
    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys are a SchemaError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);

struct QuestionResult {
    std::string sample_id;
    CandidateSet candidates;
    ScoredAnswer baseline;
    FinalAnswer final;
    bool gated = false;
    std::string caption;
    Mvkb mvkb;
    VotingPool pool;
    std::vector<ReanswerOutcome> outcomes;
    std::optional<std::string> error;
    double eta_applied = 1.0;
    double tau_applied = 0.0;
    /// Wall time per stage in milliseconds. Not serialized.
    std::map<std::string, double> timing_ms;

    bool through_pipeline() const { return !error && !gated && !final.pool_empty; }
};

nlohmann::json to_json(const QuestionResult& r);
QuestionResult question_result_from_json(const nlohmann::json& j);

/// Runs questions through Responder, Seeker and Integrator.
class Engine {
public:
    Engine(PipelineConfig config, std::shared_ptr<ModelBackend> vlm, std::shared_ptr<ModelBackend> llm,
           TraceStore* trace = nullptr);

    const PipelineConfig& config() const { return config_; }

    /// Never throws for model or parse failures; they end up in `error`.
    QuestionResult run_question(const QuestionImagePair& pair) const;
    /// Results sorted by sample id. Each sample's trace is flushed as it completes.
    std::vector<QuestionResult> run_dataset(const std::vector<VqaSample>& samples) const;

private:
    PipelineConfig config_;
    std::shared_ptr<ModelBackend> vlm_;
    std::shared_ptr<ModelBackend> llm_;
    TraceStore* trace_;
};

/// Final answer of `r` re-evaluated at (eta, tau) from recorded outcomes,
/// without model calls. Throws MismatchError when the recording cannot
/// answer for that point: a gated question at an eta that no longer gates
/// it, or a tau below the recorded one.
FinalAnswer answer_at(const QuestionResult& r, double eta, double tau);

/// lo, lo+step, ..., hi with values rounded to 1e-9.
std::vector<double> make_grid(double lo, double hi, double step);
/// i/100 for i = 50..100.
std::vector<double> default_grid();

struct GridPoint {
    double eta = 0.0;
    double tau = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct GridResult {
    GridPoint best;
    std::vector<GridPoint> surface;
};

/// Accuracy over the (eta, tau) grid from one recorded run (eta = 1, tau = 0).
/// Ties go to the smaller eta, then the smaller tau.
GridResult grid_search(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples,
                       const std::vector<double>& eta_grid, const std::vector<double>& tau_grid);

struct OracleResult {
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<bool> per_sample_correct;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Counts a question as correct when the standard answer is correct or the
/// vote restricted to any single retained issue is.
OracleResult oracle_select(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples);

// ---------------------------------------------------------------------------
// Backend wiring

struct BackendOptions {
    /// Wraps with a disk response cache when non-empty.
    std::string cache_dir;
    /// Captures every call into this store when set.
    std::shared_ptr<FixtureStore> record_into;
    /// Concurrent calls per backend; 0 leaves it unbounded.
    int max_in_flight = 0;
    RetryPolicy retry;
};

/// Fixture backend when the descriptor names a fixture path, HTTP otherwise.
/// The API key is read from SIRI_API_KEY, then OPENAI_API_KEY.
std::shared_ptr<ModelBackend> make_backend(const BackendDescriptor& d, const BackendOptions& opts = {});

}  // namespace siri
