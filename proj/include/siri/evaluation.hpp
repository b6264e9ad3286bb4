#pragma once

#include "siri/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace siri {

struct Accuracy {
    /// nullopt when the population is empty.
    std::optional<double> value;
    std::size_t correct = 0;
    std::size_t count = 0;

    void add(bool ok);
};

nlohmann::json to_json(const Accuracy& a);

struct Report {
    std::string dataset;
    std::size_t total = 0;
    Accuracy baseline;
    Accuracy siri;
    /// Restricted to questions that went through the pipeline and voted.
    Accuracy baseline_through;
    Accuracy siri_through;
    /// Answered at the gate, and answered by the baseline after an empty pool.
    Accuracy siri_gated;
    Accuracy siri_empty_pool;
    std::optional<double> delta;
    std::size_t gated = 0;
    std::size_t empty_pool = 0;
    std::size_t errors = 0;
    std::size_t wrong_to_right = 0;
    std::size_t right_to_wrong = 0;
    /// k -> share of questions whose truth is among the top-k candidates.
    std::map<int, Accuracy> topk;
    /// Confidence word -> number of knowledge-base entries.
    std::map<std::string, std::size_t> confidence_words;
    double eta = 1.0;
    double tau = 0.0;
    int k = 2;
    std::vector<std::string> ablations;
    std::optional<Accuracy> oracle;
};

/// Throws MismatchError when a result has no matching sample.
Report evaluate(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples,
                const PipelineConfig& config, const std::string& dataset = {});

/// Byte-stable: keys sorted, fixed number formatting.
nlohmann::json to_json(const Report& report);
std::string render_table(const Report& report);
/// One row per question: id, truth, baseline, final, gated, pool_empty, error.
std::string results_csv(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples);

/// Share of samples whose truth is among the first k candidates.
Accuracy topk_hit_rate(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples, int k);

}  // namespace siri
