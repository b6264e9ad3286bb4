#pragma once

// Scripted VLM/LLM pair for tests. Each sample owns a unique image; the VLM
// looks the sample up by image digest, the LLM by the question text in the
// prompt. Prompts are recognized through the default templates.

#include "siri/datasets.hpp"
#include "siri/model.hpp"

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace siri::testing {

/// Backend that defers to a function. Calls are counted.
class ScriptedBackend final : public ModelBackend {
public:
    using Fn = std::function<ModelResponse(const GenerationRequest&)>;

    ScriptedBackend(BackendKind kind, std::string model, Fn fn);

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    ModelResponse generate(const GenerationRequest& req) override;
    std::size_t calls() const { return calls_.load(); }

private:
    BackendDescriptor descriptor_;
    Fn fn_;
    std::atomic<std::size_t> calls_{0};
};

struct ScriptedIssue {
    std::string text;
    std::vector<ScoredAnswer> answers;
};

struct ScriptedSample {
    VqaSample sample;
    std::vector<ScoredAnswer> qac;
    std::string caption;
    std::vector<ScriptedIssue> issues;
    /// (issue index, issue answer index, question answer index) -> confidence score.
    std::function<double(int, int, int)> score;
    /// Same key -> VLM answer to the hypothesis-conditioned question.
    std::function<std::string(int, int, int)> reanswer;
    /// Same key -> hypothesis statement; world_hypothesis() when unset.
    std::function<std::string(int, int, int)> hypothesis;
};

/// The statement the scripted LLM writes for one (issue, issue answer, answer) pair.
std::string world_hypothesis(const std::string& issue, const std::string& issue_answer, const std::string& answer);

class World {
public:
    World();
    World(const World&) = delete;
    World& operator=(const World&) = delete;

    /// Image bytes default to a unique payload derived from the sample id.
    void add(ScriptedSample s);

    std::shared_ptr<ScriptedBackend> vlm() const { return vlm_; }
    std::shared_ptr<ScriptedBackend> llm() const { return llm_; }
    const std::vector<VqaSample>& samples() const { return samples_; }
    const ScriptedSample& script(const std::string& id) const;

    /// Generic-format JSONL with inline base64 images.
    std::string to_jsonl() const;

private:
    struct HypothesisKey {
        std::size_t sample;
        int issue;
        int alpha;
        int answer;
    };

    ModelResponse answer_vlm(const GenerationRequest& req) const;
    ModelResponse answer_llm(const GenerationRequest& req) const;

    std::vector<ScriptedSample> scripts_;
    std::vector<VqaSample> samples_;
    std::map<std::string, std::size_t> by_digest_;
    std::map<std::string, std::size_t> by_question_;
    std::map<std::string, HypothesisKey> hypotheses_;
    /// "<issue>\n<issue answer>\n<answer>" -> statement.
    std::map<std::string, std::string> statements_;
    std::shared_ptr<ScriptedBackend> vlm_;
    std::shared_ptr<ScriptedBackend> llm_;
};

/// Will these magnets attract or repel each other? Baseline says repel
/// (0.55); the charge issue and its hypotheses steer the re-answers to attract.
ScriptedSample magnets_sample();

/// Will it rain soon? Cloudy sky; one binary issue about the sky.
ScriptedSample rain_sample();

/// `n` two-choice samples with a mix of baseline-right/wrong and
/// hypothesis-helpful/harmful behaviour, deterministic in `seed`.
std::vector<ScriptedSample> synthetic_samples(int n, unsigned seed = 7);

}  // namespace siri::testing
