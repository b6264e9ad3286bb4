#include "siri/evaluation.hpp"

#include "siri/answers.hpp"
#include "siri/errors.hpp"

#include <cstdio>
#include <sstream>

namespace siri {

using nlohmann::json;

void Accuracy::add(bool ok) {
    ++count;
    if (ok) ++correct;
    value = static_cast<double>(correct) / static_cast<double>(count);
}

json to_json(const Accuracy& a) {
    return {{"accuracy", a.value ? json(*a.value) : json(nullptr)}, {"correct", a.correct}, {"count", a.count}};
}

namespace {

std::map<std::string, const VqaSample*> index_by_id(const std::vector<VqaSample>& samples) {
    std::map<std::string, const VqaSample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;
    return by_id;
}

const VqaSample& lookup(const std::map<std::string, const VqaSample*>& by_id, const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw MismatchError("no sample with id " + id);
    return *it->second;
}

bool baseline_correct(const QuestionResult& r, const VqaSample& s) {
    return !r.candidates.empty() && is_correct(r.baseline.text, s);
}

std::string pct(const Accuracy& a) {
    if (!a.value) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", *a.value * 100.0);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

Accuracy topk_hit_rate(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples, int k) {
    const auto by_id = index_by_id(samples);
    Accuracy a;
    for (const auto& r : results) {
        const auto& s = lookup(by_id, r.sample_id);
        bool hit = false;
        for (std::size_t i = 0; i < r.candidates.size() && static_cast<int>(i) < k; ++i) {
            if (is_correct(r.candidates.candidates[i].text, s)) hit = true;
        }
        a.add(hit);
    }
    return a;
}

Report evaluate(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples,
                const PipelineConfig& config, const std::string& dataset) {
    const auto by_id = index_by_id(samples);
    Report rep;
    rep.dataset = dataset;
    rep.eta = config.eta;
    rep.tau = config.tau;
    rep.k = config.k;
    for (auto a : all_ablations()) {
        if (config.has(a)) rep.ablations.push_back(to_string(a));
    }

    for (const auto& r : results) {
        const auto& s = lookup(by_id, r.sample_id);
        ++rep.total;
        const bool base_ok = baseline_correct(r, s);
        const bool siri_ok = !r.error && is_correct(r.final, s);
        rep.baseline.add(base_ok);
        rep.siri.add(siri_ok);
        if (r.error) {
            ++rep.errors;
        } else if (r.gated) {
            ++rep.gated;
            rep.siri_gated.add(siri_ok);
        } else if (r.final.pool_empty) {
            ++rep.empty_pool;
            rep.siri_empty_pool.add(siri_ok);
        }
        if (r.through_pipeline()) {
            rep.baseline_through.add(base_ok);
            rep.siri_through.add(siri_ok);
        }
        if (!base_ok && siri_ok) ++rep.wrong_to_right;
        if (base_ok && !siri_ok) ++rep.right_to_wrong;
        for (const auto& e : r.mvkb.entries) ++rep.confidence_words[to_string(e.word)];
    }
    for (const auto& word : {"Impossible", "Unlikely", "Possible", "Likely", "Probable"}) rep.confidence_words[word] += 0;
    if (rep.siri.value && rep.baseline.value) rep.delta = *rep.siri.value - *rep.baseline.value;
    for (int k = 1; k <= config.k; ++k) rep.topk[k] = topk_hit_rate(results, samples, k);

    if (config.oracle) {
        const auto o = oracle_select(results, samples);
        Accuracy a;
        for (bool ok : o.per_sample_correct) a.add(ok);
        rep.oracle = a;
    }
    return rep;
}

json to_json(const Report& rep) {
    json topk = json::object();
    for (const auto& [k, a] : rep.topk) topk[std::to_string(k)] = to_json(a);
    json j = {
        {"dataset", rep.dataset},
        {"total", rep.total},
        {"accuracy",
         {
             {"baseline", to_json(rep.baseline)},
             {"siri", to_json(rep.siri)},
             {"baseline_through_pipeline", to_json(rep.baseline_through)},
             {"siri_through_pipeline", to_json(rep.siri_through)},
             {"siri_gated", to_json(rep.siri_gated)},
             {"siri_empty_pool", to_json(rep.siri_empty_pool)},
         }},
        {"delta", rep.delta ? json(*rep.delta) : json(nullptr)},
        {"counts",
         {
             {"gated", rep.gated},
             {"empty_pool", rep.empty_pool},
             {"errors", rep.errors},
             {"through_pipeline", rep.siri_through.count},
         }},
        {"flips", {{"wrong_to_right", rep.wrong_to_right}, {"right_to_wrong", rep.right_to_wrong}}},
        {"topk", topk},
        {"confidence_words", rep.confidence_words},
        {"eta", rep.eta},
        {"tau", rep.tau},
        {"k", rep.k},
        {"ablations", rep.ablations},
    };
    if (rep.oracle) j["oracle_accuracy"] = to_json(*rep.oracle);
    return j;
}

std::string render_table(const Report& rep) {
    std::ostringstream out;
    auto row = [&](const std::string& label, const std::string& value) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %-28s %s\n", label.c_str(), value.c_str());
        out << buf;
    };
    auto frac = [](const Accuracy& a) {
        return pct(a) + " (" + std::to_string(a.correct) + "/" + std::to_string(a.count) + ")";
    };
    out << (rep.dataset.empty() ? std::string("results") : rep.dataset) << ": " << rep.total << " questions\n";
    row("baseline", frac(rep.baseline));
    row("siri", frac(rep.siri));
    if (rep.delta) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%+.2f pp", *rep.delta * 100.0);
        row("delta", buf);
    }
    row("baseline (through pipeline)", frac(rep.baseline_through));
    row("siri (through pipeline)", frac(rep.siri_through));
    if (rep.oracle) row("oracle", frac(*rep.oracle));
    for (const auto& [k, a] : rep.topk) row("top-" + std::to_string(k) + " hit rate", frac(a));
    row("gated / empty pool / errors",
        std::to_string(rep.gated) + " / " + std::to_string(rep.empty_pool) + " / " + std::to_string(rep.errors));
    row("wrong->right / right->wrong", std::to_string(rep.wrong_to_right) + " / " + std::to_string(rep.right_to_wrong));
    char params[96];
    std::snprintf(params, sizeof params, "eta=%.2f tau=%.2f k=%d", rep.eta, rep.tau, rep.k);
    row("parameters", params);
    if (!rep.ablations.empty()) {
        std::string joined;
        for (const auto& a : rep.ablations) joined += (joined.empty() ? "" : ", ") + a;
        row("ablations", joined);
    }
    return out.str();
}

std::string results_csv(const std::vector<QuestionResult>& results, const std::vector<VqaSample>& samples) {
    const auto by_id = index_by_id(samples);
    std::ostringstream out;
    out << "sample_id,truth,baseline,final,baseline_correct,final_correct,gated,pool_empty,error\n";
    for (const auto& r : results) {
        const auto& s = lookup(by_id, r.sample_id);
        out << csv_field(r.sample_id) << ',' << csv_field(s.answer) << ',' << csv_field(r.baseline.text) << ','
            << csv_field(r.final.text) << ',' << baseline_correct(r, s) << ',' << (!r.error && is_correct(r.final, s))
            << ',' << r.gated << ',' << r.final.pool_empty << ',' << csv_field(r.error.value_or("")) << '\n';
    }
    return out.str();
}

}  // namespace siri
