#include "siri/datasets.hpp"

#include "siri/answers.hpp"
#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace siri {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(DatasetTag tag) {
    switch (tag) {
    case DatasetTag::scienceqa: return "scienceqa";
    case DatasetTag::aokvqa: return "aokvqa";
    case DatasetTag::vqarad: return "vqarad";
    case DatasetTag::winoground: return "winoground";
    case DatasetTag::generic: return "generic";
    }
    return "generic";
}

DatasetTag dataset_tag_from_string(const std::string& s) {
    for (auto tag : {DatasetTag::scienceqa, DatasetTag::aokvqa, DatasetTag::vqarad, DatasetTag::winoground,
                     DatasetTag::generic}) {
        if (to_string(tag) == s) return tag;
    }
    throw std::invalid_argument("unknown dataset '" + s + "'");
}

namespace {

const std::set<std::string>& published_splits(DatasetTag tag) {
    static const std::set<std::string> scienceqa{"train", "val", "test", "minitrain", "minival", "minitest"};
    static const std::set<std::string> aokvqa{"train", "val", "test"};
    static const std::set<std::string> vqarad{"train", "test"};
    static const std::set<std::string> winoground{"test"};
    static const std::set<std::string> none{};
    switch (tag) {
    case DatasetTag::scienceqa: return scienceqa;
    case DatasetTag::aokvqa: return aokvqa;
    case DatasetTag::vqarad: return vqarad;
    case DatasetTag::winoground: return winoground;
    case DatasetTag::generic: return none;
    }
    return none;
}

std::string default_split(DatasetTag tag) {
    switch (tag) {
    case DatasetTag::aokvqa: return "val";
    case DatasetTag::generic: return "";
    default: return "test";
    }
}

json parse_json_file(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
}

class Loader {
public:
    explicit Loader(const DatasetSpec& spec) : spec_(spec) {}

    bool full() const { return spec_.limit && out_.samples.size() >= *spec_.limit; }

    // Adds a sample backed by an image file, or counts it as missing.
    void add_with_file(VqaSample sample, const fs::path& image) {
        std::error_code ec;
        if (!fs::is_regular_file(image, ec)) {
            ++out_.missing_images;
            out_.diagnostics.push_back(sample.id + ": missing image " + image.string());
            return;
        }
        sample.image = ImageRef::from_file(image.string());
        out_.samples.push_back(std::move(sample));
    }

    void add(VqaSample sample) { out_.samples.push_back(std::move(sample)); }

    void skip(const std::string& why) { out_.diagnostics.push_back(why); }

    LoadedDataset finish() { return std::move(out_); }

private:
    const DatasetSpec& spec_;
    LoadedDataset out_;
};

void check_truth(const VqaSample& s, const std::string& where) {
    if (s.question.empty()) throw SchemaError(where + ": empty question");
    if (s.choices.empty()) return;
    if (!s.answer_index || *s.answer_index >= s.choices.size() || s.choices[*s.answer_index] != s.answer) {
        throw SchemaError(where + ": ground truth \"" + s.answer + "\" is not one of the choices");
    }
}

LoadedDataset load_generic(const DatasetSpec& spec) {
    std::ifstream in(spec.root);
    if (!in) throw StorageError("cannot open dataset file " + spec.root);
    const fs::path base = fs::path(spec.root).parent_path();
    Loader loader(spec);
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (!loader.full() && std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = spec.root + ":" + std::to_string(lineno);
        try {
            const auto j = json::parse(line);
            VqaSample s;
            s.tag = DatasetTag::generic;
            s.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            s.question = j.at("question").get<std::string>();
            if (j.contains("choices") && !j["choices"].is_null()) s.choices = j["choices"].get<std::vector<std::string>>();
            const auto& ans = j.at("answer");
            if (ans.is_number_integer()) {
                const auto idx = ans.get<long long>();
                if (idx < 0 || static_cast<std::size_t>(idx) >= s.choices.size())
                    throw SchemaError(where + ": answer index " + std::to_string(idx) + " outside choices");
                s.answer_index = static_cast<std::size_t>(idx);
                s.answer = s.choices[*s.answer_index];
            } else {
                s.answer = ans.get<std::string>();
                if (!s.choices.empty()) {
                    auto it = std::find(s.choices.begin(), s.choices.end(), s.answer);
                    if (it != s.choices.end()) s.answer_index = static_cast<std::size_t>(it - s.choices.begin());
                }
            }
            check_truth(s, where);
            if (!ids.insert(s.id).second) throw SchemaError(where + ": duplicate id " + s.id);

            const auto image = j.at("image").get<std::string>();
            if (image.rfind("data:", 0) == 0) {
                const auto comma = image.find(";base64,");
                if (comma == std::string::npos) throw SchemaError(where + ": data URL without ;base64,");
                s.image = ImageRef::from_bytes(base64_decode(image.substr(comma + 8)));
                loader.add(std::move(s));
            } else if (image.rfind("base64:", 0) == 0) {
                s.image = ImageRef::from_bytes(base64_decode(image.substr(7)));
                loader.add(std::move(s));
            } else {
                fs::path p(image);
                loader.add_with_file(std::move(s), p.is_absolute() ? p : base / p);
            }
        } catch (const json::exception& e) {
            throw SchemaError(where + ": " + e.what());
        }
    }
    return loader.finish();
}

LoadedDataset load_scienceqa(const DatasetSpec& spec, const std::string& split) {
    const auto problems_path = (fs::path(spec.root) / "problems.json").string();
    const auto problems = parse_json_file(problems_path);
    Loader loader(spec);
    std::vector<std::string> pids;
    for (const auto& [pid, _] : problems.items()) pids.push_back(pid);
    // Numeric problem ids sort numerically.
    std::sort(pids.begin(), pids.end(), [](const std::string& a, const std::string& b) {
        return a.size() != b.size() ? a.size() < b.size() : a < b;
    });
    for (const auto& pid : pids) {
        if (loader.full()) break;
        const auto& p = problems.at(pid);
        const std::string where = problems_path + " [" + pid + "]";
        try {
            if (p.value("split", "") != split) continue;
            if (!p.contains("image") || p["image"].is_null() || p["image"].get<std::string>().empty()) continue;
            VqaSample s;
            s.tag = DatasetTag::scienceqa;
            s.id = pid;
            s.question = p.at("question").get<std::string>();
            s.choices = p.at("choices").get<std::vector<std::string>>();
            const auto idx = p.at("answer").get<std::size_t>();
            if (idx >= s.choices.size()) throw SchemaError(where + ": answer index outside choices");
            s.answer_index = idx;
            s.answer = s.choices[idx];
            check_truth(s, where);
            loader.add_with_file(std::move(s), fs::path(spec.root) / "images" / split / pid / p["image"].get<std::string>());
        } catch (const json::exception& e) {
            throw SchemaError(where + ": " + e.what());
        }
    }
    return loader.finish();
}

LoadedDataset load_aokvqa(const DatasetSpec& spec, const std::string& split) {
    const auto path = (fs::path(spec.root) / ("aokvqa_v1p0_" + split + ".json")).string();
    const auto records = parse_json_file(path);
    Loader loader(spec);
    std::size_t n = 0;
    for (const auto& r : records) {
        if (loader.full()) break;
        const std::string where = path + " [" + std::to_string(n++) + "]";
        try {
            VqaSample s;
            s.tag = DatasetTag::aokvqa;
            s.id = r.at("question_id").get<std::string>();
            s.question = r.at("question").get<std::string>();
            s.choices = r.at("choices").get<std::vector<std::string>>();
            if (!r.contains("correct_choice_idx") || r["correct_choice_idx"].is_null()) {
                loader.skip(s.id + ": no ground truth in split " + split);
                continue;
            }
            const auto idx = r["correct_choice_idx"].get<std::size_t>();
            if (idx >= s.choices.size()) throw SchemaError(where + ": correct_choice_idx outside choices");
            s.answer_index = idx;
            s.answer = s.choices[idx];
            check_truth(s, where);
            char name[32];
            std::snprintf(name, sizeof name, "%012lld.jpg", r.at("image_id").get<long long>());
            loader.add_with_file(std::move(s), fs::path(spec.root) / (split + "2017") / name);
        } catch (const json::exception& e) {
            throw SchemaError(where + ": " + e.what());
        }
    }
    return loader.finish();
}

LoadedDataset load_vqarad(const DatasetSpec& spec, const std::string& split) {
    const auto path = (fs::path(spec.root) / "VQA_RAD Dataset Public.json").string();
    const auto records = parse_json_file(path);
    Loader loader(spec);
    std::size_t n = 0;
    for (const auto& r : records) {
        if (loader.full()) break;
        const std::string where = path + " [" + std::to_string(n++) + "]";
        try {
            const auto phrase = r.value("phrase_type", std::string{});
            const bool is_test = phrase.rfind("test", 0) == 0;
            if ((split == "test") != is_test) continue;
            VqaSample s;
            s.tag = DatasetTag::vqarad;
            s.id = r.at("qid").is_string() ? r.at("qid").get<std::string>() : r.at("qid").dump();
            s.question = r.at("question").get<std::string>();
            const auto& ans = r.at("answer");
            s.answer = ans.is_string() ? ans.get<std::string>() : ans.dump();
            check_truth(s, where);
            loader.add_with_file(std::move(s), fs::path(spec.root) / "VQA_RAD Image Folder" / r.at("image_name").get<std::string>());
        } catch (const json::exception& e) {
            throw SchemaError(where + ": " + e.what());
        }
    }
    return loader.finish();
}

LoadedDataset load_winoground(const DatasetSpec& spec) {
    const auto path = (fs::path(spec.root) / "examples.jsonl").string();
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open " + path);
    Loader loader(spec);
    std::string line;
    std::size_t lineno = 0;
    while (!loader.full() && std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        try {
            const auto r = json::parse(line);
            const auto id = r.at("id").is_string() ? r.at("id").get<std::string>() : r.at("id").dump();
            const std::string captions[2] = {r.at("caption_0").get<std::string>(), r.at("caption_1").get<std::string>()};
            for (int img = 0; img < 2; ++img) {
                const auto image_path =
                    fs::path(spec.root) / "images" / (r.at("image_" + std::to_string(img)).get<std::string>() + ".png");
                std::error_code ec;
                if (!fs::is_regular_file(image_path, ec)) {
                    for (int cap = 0; cap < 2; ++cap) {
                        loader.add_with_file(winoground_to_vqa({}, captions[cap], img == cap,
                                                               id + "-i" + std::to_string(img) + "-c" + std::to_string(cap)),
                                             image_path);
                    }
                    continue;
                }
                const auto image = ImageRef::from_file(image_path.string());
                for (int cap = 0; cap < 2; ++cap) {
                    if (loader.full()) break;
                    loader.add(winoground_to_vqa(image, captions[cap], img == cap,
                                                 id + "-i" + std::to_string(img) + "-c" + std::to_string(cap)));
                }
            }
        } catch (const json::exception& e) {
            throw SchemaError(where + ": " + e.what());
        }
    }
    return loader.finish();
}

}  // namespace

LoadedDataset load(const DatasetSpec& spec) {
    const auto split = spec.split.empty() ? default_split(spec.format) : spec.split;
    const auto& splits = published_splits(spec.format);
    if (!splits.empty() && !splits.count(split))
        throw SchemaError("split '" + split + "' is not a published split of " + to_string(spec.format));

    switch (spec.format) {
    case DatasetTag::generic: return load_generic(spec);
    case DatasetTag::scienceqa: return load_scienceqa(spec, split);
    case DatasetTag::aokvqa: return load_aokvqa(spec, split);
    case DatasetTag::vqarad: return load_vqarad(spec, split);
    case DatasetTag::winoground: return load_winoground(spec);
    }
    throw std::invalid_argument("unknown dataset format");
}

VqaSample winoground_to_vqa(const ImageRef& image, const std::string& caption, bool label, std::string id) {
    if (caption.empty()) throw std::invalid_argument("winoground caption is empty");
    VqaSample s;
    s.id = std::move(id);
    s.question = "does \"" + caption + "\" describe the image?";
    s.image = image;
    s.choices = {"yes", "no"};
    s.answer_index = label ? 0 : 1;
    s.answer = s.choices[*s.answer_index];
    s.tag = DatasetTag::winoground;
    return s;
}

bool is_correct(const std::string& answer, const VqaSample& sample) {
    const auto norm = normalize_answer(answer);
    if (norm.empty()) return false;
    if (norm == normalize_answer(sample.answer)) return true;
    if (!sample.choices.empty() && sample.answer_index) {
        if (auto idx = match_choice(answer, sample.choices)) return *idx == *sample.answer_index;
    }
    return false;
}

bool is_correct(const FinalAnswer& answer, const VqaSample& sample) { return is_correct(answer.text, sample); }

}  // namespace siri
