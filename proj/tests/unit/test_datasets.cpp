#include "siri/datasets.hpp"
#include "siri/errors.hpp"
#include "siri/util.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace siri;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string write(const std::string& rel, const std::string& content) const {
        const auto p = path / rel;
        write_file_atomic(p.string(), content);
        return p.string();
    }
};

std::string jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    return out;
}

std::vector<std::string> ids(const LoadedDataset& d) {
    std::vector<std::string> out;
    for (const auto& s : d.samples) out.push_back(s.id);
    return out;
}

}  // namespace

TEST_CASE("generic JSONL keeps file order and accepts every image form") {
    TempDir dir("siri-ds-generic");
    dir.write("img/a.png", "file-bytes");
    const auto path = dir.write(
        "data.jsonl",
        jsonl({{{"id", "z"}, {"question", "Q1?"}, {"image", "img/a.png"}, {"choices", {"x", "y"}}, {"answer", "y"}},
               {{"id", 7}, {"question", "Q2?"}, {"image", "data:image/png;base64," + base64_encode("inline")},
                {"answer", "open text"}},
               {{"id", "a"}, {"question", "Q3?"}, {"image", "base64:" + base64_encode("raw")}, {"choices", {"p", "q"}},
                {"answer", 0}}}) +
            "\n");
    const auto d = load({path, "", DatasetTag::generic, std::nullopt});
    CHECK(ids(d) == std::vector<std::string>{"z", "7", "a"});
    CHECK(d.samples[0].image.bytes() == "file-bytes");
    CHECK(d.samples[0].answer_index == 1u);
    CHECK(d.samples[1].image.bytes() == "inline");
    CHECK(d.samples[1].choices.empty());
    CHECK_FALSE(d.samples[1].answer_index);
    CHECK(d.samples[2].image.bytes() == "raw");
    CHECK(d.samples[2].answer == "p");
    CHECK(load({path, "", DatasetTag::generic, 2}).samples.size() == 2);

    // Loading is deterministic.
    const auto again = load({path, "", DatasetTag::generic, std::nullopt});
    REQUIRE(again.samples.size() == d.samples.size());
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        CHECK(again.samples[i].id == d.samples[i].id);
        CHECK(again.samples[i].image.digest() == d.samples[i].image.digest());
    }
}

TEST_CASE("generic JSONL validation") {
    TempDir dir("siri-ds-generic-bad");
    auto row = [](json extra) {
        json r = {{"id", "a"}, {"question", "Q?"}, {"image", "base64:eA=="}, {"answer", "x"}};
        r.update(extra);
        return r;
    };
    const auto bad_truth = dir.write("t.jsonl", jsonl({row(json{{"choices", {"p", "q"}}})}));
    try {
        load({bad_truth, "", DatasetTag::generic, std::nullopt});
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find(bad_truth + ":1") != std::string::npos);
    }
    CHECK_THROWS_AS(load({dir.write("i.jsonl", jsonl({row({{"choices", {"p"}}, {"answer", 3}})})), "",
                          DatasetTag::generic, std::nullopt}),
                    SchemaError);
    CHECK_THROWS_AS(load({dir.write("d.jsonl", jsonl({row(json::object()), row(json::object())})), "", DatasetTag::generic, std::nullopt}),
                    SchemaError);
    CHECK_THROWS_AS(load({dir.write("m.jsonl", "{\"id\":\"a\"}\n"), "", DatasetTag::generic, std::nullopt}), SchemaError);
    CHECK_THROWS_AS(load({dir.write("j.jsonl", "{not json\n"), "", DatasetTag::generic, std::nullopt}), SchemaError);
    CHECK_THROWS_AS(load({(dir.path / "none.jsonl").string(), "", DatasetTag::generic, std::nullopt}), StorageError);

    const auto missing = dir.write("x.jsonl", jsonl({row({{"image", "nope.png"}})}));
    const auto d = load({missing, "", DatasetTag::generic, std::nullopt});
    CHECK(d.samples.empty());
    CHECK(d.missing_images == 1);
}

TEST_CASE("scienceqa: image questions of the split in numeric id order") {
    TempDir dir("siri-ds-scienceqa");
    json problems = {
        {"10", {{"split", "test"}, {"question", "Q10?"}, {"choices", {"a", "b"}}, {"answer", 1}, {"image", "image.png"}}},
        {"9", {{"split", "test"}, {"question", "Q9?"}, {"choices", {"a", "b"}}, {"answer", 0}, {"image", "image.png"}}},
        {"11", {{"split", "test"}, {"question", "No image?"}, {"choices", {"a", "b"}}, {"answer", 0}, {"image", nullptr}}},
        {"12", {{"split", "train"}, {"question", "Q12?"}, {"choices", {"a", "b"}}, {"answer", 0}, {"image", "image.png"}}},
        {"13", {{"split", "test"}, {"question", "Q13?"}, {"choices", {"a", "b"}}, {"answer", 0}, {"image", "image.png"}}},
    };
    dir.write("problems.json", problems.dump());
    dir.write("images/test/9/image.png", "nine");
    dir.write("images/test/10/image.png", "ten");
    const auto d = load({dir.path.string(), "test", DatasetTag::scienceqa, std::nullopt});
    CHECK(ids(d) == std::vector<std::string>{"9", "10"});
    CHECK(d.samples[1].answer == "b");
    CHECK(d.samples[1].image.bytes() == "ten");
    CHECK(d.samples[0].tag == DatasetTag::scienceqa);
    CHECK(d.missing_images == 1);
    CHECK_THROWS_AS(load({dir.path.string(), "dev", DatasetTag::scienceqa, std::nullopt}), SchemaError);
}

TEST_CASE("aokvqa: multiple choice with image ids") {
    TempDir dir("siri-ds-aokvqa");
    json records = json::array({
        {{"question_id", "q1"}, {"question", "What is it?"}, {"choices", {"cat", "dog", "cow", "bird"}},
         {"correct_choice_idx", 2}, {"image_id", 42}},
        {{"question_id", "q2"}, {"question", "Where?"}, {"choices", {"a", "b", "c", "d"}}, {"correct_choice_idx", nullptr},
         {"image_id", 42}},
    });
    dir.write("aokvqa_v1p0_val.json", records.dump());
    dir.write("val2017/000000000042.jpg", "jpeg");
    const auto d = load({dir.path.string(), "", DatasetTag::aokvqa, std::nullopt});
    REQUIRE(d.samples.size() == 1);
    CHECK(d.samples[0].answer == "cow");
    CHECK(d.samples[0].image.bytes() == "jpeg");
    CHECK(d.diagnostics.size() == 1);
}

TEST_CASE("vqarad: split by phrase type, open answers") {
    TempDir dir("siri-ds-vqarad");
    json records = json::array({
        {{"qid", 1}, {"question", "Is there a fracture?"}, {"answer", "yes"}, {"image_name", "a.jpg"},
         {"phrase_type", "freeform"}},
        {{"qid", 2}, {"question", "Which lobe?"}, {"answer", "left"}, {"image_name", "a.jpg"},
         {"phrase_type", "test_freeform"}},
        {{"qid", 3}, {"question", "How many?"}, {"answer", 2}, {"image_name", "a.jpg"}, {"phrase_type", "test_para"}},
    });
    dir.write("VQA_RAD Dataset Public.json", records.dump());
    dir.write("VQA_RAD Image Folder/a.jpg", "scan");
    const auto test = load({dir.path.string(), "", DatasetTag::vqarad, std::nullopt});
    CHECK(ids(test) == std::vector<std::string>{"2", "3"});
    CHECK(test.samples[1].answer == "2");
    const auto train = load({dir.path.string(), "train", DatasetTag::vqarad, std::nullopt});
    CHECK(ids(train) == std::vector<std::string>{"1"});
}

TEST_CASE("winoground: each item gives four yes/no samples") {
    TempDir dir("siri-ds-winoground");
    dir.write("examples.jsonl", jsonl({{{"id", 0},
                                        {"caption_0", "a dog chasing a cat"},
                                        {"caption_1", "a cat chasing a dog"},
                                        {"image_0", "ex_0_img_0"},
                                        {"image_1", "ex_0_img_1"}}}));
    dir.write("images/ex_0_img_0.png", "zero");
    dir.write("images/ex_0_img_1.png", "one");
    const auto d = load({dir.path.string(), "", DatasetTag::winoground, std::nullopt});
    CHECK(ids(d) == std::vector<std::string>{"0-i0-c0", "0-i0-c1", "0-i1-c0", "0-i1-c1"});
    CHECK(d.samples[0].answer == "yes");
    CHECK(d.samples[1].answer == "no");
    CHECK(d.samples[2].answer == "no");
    CHECK(d.samples[3].answer == "yes");
    CHECK(d.samples[1].question == "does \"a cat chasing a dog\" describe the image?");
    CHECK(d.samples[2].image.bytes() == "one");
}

TEST_CASE("winoground conversion") {
    const auto s = winoground_to_vqa(ImageRef::from_bytes("i"), "the \"big\" one", true, "w");
    CHECK(s.question == "does \"the \"big\" one\" describe the image?");
    CHECK(s.choices == std::vector<std::string>{"yes", "no"});
    CHECK(s.answer == "yes");
    CHECK(winoground_to_vqa({}, "x", false).answer == "no");
    CHECK_THROWS_AS(winoground_to_vqa({}, "", true), std::invalid_argument);
}

TEST_CASE("winoground conversion round-trips random captions") {
    std::mt19937 rng(29);
    const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABCXYZ0123456789,.!?'-";
    for (int i = 0; i < 1000; ++i) {
        std::string caption;
        const int len = std::uniform_int_distribution<int>(1, 60)(rng);
        for (int c = 0; c < len; ++c) caption += alphabet[rng() % alphabet.size()];
        const auto s = winoground_to_vqa({}, caption, i % 2 == 0);
        const std::string prefix = "does \"";
        const std::string suffix = "\" describe the image?";
        REQUIRE(s.question.size() > prefix.size() + suffix.size());
        CHECK(s.question.substr(s.question.size() - suffix.size()) == suffix);
        CHECK(s.question.substr(prefix.size(), s.question.size() - prefix.size() - suffix.size()) == caption);
        CHECK(s.answer == (i % 2 == 0 ? "yes" : "no"));
    }
}

TEST_CASE("correctness uses normalized text or the choice letter") {
    VqaSample s;
    s.choices = {"attract", "repel"};
    s.answer = "repel";
    s.answer_index = 1;
    CHECK(is_correct("Repel.", s));
    CHECK(is_correct("B", s));
    CHECK(is_correct("(b)", s));
    CHECK_FALSE(is_correct("A", s));
    CHECK_FALSE(is_correct("attract", s));
    CHECK_FALSE(is_correct("", s));

    VqaSample open;
    open.answer = "The left lung";
    CHECK(is_correct("left lung", open));
    CHECK_FALSE(is_correct("B", open));
    CHECK(is_correct(FinalAnswer{"left  lung.", 1.0, false, {}}, open));
}

TEST_CASE("dataset names") {
    for (auto tag : {DatasetTag::scienceqa, DatasetTag::aokvqa, DatasetTag::vqarad, DatasetTag::winoground,
                     DatasetTag::generic}) {
        CHECK(dataset_tag_from_string(to_string(tag)) == tag);
    }
    CHECK_THROWS_AS(dataset_tag_from_string("coco"), std::invalid_argument);
}
