#pragma once

#include "siri/integrator.hpp"
#include "siri/model.hpp"
#include "siri/responder.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace siri {

enum class DatasetTag { scienceqa, aokvqa, vqarad, winoground, generic };

std::string to_string(DatasetTag tag);
DatasetTag dataset_tag_from_string(const std::string& s);

struct VqaSample {
    std::string id;
    std::string question;
    ImageRef image;
    std::vector<std::string> choices;
    /// Ground truth as text; equals choices[*answer_index] when choices exist.
    std::string answer;
    std::optional<std::size_t> answer_index;
    DatasetTag tag = DatasetTag::generic;

    QuestionImagePair pair() const { return {question, image, choices, id}; }
};

/**
 * Where a dataset lives and how to read it.
 *
 *   generic     root = JSONL file; one {id, question, image, choices?, answer}
 *               per line. `image` is a path relative to the file, or inline
 *               bytes as "data:<mime>;base64,..." or "base64:...".
 *               `answer` is a string or an index into `choices`.
 *   scienceqa   root/problems.json; images at root/images/<split>/<pid>/<image>
 *   aokvqa      root/aokvqa_v1p0_<split>.json; images at root/<split>2017/<image_id:012>.jpg
 *   vqarad      root/VQA_RAD Dataset Public.json; images in root/VQA_RAD Image Folder/
 *   winoground  root/examples.jsonl; images at root/images/<image>.png
 */
struct DatasetSpec {
    std::string root;
    std::string split;
    DatasetTag format = DatasetTag::generic;
    std::optional<std::size_t> limit;
};

struct LoadedDataset {
    std::vector<VqaSample> samples;
    std::size_t missing_images = 0;
    std::vector<std::string> diagnostics;
};

/// Throws SchemaError (with file/line or record context) on malformed input.
/// Samples whose image is missing are skipped and counted.
LoadedDataset load(const DatasetSpec& spec);

/// Boolean VQA sample: does "<caption>" describe the image?
VqaSample winoground_to_vqa(const ImageRef& image, const std::string& caption, bool label, std::string id = {});

/// Normalized match against the ground truth; for multiple choice the choice
/// letter of the truth also counts.
bool is_correct(const std::string& answer, const VqaSample& sample);
bool is_correct(const FinalAnswer& answer, const VqaSample& sample);

}  // namespace siri
