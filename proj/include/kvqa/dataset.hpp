#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "kvqa/fusion.hpp"
#include "kvqa/knowledge.hpp"
#include "kvqa/uncertainty.hpp"

namespace kvqa {

struct GroundTruthAnswer {
    std::string answer;
    int count = 1;
};

/// Either a path (relative to the dataset file) or an inline ensemble.
using EnsembleRef = std::variant<std::filesystem::path, std::shared_ptr<const EnsembleTokenDistributions>>;

struct QAInstance {
    std::string id;
    std::string question;
    std::vector<Keyword> image_keywords;
    Vector implicit_embedding;
    std::string generated_caption;
    std::vector<std::string> ground_truth_captions;
    EnsembleRef ensemble;
    std::vector<GroundTruthAnswer> gt_answers;
    std::vector<std::string> objects;  // ground-truth image objects, optional
};

enum class Split { train, val, test };

std::string split_name(Split split);
Split parse_split(std::string_view name);

struct Dataset {
    std::vector<QAInstance> instances;
    Split split = Split::train;
    std::filesystem::path base_dir;

    std::size_t size() const noexcept { return instances.size(); }
    bool empty() const noexcept { return instances.empty(); }
};

/// JSON lines, one instance per line. Errors carry the line number and field.
Dataset parse_dataset(std::istream& in, std::string_view origin = "<stream>",
                      std::filesystem::path base_dir = {});
Dataset load_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const Dataset& dataset);

/// Loads referenced ensemble files on demand.
EnsembleTokenDistributions resolve_ensemble(const QAInstance& instance, const std::filesystem::path& base_dir);

/// min(#annotators giving `predicted` / 3, 1); answers compared lowercased and trimmed.
double vqa_accuracy(std::string_view predicted, std::span<const GroundTruthAnswer> gt_answers);

/// Normalisation applied to answers before matching.
std::string normalize_answer(std::string_view answer);

/// t_i = min(count_i / 3, 1) over the answer vocabulary.
Vector soft_targets(const AnswerVocabulary& vocab, std::span<const GroundTruthAnswer> gt_answers);

/// Sorted unique normalised answers appearing in the dataset.
AnswerVocabulary build_answer_vocabulary(const Dataset& dataset);

/// Seeded random split; the second dataset receives round(fraction * n) instances.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double fraction, std::uint64_t seed);

}  // namespace kvqa
