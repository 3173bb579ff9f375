#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvqa/dataset.hpp"
#include "kvqa/fusion.hpp"
#include "kvqa/knowledge.hpp"
#include "kvqa/similarity.hpp"

namespace kvqa {

/// Knobs of the end-to-end pipeline that are not trainable.
struct PipelineConfig {
    std::size_t hops = 1;
    ReferenceAggregation reference_mode = ReferenceAggregation::mean;
    std::size_t hidden_dim = 16;
    std::size_t explicit_dim = 16;  // d_ze
    std::size_t joint_dim = 8;
    std::size_t fallback_word_dim = 16;
    std::size_t fallback_embedding_dim = 256;
};

nlohmann::json pipeline_config_to_json(const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});

/// Everything ingested besides the dataset itself.
struct Resources {
    KnowledgeBase kb;
    EmbeddingProvider embeddings{256};
    WordVectors word_vectors{16};
    StopWords stop_words;
    std::map<std::string, std::string> synonyms;
};

/// File locations of the resources; only the KB is mandatory.
struct ResourcePaths {
    std::filesystem::path kb;
    std::optional<std::filesystem::path> embeddings;
    std::optional<std::filesystem::path> word_vectors;
    std::optional<std::filesystem::path> stop_words;
    std::optional<std::filesystem::path> hallucination;  // supplies the synonym map
};

/// Missing optional files fall back to the hashed encoders at the configured dimensions.
Resources load_resources(const ResourcePaths& paths, const PipelineConfig& config);

struct InstanceSignals {
    SentenceUncertainty uncertainty;
    double sim = 0.0;
    std::vector<std::string> question_words;
    Subgraph graph;
};

InstanceSignals compute_signals(const QAInstance& instance, const std::filesystem::path& base_dir,
                                const Resources& resources, const PipelineConfig& config);

struct PreparedInstance {
    std::string id;
    FusionExample example;
    std::vector<GroundTruthAnswer> gt_answers;
};

PreparedInstance prepare_instance(const QAInstance& instance, const std::filesystem::path& base_dir,
                                  const Resources& resources, const AnswerVocabulary& answers,
                                  const PipelineConfig& config);

struct PreparedDataset {
    std::vector<PreparedInstance> instances;
    std::vector<std::pair<std::string, std::string>> skipped;  // (id, reason)
};

/// Instances whose ensemble cannot be resolved (or that otherwise fail) are skipped and listed.
PreparedDataset prepare_dataset(const Dataset& dataset, const Resources& resources,
                                const AnswerVocabulary& answers, const PipelineConfig& config);

struct Checkpoint {
    static constexpr int kVersion = 1;

    ModelConfig model;
    PipelineConfig pipeline;
    TrainConfig train;
    AnswerVocabulary answers;
    FeatureStats stats;
    ModelParams params;
    std::size_t word_dim = 0;
    std::vector<double> loss_trace;

    bool operator==(const Checkpoint& other) const;
};

/// Zero-valued parameters with the shapes implied by the configuration.
ModelParams make_model_shape(const FusionDims& fusion, std::vector<std::string> relations,
                             std::span<const std::size_t> rgcn_dims);

/// Fresh seeded parameters sized for the prepared data.
ModelParams initialize_model(const PipelineConfig& pipeline, const ModelConfig& model,
                             const AnswerVocabulary& answers, std::vector<std::string> relations,
                             std::size_t implicit_dim, std::size_t word_dim, Rng& rng);

Checkpoint train_prepared(std::span<const PreparedInstance> train, const AnswerVocabulary& answers,
                          std::vector<std::string> relations, std::size_t word_dim,
                          const PipelineConfig& pipeline, const ModelConfig& model, const TrainConfig& train_config);

Checkpoint train_model(const Dataset& train, const Resources& resources, const PipelineConfig& pipeline,
                       const ModelConfig& model, const TrainConfig& train_config);

nlohmann::json checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws when a checkpoint is asked to run with a different gate selector.
void require_selector(const Checkpoint& checkpoint, const FeatureSelector& requested);

struct EvalOptions {
    bool implicit_only = false;
};

struct InstanceResult {
    std::string id;
    std::string predicted;
    double score = 0.0;
    double accuracy = 0.0;
    double v_score = 1.0;
    double g_score = 1.0;
    bool from_explicit = false;
    std::size_t subgraph_nodes = 0;
};

struct EvaluationResult {
    std::vector<InstanceResult> instances;
    double accuracy = 0.0;
    std::vector<std::pair<std::string, std::string>> skipped;
};

InstanceResult predict_prepared(const PreparedInstance& instance, const Checkpoint& checkpoint,
                                const EvalOptions& options = {});

EvaluationResult evaluate_prepared(std::span<const PreparedInstance> instances, const Checkpoint& checkpoint,
                                   const EvalOptions& options = {});

EvaluationResult evaluate(const Dataset& dataset, const Checkpoint& checkpoint, const Resources& resources,
                          const EvalOptions& options = {});

std::string evaluation_csv(const EvaluationResult& result);
nlohmann::json instance_result_to_json(const InstanceResult& result);

}  // namespace kvqa
