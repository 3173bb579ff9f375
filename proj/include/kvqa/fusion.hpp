#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kvqa/knowledge.hpp"
#include "kvqa/numerics.hpp"
#include "kvqa/rgcn.hpp"
#include "kvqa/similarity.hpp"

namespace kvqa {

/// Which inconsistency signals feed the gates, always in the order (sim, u_al, u_ep).
struct FeatureSelector {
    bool use_sim = true;
    bool use_al = true;
    bool use_ep = false;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(use_sim) + use_al + use_ep;
    }
    /// Comma-separated subset of {sim, al, ep}.
    static FeatureSelector parse(std::string_view text);
    std::string to_string() const;

    bool operator==(const FeatureSelector&) const = default;
};

Vector inconsistency_features(double sim, double u_al, double u_ep, const FeatureSelector& selector);

/// Standardisation of the uncertainty columns, fitted on the training split.
/// Similarity is passed through unchanged.
struct FeatureStats {
    double al_mean = 0.0;
    double al_scale = 1.0;
    double ep_mean = 0.0;
    double ep_scale = 1.0;

    static FeatureStats fit(std::span<const SimilarityRecord> records);
    SimilarityRecord apply(const SimilarityRecord& raw) const;

    bool operator==(const FeatureStats&) const = default;
};

struct FusionDims {
    std::size_t feature_dim = 2;   // selector length
    std::size_t implicit_dim = 0;  // d_zi
    std::size_t explicit_dim = 0;  // d_ze
    std::size_t joint_dim = 8;     // shared space of the explicit scorer
    std::size_t answer_count = 0;
};

struct FusionParams {
    Matrix gate_v;           // 1 x k
    Matrix gate_g;           // 1 x k
    Matrix answer_weight;    // |V| x d_zi
    Vector answer_bias;      // |V|
    Matrix explicit_weight;  // d x d_ze
    Vector explicit_bias;    // d
    Matrix implicit_weight;  // d x d_zi
    Vector implicit_bias;    // d

    static FusionParams initialize(const FusionDims& dims, Rng& rng);
    FusionParams zeros_like() const;
    FusionDims dims() const;

    bool operator==(const FusionParams&) const = default;
};

struct GateScores {
    double v = 1.0;
    double g = 1.0;
};

GateScores gate_scores(std::span<const double> features, const FusionParams& params);

struct GatedRepresentations {
    Vector implicit;
    Matrix explicit_nodes;
};

GatedRepresentations gated_representations(std::span<const double> z_implicit,
                                           const Matrix& z_explicit_nodes, double v_score,
                                           double g_score);

Vector implicit_scores(std::span<const double> z_v_implicit, const FusionParams& params);

/// Bound answer i scores sigmoid((W_ge z_n + b_ge) . (W_vi z_v + b_vi)) for its node n;
/// unbound answers score 0.
Vector explicit_scores(const Matrix& z_g_explicit_nodes, std::span<const double> z_v_implicit,
                       std::span<const std::optional<std::size_t>> answer_nodes,
                       const FusionParams& params);

struct Prediction {
    std::size_t answer = 0;
    double score = 0.0;
    bool from_explicit = false;
};

/// Elementwise max of both score vectors, then argmax; ties go to the lowest index.
Prediction predict_answer(std::span<const double> y_implicit, std::span<const double> y_explicit);

class AnswerVocabulary {
public:
    AnswerVocabulary() = default;
    explicit AnswerVocabulary(std::vector<std::string> answers);

    std::size_t size() const noexcept { return answers_.size(); }
    const std::string& answer(std::size_t i) const { return answers_.at(i); }
    const std::vector<std::string>& answers() const noexcept { return answers_; }
    std::optional<std::size_t> index(std::string_view answer) const;

    /// Node per answer: exact lowercase match, then the synonym map.
    std::vector<std::optional<std::size_t>> bind(const Subgraph& graph,
                                                 const std::map<std::string, std::string>& synonyms = {}) const;

    bool operator==(const AnswerVocabulary& other) const { return answers_ == other.answers_; }

private:
    std::vector<std::string> answers_;
    std::unordered_map<std::string, std::size_t> lookup_;
};

/// A named view of one trainable tensor. Vectors are reported as (n x 1).
struct NamedTensor {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::span<double> values;
};

struct ModelParams {
    FusionParams fusion;
    RgcnParams rgcn;

    ModelParams zeros_like() const;
    std::vector<NamedTensor> tensors();
    std::size_t parameter_count() const;

    bool operator==(const ModelParams&) const = default;
};

enum class GatingMode { gated, ungated };

struct ModelConfig {
    FeatureSelector selector;
    GatingMode gating = GatingMode::gated;
    bool use_explicit = true;
    double explicit_loss_weight = 1.0;
};

/// One training/evaluation instance with all ingested signals resolved.
struct FusionExample {
    double sim = 0.0;
    double u_al = 0.0;
    double u_ep = 0.0;
    Vector implicit;
    Subgraph graph;
    Matrix node_features;  // nodes x rgcn input dim
    std::vector<std::optional<std::size_t>> answer_nodes;
    Vector targets;
};

struct ForwardState {
    Vector features;
    GateScores gates;
    Vector gated_implicit;
    std::optional<RgcnTrace> rgcn;
    Matrix gated_explicit;
    Vector implicit_logits;
    Vector implicit_scores;
    Vector query;     // W_vi z_v + b_vi
    Matrix keys;      // per node, W_ge z_g + b_ge
    Vector explicit_logits;
    Vector explicit_scores;
};

ForwardState forward(const FusionExample& example, const ModelParams& params, const ModelConfig& config,
                     const FeatureStats& stats);

struct LossResult {
    double loss = 0.0;
    double implicit_loss = 0.0;
    double explicit_loss = 0.0;
    bool explicit_term_used = false;
    ModelParams grads;
};

/// BCE on the implicit scores plus weighted BCE on the bound explicit scores, with exact
/// gradients through the scorers, the gates and the RGCN. Ingested signals are constants.
LossResult loss_and_gradients(const FusionExample& example, const ForwardState& state,
                              const ModelParams& params, const ModelConfig& config,
                              std::span<const double> targets);

struct TrainConfig {
    std::size_t epochs = 20;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct FitResult {
    ModelParams params;
    std::vector<double> loss_trace;  // mean per-instance loss of each epoch
};

/// Mini-batch gradient descent with momentum. Deterministic for a fixed seed.
FitResult fit(std::span<const FusionExample> dataset, ModelParams initial, const ModelConfig& config,
              const FeatureStats& stats, const TrainConfig& train);

}  // namespace kvqa
