#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kvqa/numerics.hpp"

namespace kvqa {

/// Lowercase, strip ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t stable_hash(std::string_view text);

/// Hashed bag-of-words: each token increments one of `dim` coordinates, then L2-normalized.
/// Throws "degenerate embedding" when there are no tokens.
Vector hashed_bag_of_words(std::span<const std::string> tokens, std::size_t dim);

enum class EmbeddingSource { precomputed, fallback };

struct SentenceEmbedding {
    Vector vector;
    EmbeddingSource source = EmbeddingSource::fallback;
};

/// Sentence encoder stand-in: precomputed vectors when available, hashed bag-of-words otherwise.
class EmbeddingProvider {
public:
    explicit EmbeddingProvider(std::size_t fallback_dim = 256);

    /// All table vectors must share one dimension and have nonzero norm.
    void add(std::string sentence, Vector vector);

    SentenceEmbedding embed(std::string_view sentence) const;

    std::size_t table_size() const noexcept { return table_.size(); }
    std::size_t fallback_dim() const noexcept { return fallback_dim_; }

private:
    std::unordered_map<std::string, Vector> table_;
    std::size_t table_dim_ = 0;
    std::size_t fallback_dim_;
};

double caption_similarity(const EmbeddingProvider& provider, std::string_view generated,
                          std::string_view ground_truth);

enum class ReferenceAggregation { mean, max };

ReferenceAggregation parse_reference_aggregation(std::string_view name);

double multi_reference_similarity(const EmbeddingProvider& provider, std::string_view generated,
                                  std::span<const std::string> references,
                                  ReferenceAggregation mode = ReferenceAggregation::mean);

struct SimilarityRecord {
    double sim = 0.0;
    double u_al = 0.0;
    double u_ep = 0.0;
};

struct CorrelationRow {
    std::string pair;
    double coefficient = 0.0;
};

/// Rows, in order: (sim, u_al), (sim, u_ep), (u_al, u_ep).
std::array<CorrelationRow, 3> correlation_report(std::span<const SimilarityRecord> records);

}  // namespace kvqa
