#include "kvqa/similarity.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

namespace kvqa {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else if (c < 128 && std::ispunct(c)) {
            continue;
        } else {
            current.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::uint64_t stable_hash(std::string_view text) {
    std::uint64_t h = 14695981039346656037ull;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

Vector hashed_bag_of_words(std::span<const std::string> tokens, std::size_t dim) {
    if (dim == 0) throw Error("fallback dimension must be positive");
    if (tokens.empty()) throw Error("degenerate embedding");
    Vector v(dim, 0.0);
    for (const auto& tok : tokens) v[stable_hash(tok) % dim] += 1.0;
    const double norm = l2_norm(v);
    for (double& x : v) x /= norm;
    return v;
}

EmbeddingProvider::EmbeddingProvider(std::size_t fallback_dim) : fallback_dim_(fallback_dim) {
    if (fallback_dim_ == 0) throw Error("fallback dimension must be positive");
}

void EmbeddingProvider::add(std::string sentence, Vector vector) {
    if (vector.empty()) throw Error("empty embedding for '" + sentence + "'");
    if (table_dim_ != 0 && vector.size() != table_dim_) {
        throw Error("embedding for '" + sentence + "' has dimension " + std::to_string(vector.size()) +
                    ", expected " + std::to_string(table_dim_));
    }
    if (!all_finite(vector) || l2_norm(vector) == 0.0) {
        throw Error("degenerate embedding for '" + sentence + "'");
    }
    table_dim_ = vector.size();
    table_[std::move(sentence)] = std::move(vector);
}

SentenceEmbedding EmbeddingProvider::embed(std::string_view sentence) const {
    if (sentence.empty()) throw Error("empty sentence");
    if (auto it = table_.find(std::string(sentence)); it != table_.end()) {
        return {it->second, EmbeddingSource::precomputed};
    }
    const auto tokens = tokenize(sentence);
    return {hashed_bag_of_words(tokens, fallback_dim_), EmbeddingSource::fallback};
}

double caption_similarity(const EmbeddingProvider& provider, std::string_view generated,
                          std::string_view ground_truth) {
    const auto a = provider.embed(generated);
    const auto b = provider.embed(ground_truth);
    if (a.vector.size() != b.vector.size()) {
        throw Error("embedding dimension mismatch between '" + std::string(generated) + "' and '" +
                    std::string(ground_truth) + "'");
    }
    return cosine_similarity(a.vector, b.vector);
}

ReferenceAggregation parse_reference_aggregation(std::string_view name) {
    if (name == "mean") return ReferenceAggregation::mean;
    if (name == "max") return ReferenceAggregation::max;
    throw Error("unknown reference aggregation '" + std::string(name) + "'");
}

double multi_reference_similarity(const EmbeddingProvider& provider, std::string_view generated,
                                  std::span<const std::string> references, ReferenceAggregation mode) {
    if (references.empty()) throw Error("empty reference list");
    std::vector<double> sims;
    sims.reserve(references.size());
    for (const auto& ref : references) sims.push_back(caption_similarity(provider, generated, ref));
    if (mode == ReferenceAggregation::max) return *std::max_element(sims.begin(), sims.end());
    return std::accumulate(sims.begin(), sims.end(), 0.0) / static_cast<double>(sims.size());
}

std::array<CorrelationRow, 3> correlation_report(std::span<const SimilarityRecord> records) {
    if (records.size() < 2) throw Error("correlation needs at least two records");
    std::vector<double> sim, al, ep;
    for (const auto& r : records) {
        sim.push_back(r.sim);
        al.push_back(r.u_al);
        ep.push_back(r.u_ep);
    }
    const auto constant = [](const std::vector<double>& xs) {
        return std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); });
    };
    if (constant(sim)) throw Error("zero variance in column 'sim'");
    if (constant(al)) throw Error("zero variance in column 'u_al'");
    if (constant(ep)) throw Error("zero variance in column 'u_ep'");
    return {CorrelationRow{"sim_cap & u_al", pearson(sim, al)},
            CorrelationRow{"sim_cap & u_ep", pearson(sim, ep)},
            CorrelationRow{"u_al & u_ep", pearson(al, ep)}};
}

}  // namespace kvqa
