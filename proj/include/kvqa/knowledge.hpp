#pragma once

#include <array>
#include <compare>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kvqa/numerics.hpp"

namespace kvqa {

struct Triple {
    std::string head;
    std::string relation;
    std::string tail;
    std::string source;

    auto operator<=>(const Triple&) const = default;
};

/// Deduplicated triple store with an entity -> incident-triple index.
/// Entities are stored lowercase; relation names are kept verbatim.
class KnowledgeBase {
public:
    KnowledgeBase() = default;
    explicit KnowledgeBase(std::vector<Triple> triples);

    const std::vector<Triple>& triples() const noexcept { return triples_; }
    std::size_t entity_count() const noexcept { return index_.size(); }
    bool contains(std::string_view entity) const;
    std::span<const std::size_t> incident(std::string_view entity) const;

    /// Sorted unique relation names.
    const std::vector<std::string>& relations() const noexcept { return relations_; }

private:
    std::vector<Triple> triples_;
    std::unordered_map<std::string, std::vector<std::size_t>> index_;
    std::vector<std::string> relations_;
};

/// TSV: head<TAB>relation<TAB>tail<TAB>source. Blank lines and '#' comments are skipped.
KnowledgeBase parse_triples(std::istream& in, std::string_view origin = "<stream>");
KnowledgeBase load_triples(const std::filesystem::path& path);
void write_triples(std::ostream& out, std::span<const Triple> triples);

using StopWords = std::unordered_set<std::string>;

StopWords load_stop_words(const std::filesystem::path& path);

/// Question tokens after lowercasing, punctuation stripping and stop-word removal.
std::vector<std::string> question_terms(std::string_view question, const StopWords& stop_words);

struct Keyword {
    std::string word;
    double prob = 0.0;
};

enum class EdgeDirection { forward, inverse };

/// A message edge: `dst` aggregates from `src` through relation `relation` in `direction`.
/// Each retrieved triple contributes one forward edge (head -> tail) and one inverse edge.
struct Edge {
    std::size_t src = 0;
    std::size_t dst = 0;
    std::size_t relation = 0;  // index into Subgraph::relations()
    EdgeDirection direction = EdgeDirection::forward;

    bool operator==(const Edge&) const = default;
};

class Subgraph {
public:
    Subgraph() = default;
    Subgraph(std::vector<std::string> nodes, std::vector<Edge> edges,
             std::vector<std::string> relations);

    const std::vector<std::string>& nodes() const noexcept { return nodes_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<std::string>& relations() const noexcept { return relations_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }
    bool empty() const noexcept { return nodes_.empty(); }
    std::optional<std::size_t> node_index(std::string_view entity) const;

    /// Triples (head, relation, tail) recovered from the forward edges.
    std::vector<std::array<std::string, 3>> forward_triples() const;

private:
    std::vector<std::string> nodes_;
    std::vector<Edge> edges_;
    std::vector<std::string> relations_;
    std::unordered_map<std::string, std::size_t> lookup_;
};

/// Seeds are the image keywords and question words present in the KB (keywords first,
/// input order, deduplicated). Breadth-first expansion runs `hops` steps over triples in
/// both directions; each expanded node contributes its unseen neighbours in lexicographic
/// order. Every KB triple with both endpoints reached becomes an edge pair.
Subgraph retrieve_subgraph(const KnowledgeBase& kb, std::span<const Keyword> image_keywords,
                           std::span<const std::string> question_words, std::size_t hops = 1);

/// Word-vector table; entity vectors average the in-table words of multi-word entities.
class WordVectors {
public:
    explicit WordVectors(std::size_t dim);

    void add(std::string word, Vector vector);
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return table_.size(); }
    const Vector* find(std::string_view word) const;

    /// Mean over in-table words; a hashed bag-of-words vector when no word is in the table.
    Vector entity_vector(std::string_view entity) const;

private:
    std::size_t dim_;
    std::unordered_map<std::string, Vector> table_;
};

struct NodeFeatures {
    Vector presence;
    Vector keyword_prob;
    Matrix word_vectors;  // nodes x word dim
    Vector implicit;      // broadcast to every node

    std::size_t node_count() const noexcept { return presence.size(); }
    std::size_t dim() const noexcept { return 2 + word_vectors.cols() + implicit.size(); }

    /// Row i = [presence_i, keyword_prob_i, word_vec_i..., implicit...].
    Matrix stacked() const;
};

NodeFeatures assemble_node_features(const Subgraph& graph, std::span<const Keyword> image_keywords,
                                    std::span<const std::string> question_words,
                                    std::span<const double> implicit_embedding,
                                    const WordVectors& word_vectors);

}  // namespace kvqa
