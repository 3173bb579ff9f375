#include "kvqa/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "kvqa/similarity.hpp"

namespace kvqa {

namespace {

std::string trim(std::string_view s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) return {};
    auto end = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(begin, end - begin + 1));
}

std::string normalize_entity(std::string_view s) {
    std::string out = trim(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

KnowledgeBase::KnowledgeBase(std::vector<Triple> triples) {
    std::set<std::array<std::string, 3>> seen;
    std::set<std::string> relations;
    for (auto& t : triples) {
        t.head = normalize_entity(t.head);
        t.tail = normalize_entity(t.tail);
        t.relation = trim(t.relation);
        t.source = trim(t.source);
        if (t.head.empty() || t.relation.empty() || t.tail.empty() || t.source.empty()) {
            throw Error("triple has an empty field");
        }
        if (!seen.insert({t.head, t.relation, t.tail}).second) continue;
        const std::size_t id = triples_.size();
        index_[t.head].push_back(id);
        if (t.tail != t.head) index_[t.tail].push_back(id);
        relations.insert(t.relation);
        triples_.push_back(std::move(t));
    }
    relations_.assign(relations.begin(), relations.end());
}

bool KnowledgeBase::contains(std::string_view entity) const {
    return index_.count(std::string(entity)) > 0;
}

std::span<const std::size_t> KnowledgeBase::incident(std::string_view entity) const {
    auto it = index_.find(std::string(entity));
    if (it == index_.end()) return {};
    return it->second;
}

KnowledgeBase parse_triples(std::istream& in, std::string_view origin) {
    std::vector<Triple> triples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        const auto where = std::string(origin) + ":" + std::to_string(line_no);
        if (fields.size() != 4) {
            throw Error(where + ": expected 4 tab-separated fields, found " +
                        std::to_string(fields.size()));
        }
        if (std::any_of(fields.begin(), fields.end(), [](const std::string& f) { return trim(f).empty(); })) {
            throw Error(where + ": empty field");
        }
        triples.push_back({fields[0], fields[1], fields[2], fields[3]});
    }
    if (triples.empty()) throw Error(std::string(origin) + ": no triples");
    return KnowledgeBase(std::move(triples));
}

KnowledgeBase load_triples(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open triple file " + path.string());
    return parse_triples(in, path.string());
}

void write_triples(std::ostream& out, std::span<const Triple> triples) {
    for (const auto& t : triples) {
        out << t.head << '\t' << t.relation << '\t' << t.tail << '\t' << t.source << '\n';
    }
}

StopWords load_stop_words(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open stop-word file " + path.string());
    StopWords words;
    std::string line;
    while (std::getline(in, line)) {
        auto w = normalize_entity(line);
        if (!w.empty()) words.insert(std::move(w));
    }
    return words;
}

std::vector<std::string> question_terms(std::string_view question, const StopWords& stop_words) {
    std::vector<std::string> out;
    for (auto& tok : tokenize(question)) {
        if (stop_words.count(tok) == 0) out.push_back(std::move(tok));
    }
    return out;
}

Subgraph::Subgraph(std::vector<std::string> nodes, std::vector<Edge> edges,
                   std::vector<std::string> relations)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), relations_(std::move(relations)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!lookup_.emplace(nodes_[i], i).second) throw Error("duplicate subgraph node '" + nodes_[i] + "'");
    }
    for (const auto& e : edges_) {
        if (e.src >= nodes_.size() || e.dst >= nodes_.size() || e.relation >= relations_.size()) {
            throw Error("subgraph edge out of range");
        }
    }
}

std::optional<std::size_t> Subgraph::node_index(std::string_view entity) const {
    auto it = lookup_.find(std::string(entity));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::array<std::string, 3>> Subgraph::forward_triples() const {
    std::vector<std::array<std::string, 3>> out;
    for (const auto& e : edges_) {
        if (e.direction == EdgeDirection::forward) {
            out.push_back({nodes_[e.src], relations_[e.relation], nodes_[e.dst]});
        }
    }
    return out;
}

Subgraph retrieve_subgraph(const KnowledgeBase& kb, std::span<const Keyword> image_keywords,
                           std::span<const std::string> question_words, std::size_t hops) {
    std::vector<std::string> nodes;
    std::unordered_map<std::string, std::size_t> reached;
    auto visit = [&](const std::string& entity) {
        if (!kb.contains(entity) || reached.count(entity)) return false;
        reached.emplace(entity, nodes.size());
        nodes.push_back(entity);
        return true;
    };

    for (const auto& kw : image_keywords) visit(normalize_entity(kw.word));
    for (const auto& w : question_words) visit(normalize_entity(w));

    std::vector<std::string> frontier = nodes;
    const auto& triples = kb.triples();
    for (std::size_t hop = 0; hop < hops && !frontier.empty(); ++hop) {
        std::vector<std::string> next;
        for (const auto& entity : frontier) {
            std::set<std::string> neighbours;
            for (std::size_t id : kb.incident(entity)) {
                const auto& t = triples[id];
                neighbours.insert(t.head == entity ? t.tail : t.head);
            }
            for (const auto& nb : neighbours) {
                if (visit(nb)) next.push_back(nb);
            }
        }
        frontier = std::move(next);
    }

    std::vector<std::size_t> ids;
    for (const auto& entity : nodes) {
        for (std::size_t id : kb.incident(entity)) {
            const auto& t = triples[id];
            if (reached.count(t.head) && reached.count(t.tail)) ids.push_back(id);
        }
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    std::set<std::string> relation_set;
    for (std::size_t id : ids) relation_set.insert(triples[id].relation);
    std::vector<std::string> relations(relation_set.begin(), relation_set.end());
    auto relation_index = [&](const std::string& r) {
        return static_cast<std::size_t>(
            std::lower_bound(relations.begin(), relations.end(), r) - relations.begin());
    };

    std::vector<Edge> edges;
    edges.reserve(ids.size() * 2);
    for (std::size_t id : ids) {
        const auto& t = triples[id];
        const std::size_t h = reached.at(t.head);
        const std::size_t tl = reached.at(t.tail);
        const std::size_t r = relation_index(t.relation);
        edges.push_back({h, tl, r, EdgeDirection::forward});
        edges.push_back({tl, h, r, EdgeDirection::inverse});
    }
    return Subgraph(std::move(nodes), std::move(edges), std::move(relations));
}

WordVectors::WordVectors(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) throw Error("word-vector dimension must be positive");
}

void WordVectors::add(std::string word, Vector vector) {
    if (vector.size() != dim_) {
        throw Error("word vector for '" + word + "' has dimension " + std::to_string(vector.size()) +
                    ", expected " + std::to_string(dim_));
    }
    if (!all_finite(vector)) throw Error("non-finite word vector for '" + word + "'");
    table_[normalize_entity(word)] = std::move(vector);
}

const Vector* WordVectors::find(std::string_view word) const {
    auto it = table_.find(std::string(word));
    return it == table_.end() ? nullptr : &it->second;
}

Vector WordVectors::entity_vector(std::string_view entity) const {
    const auto words = tokenize(entity);
    Vector sum(dim_, 0.0);
    std::size_t hits = 0;
    for (const auto& w : words) {
        if (const Vector* v = find(w)) {
            for (std::size_t i = 0; i < dim_; ++i) sum[i] += (*v)[i];
            ++hits;
        }
    }
    if (hits == 0) {
        if (words.empty()) return sum;
        return hashed_bag_of_words(words, dim_);
    }
    for (double& x : sum) x /= static_cast<double>(hits);
    return sum;
}

Matrix NodeFeatures::stacked() const {
    Matrix out(node_count(), dim());
    for (std::size_t i = 0; i < node_count(); ++i) {
        auto row = out.row(i);
        row[0] = presence[i];
        row[1] = keyword_prob[i];
        auto wv = word_vectors.row(i);
        std::copy(wv.begin(), wv.end(), row.begin() + 2);
        std::copy(implicit.begin(), implicit.end(), row.begin() + 2 + static_cast<std::ptrdiff_t>(wv.size()));
    }
    return out;
}

NodeFeatures assemble_node_features(const Subgraph& graph, std::span<const Keyword> image_keywords,
                                    std::span<const std::string> question_words,
                                    std::span<const double> implicit_embedding,
                                    const WordVectors& word_vectors) {
    if (graph.empty()) throw Error("cannot assemble features for an empty subgraph");
    std::unordered_map<std::string, double> keyword_prob;
    for (const auto& kw : image_keywords) {
        auto key = normalize_entity(kw.word);
        auto [it, inserted] = keyword_prob.emplace(key, kw.prob);
        if (!inserted) it->second = std::max(it->second, kw.prob);
    }
    std::unordered_set<std::string> questions;
    for (const auto& w : question_words) questions.insert(normalize_entity(w));

    const std::size_t n = graph.node_count();
    NodeFeatures f{Vector(n, 0.0), Vector(n, 0.0), Matrix(n, word_vectors.dim()),
                   Vector(implicit_embedding.begin(), implicit_embedding.end())};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& node = graph.nodes()[i];
        auto kw = keyword_prob.find(node);
        if (kw != keyword_prob.end()) {
            f.presence[i] = 1.0;
            f.keyword_prob[i] = kw->second;
        } else if (questions.count(node)) {
            f.presence[i] = 1.0;
        }
        const Vector v = word_vectors.entity_vector(node);
        std::copy(v.begin(), v.end(), f.word_vectors.row(i).begin());
    }
    return f;
}

}  // namespace kvqa
