#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include <json.hpp>

#include "kvqa/knowledge.hpp"
#include "kvqa/similarity.hpp"
#include "kvqa/uncertainty.hpp"

namespace kvqa {

using Json = nlohmann::json;

/// 17 significant digits, enough to round-trip any double.
std::string format_double(double value);

Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// {"vocab": [...], "members": M, "tokens": T, "kind": "probs"|"logits", "data": [[[...] x T] x M]}
EnsembleTokenDistributions ensemble_from_json(const Json& j);
Json ensemble_to_json(const EnsembleTokenDistributions& ens);
EnsembleTokenDistributions load_ensemble(const std::filesystem::path& path);

/// {"objects": [...], "synonyms": {...}, "object_words": [...]}
HallucinationSpec hallucination_spec_from_json(const Json& j);
Json hallucination_spec_to_json(const HallucinationSpec& spec);
HallucinationSpec load_hallucination_spec(const std::filesystem::path& path);

/// JSON lines of {"sentence": ..., "vector": [...]}.
EmbeddingProvider load_embeddings(const std::filesystem::path& path, std::size_t fallback_dim = 256);
void write_embeddings(std::ostream& out, const std::map<std::string, Vector>& table);

/// JSON lines of {"word": ..., "vector": [...]}.
WordVectors load_word_vectors(const std::filesystem::path& path);
void write_word_vectors(std::ostream& out, const std::map<std::string, Vector>& table);

}  // namespace kvqa
