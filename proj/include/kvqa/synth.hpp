#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kvqa/dataset.hpp"
#include "kvqa/knowledge.hpp"
#include "kvqa/model.hpp"
#include "kvqa/uncertainty.hpp"

namespace kvqa {

/// Desk-scale stand-in for a knowledge-based VQA corpus.
///
/// Each instance carries a latent `consistent` flag. Consistent instances get captions with few
/// hallucinated objects, confident ensembles, high caption similarity and a KB fact naming the
/// correct answer; inconsistent ones get the opposite and a KB fact naming a distractor.
struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t n = 200;
    double consistency_rate = 0.5;
    std::size_t members = 5;
    std::size_t implicit_dim = 16;
    std::size_t word_dim = 8;
    std::size_t sentence_dim = 32;
    double implicit_signal = 0.6;  // scale of the answer prototype in the implicit embedding
    double al_coupling = 1.0;      // confidence drop on hallucinated / inconsistent positions
    double ep_coupling = 1.0;      // member disagreement on hallucinated positions
};

struct SynthTruth {
    std::string id;
    bool consistent = true;
    std::string answer;
    std::string kb_answer;
    double hallucination_ratio = 0.0;
};

struct SyntheticBundle {
    Dataset dataset;  // ensembles inline
    std::vector<Triple> triples;
    std::map<std::string, Vector> sentence_embeddings;
    std::map<std::string, Vector> word_vectors;
    HallucinationSpec hallucination;  // synonyms and object words; objects live on each instance
    std::vector<std::string> stop_words;
    std::vector<SynthTruth> truth;
};

/// Deterministic under `config.seed`; n = 0 yields empty artifacts.
SyntheticBundle generate_synthetic(const SynthConfig& config);

/// In-memory resources equivalent to loading the written artifacts.
Resources synthetic_resources(const SyntheticBundle& bundle, const PipelineConfig& pipeline = {});

/// Writes data.jsonl, ensembles/<id>.json, kb.tsv, embeddings.jsonl, word_vectors.jsonl,
/// hallucination.json, stopwords.txt and truth.csv.
void write_synthetic(const SyntheticBundle& bundle, const std::filesystem::path& dir);

}  // namespace kvqa
