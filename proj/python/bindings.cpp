#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kvqa/analysis.hpp"
#include "kvqa/dataset.hpp"
#include "kvqa/io.hpp"
#include "kvqa/model.hpp"
#include "kvqa/synth.hpp"
#include "kvqa/uncertainty.hpp"

namespace py = pybind11;
using namespace kvqa;

namespace {

using OptPath = std::optional<std::filesystem::path>;

ResourcePaths paths(const std::filesystem::path& kb, const OptPath& embeddings, const OptPath& word_vectors,
                    const OptPath& stopwords, const OptPath& hallucination) {
    return {kb, embeddings, word_vectors, stopwords, hallucination};
}

/// probs[m][t][v]; the vocabulary is positional.
EnsembleTokenDistributions ensemble_from_nested(const std::vector<std::vector<std::vector<double>>>& probs) {
    if (probs.empty() || probs[0].empty() || probs[0][0].empty()) throw Error("ensemble must be non-empty [M][T][V]");
    const std::size_t m = probs.size(), t = probs[0].size(), v = probs[0][0].size();
    std::vector<double> flat;
    flat.reserve(m * t * v);
    for (const auto& member : probs) {
        if (member.size() != t) throw Error("members disagree on the caption length");
        for (const auto& row : member) {
            if (row.size() != v) throw Error("rows disagree on the vocabulary size");
            flat.insert(flat.end(), row.begin(), row.end());
        }
    }
    std::vector<std::string> words;
    for (std::size_t i = 0; i < v; ++i) words.push_back("v" + std::to_string(i));
    return {Vocabulary(words), m, t, std::move(flat)};
}

py::dict result_dict(const EvaluationResult& r) {
    py::list rows;
    for (const auto& i : r.instances) {
        py::dict d;
        d["id"] = i.id;
        d["answer"] = i.predicted;
        d["score"] = i.score;
        d["accuracy"] = i.accuracy;
        d["v_score"] = i.v_score;
        d["g_score"] = i.g_score;
        d["source"] = i.from_explicit ? "explicit" : "implicit";
        d["subgraph_nodes"] = i.subgraph_nodes;
        rows.append(d);
    }
    py::dict out;
    out["accuracy"] = r.accuracy;
    out["instances"] = rows;
    out["skipped"] = r.skipped;
    return out;
}

}  // namespace

PYBIND11_MODULE(_kvqa, m) {
    m.doc() = "Uncertainty-gated knowledge fusion for visual question answering";
    py::register_exception<Error>(m, "KvqaError", PyExc_ValueError);

    m.def(
        "sentence_uncertainty",
        [](const std::vector<std::vector<std::vector<double>>>& probs) {
            const auto s = sentence_uncertainty(ensemble_from_nested(probs));
            py::list tokens;
            for (const auto& t : s.per_token) tokens.append(py::make_tuple(t.h_total, t.u_al, t.u_ep));
            py::dict d;
            d["mean_al"] = s.mean_al;
            d["mean_ep"] = s.mean_ep;
            d["mean_total"] = s.mean_total;
            d["per_token"] = tokens;
            return d;
        },
        py::arg("probs"), "Entropy decomposition of an ensemble given as probs[member][token][vocab].");

    m.def(
        "vqa_accuracy",
        [](const std::string& predicted, const std::vector<std::pair<std::string, int>>& gt) {
            std::vector<GroundTruthAnswer> answers;
            for (const auto& [a, c] : gt) answers.push_back({a, c});
            return vqa_accuracy(predicted, answers);
        },
        py::arg("predicted"), py::arg("gt_answers"));

    m.def(
        "caption_similarity",
        [](const std::string& a, const std::string& b, std::size_t dim) {
            return caption_similarity(EmbeddingProvider(dim), a, b);
        },
        py::arg("a"), py::arg("b"), py::arg("dim") = 256, "Cosine similarity of hashed bag-of-words embeddings.");

    m.def(
        "synthesize",
        [](const std::filesystem::path& out, std::uint64_t seed, std::size_t n, double consistency_rate,
           std::size_t members, double al_coupling, double ep_coupling) {
            SynthConfig c;
            c.seed = seed;
            c.n = n;
            c.consistency_rate = consistency_rate;
            c.members = members;
            c.al_coupling = al_coupling;
            c.ep_coupling = ep_coupling;
            write_synthetic(generate_synthetic(c), out);
        },
        py::arg("out"), py::arg("seed") = 0, py::arg("n") = 200, py::arg("consistency_rate") = 0.5,
        py::arg("members") = 5, py::arg("al_coupling") = 1.0, py::arg("ep_coupling") = 1.0);

    m.def(
        "analyze",
        [](const std::filesystem::path& data, const OptPath& embeddings, const OptPath& hallucination,
           const OptPath& out) {
            const auto ds = load_dataset(data);
            const auto provider = embeddings ? load_embeddings(*embeddings) : EmbeddingProvider(256);
            std::optional<HallucinationSpec> spec;
            if (hallucination) spec = load_hallucination_spec(*hallucination);
            const auto report = analyze(ds, provider, spec ? &*spec : nullptr);
            if (out) write_analysis(report, *out);
            py::dict d;
            if (report.correlations) {
                py::dict c;
                for (const auto& row : *report.correlations) c[py::str(row.pair)] = row.coefficient;
                d["correlations"] = c;
            } else {
                d["correlations"] = py::none();
            }
            d["skewness"] = report.skewness;
            d["instances"] = report.instances.size();
            d["skipped"] = report.skipped;
            d["notices"] = report.notices;
            return d;
        },
        py::arg("data"), py::arg("embeddings") = py::none(), py::arg("hallucination") = py::none(),
        py::arg("out") = py::none());

    m.def(
        "train",
        [](const std::filesystem::path& data, const std::filesystem::path& kb, const std::filesystem::path& out,
           const std::string& selector, bool gated, bool use_explicit, std::size_t epochs, double lr, double momentum,
           std::size_t batch_size, std::uint64_t seed, const OptPath& embeddings, const OptPath& word_vectors,
           const OptPath& stopwords, const OptPath& hallucination) {
            PipelineConfig pipeline;
            ModelConfig model;
            model.selector = FeatureSelector::parse(selector);
            model.gating = gated ? GatingMode::gated : GatingMode::ungated;
            model.use_explicit = use_explicit;
            const TrainConfig tc{epochs, lr, momentum, batch_size, seed};
            const auto resources = load_resources(paths(kb, embeddings, word_vectors, stopwords, hallucination), pipeline);
            const auto ck = train_model(load_dataset(data), resources, pipeline, model, tc);
            save_checkpoint(ck, out);
            return ck.loss_trace;
        },
        py::arg("data"), py::arg("kb"), py::arg("out"), py::arg("selector") = "sim,al", py::arg("gated") = true,
        py::arg("use_explicit") = true, py::arg("epochs") = 20, py::arg("lr") = 0.01, py::arg("momentum") = 0.9,
        py::arg("batch_size") = 32, py::arg("seed") = 0, py::arg("embeddings") = py::none(),
        py::arg("word_vectors") = py::none(), py::arg("stopwords") = py::none(), py::arg("hallucination") = py::none(),
        "Trains on a dataset file, writes a checkpoint and returns the per-epoch loss trace.");

    m.def(
        "evaluate",
        [](const std::filesystem::path& data, const std::filesystem::path& kb, const std::filesystem::path& model,
           bool implicit_only, const OptPath& embeddings, const OptPath& word_vectors, const OptPath& stopwords,
           const OptPath& hallucination) {
            const auto ck = load_checkpoint(model);
            const auto resources =
                load_resources(paths(kb, embeddings, word_vectors, stopwords, hallucination), ck.pipeline);
            return result_dict(evaluate(load_dataset(data), ck, resources, EvalOptions{implicit_only}));
        },
        py::arg("data"), py::arg("kb"), py::arg("model"), py::arg("implicit_only") = false,
        py::arg("embeddings") = py::none(), py::arg("word_vectors") = py::none(), py::arg("stopwords") = py::none(),
        py::arg("hallucination") = py::none());
}
