// Command-line front end: synth, analyze, correlate, retrieve, train, eval, predict.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "kvqa/analysis.hpp"
#include "kvqa/dataset.hpp"
#include "kvqa/io.hpp"
#include "kvqa/model.hpp"
#include "kvqa/synth.hpp"

namespace {

using namespace kvqa;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitPartial = 3;

struct Options {
    std::uint64_t seed = 0;
    std::string config;
    std::string out;

    std::string data, kb, model, embeddings, hallucination, word_vectors, stop_words, instance;
    std::string selector = "sim,al";
    std::string gating = "gated";
    std::string reference_mode;
    std::size_t hops = 1;
    bool no_explicit = false;
    bool implicit_only = false;

    std::size_t epochs = 20;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    double val_fraction = 0.0;

    SynthConfig synth;
};

struct Settings {
    PipelineConfig pipeline;
    ModelConfig model;
    TrainConfig train;
};

// Config file values first, then flags given explicitly on the command line.
GatingMode parse_gating(const std::string& mode) {
    if (mode == "gated") return GatingMode::gated;
    if (mode == "ungated") return GatingMode::ungated;
    throw Error("unknown gating mode '" + mode + "' (expected gated or ungated)");
}

Settings resolve_settings(const Options& o, const CLI::App& sub) {
    Settings s;
    if (!o.config.empty()) {
        const auto j = read_json_file(o.config);
        for (const auto& [key, value] : j.items()) {
            try {
                if (key == "pipeline") {
                    s.pipeline = pipeline_config_from_json(value, s.pipeline);
                } else if (key == "train") {
                    for (const auto& [k, v] : value.items()) {
                        if (k == "epochs") s.train.epochs = v.get<std::size_t>();
                        else if (k == "lr") s.train.lr = v.get<double>();
                        else if (k == "momentum") s.train.momentum = v.get<double>();
                        else if (k == "batch_size") s.train.batch_size = v.get<std::size_t>();
                        else throw Error("unknown train config key '" + k + "'");
                    }
                } else if (key == "model") {
                    for (const auto& [k, v] : value.items()) {
                        if (k == "selector") s.model.selector = FeatureSelector::parse(v.get<std::string>());
                        else if (k == "gating") s.model.gating = parse_gating(v.get<std::string>());
                        else if (k == "use_explicit") s.model.use_explicit = v.get<bool>();
                        else if (k == "explicit_loss_weight") s.model.explicit_loss_weight = v.get<double>();
                        else throw Error("unknown model config key '" + k + "'");
                    }
                } else {
                    throw Error("unknown config section '" + key + "'");
                }
            } catch (const Json::exception& e) {
                throw Error(o.config + ": " + e.what());
            }
        }
    }
    auto given = [&](const char* name) {
        const auto* opt = sub.get_option_no_throw(name);
        return opt != nullptr && opt->count() > 0;
    };
    if (given("--hops")) s.pipeline.hops = o.hops;
    if (given("--reference-mode")) s.pipeline.reference_mode = parse_reference_aggregation(o.reference_mode);
    if (given("--selector")) s.model.selector = FeatureSelector::parse(o.selector);
    if (given("--gating")) {
        s.model.gating = parse_gating(o.gating);
    }
    if (given("--no-explicit")) s.model.use_explicit = !o.no_explicit;
    if (given("--epochs")) s.train.epochs = o.epochs;
    if (given("--lr")) s.train.lr = o.lr;
    if (given("--momentum")) s.train.momentum = o.momentum;
    if (given("--batch-size")) s.train.batch_size = o.batch_size;
    s.train.seed = o.seed;
    return s;
}

ResourcePaths resource_paths(const Options& o) {
    ResourcePaths p;
    p.kb = o.kb;
    if (!o.embeddings.empty()) p.embeddings = o.embeddings;
    if (!o.word_vectors.empty()) p.word_vectors = o.word_vectors;
    if (!o.stop_words.empty()) p.stop_words = o.stop_words;
    if (!o.hallucination.empty()) p.hallucination = o.hallucination;
    return p;
}

void emit(const std::string& out, const std::string& text) {
    if (out.empty()) {
        std::cout << text;
    } else {
        write_text_file(out, text);
    }
}

int report_skips(const std::vector<std::pair<std::string, std::string>>& skipped) {
    for (const auto& [id, reason] : skipped) std::cerr << "skipped " << id << ": " << reason << '\n';
    return skipped.empty() ? kExitOk : kExitPartial;
}

int run_synth(const Options& o) {
    if (o.out.empty()) throw Error("synth needs --out DIR");
    auto cfg = o.synth;
    cfg.seed = o.seed;
    const auto bundle = generate_synthetic(cfg);
    write_synthetic(bundle, o.out);
    std::cerr << "wrote " << bundle.dataset.size() << " instances to " << o.out << '\n';
    return kExitOk;
}

int run_analyze(const Options& o, const Settings& s, bool correlations_only) {
    if (o.data.empty()) throw Error("--data is required");
    const auto ds = load_dataset(o.data);
    const auto provider = o.embeddings.empty() ? EmbeddingProvider(s.pipeline.fallback_embedding_dim)
                                               : load_embeddings(o.embeddings, s.pipeline.fallback_embedding_dim);
    std::optional<HallucinationSpec> spec;
    if (!o.hallucination.empty() && !correlations_only) spec = load_hallucination_spec(o.hallucination);
    const auto report = analyze(ds, provider, spec ? &*spec : nullptr, s.pipeline.reference_mode);
    for (const auto& n : report.notices) std::cerr << "notice: " << n << '\n';
    if (correlations_only) {
        if (report.correlations) {
            const auto text = correlations_csv(*report.correlations);
            emit(o.out.empty() ? std::string() : (fs::path(o.out) / "correlations.csv").string(), text);
        }
    } else {
        if (o.out.empty()) throw Error("analyze needs --out DIR");
        write_analysis(report, o.out);
    }
    return report_skips(report.skipped);
}

int run_retrieve(const Options& o, const Settings& s) {
    if (o.data.empty() || o.kb.empty()) throw Error("--data and --kb are required");
    const auto ds = load_dataset(o.data);
    const auto resources = load_resources(resource_paths(o), s.pipeline);
    std::ostringstream out;
    bool found = o.instance.empty();
    for (const auto& inst : ds.instances) {
        if (!o.instance.empty() && inst.id != o.instance) continue;
        found = true;
        const auto words = question_terms(inst.question, resources.stop_words);
        const auto g = retrieve_subgraph(resources.kb, inst.image_keywords, words, s.pipeline.hops);
        Json triples = Json::array();
        for (const auto& t : g.forward_triples()) triples.push_back({t[0], t[1], t[2]});
        out << Json{{"id", inst.id}, {"nodes", g.nodes()}, {"triples", std::move(triples)}}.dump() << '\n';
    }
    if (!found) throw Error("no instance with id '" + o.instance + "'");
    emit(o.out, out.str());
    return kExitOk;
}

int run_train(const Options& o, const Settings& s) {
    if (o.data.empty() || o.kb.empty()) throw Error("--data and --kb are required");
    if (o.out.empty()) throw Error("train needs --out model.json");
    auto ds = load_dataset(o.data);
    const auto resources = load_resources(resource_paths(o), s.pipeline);
    Dataset train = ds, val;
    if (o.val_fraction > 0.0) {
        std::tie(train, val) = split_dataset(ds, o.val_fraction, o.seed);
        std::cerr << "validation split: " << val.size() << " of " << ds.size() << " instances (seed " << o.seed << ")\n";
    }
    if (train.empty()) throw Error("training split is empty");
    const auto answers = build_answer_vocabulary(train);
    const auto prepared = prepare_dataset(train, resources, answers, s.pipeline);
    const auto ck = train_prepared(prepared.instances, answers, resources.kb.relations(), resources.word_vectors.dim(),
                                   s.pipeline, s.model, s.train);
    save_checkpoint(ck, o.out);
    for (std::size_t e = 0; e < ck.loss_trace.size(); ++e) {
        std::cerr << "epoch " << e + 1 << " loss " << format_double(ck.loss_trace[e]) << '\n';
    }
    auto skipped = prepared.skipped;
    if (!val.empty()) {
        const auto result = evaluate(val, ck, resources);
        std::cerr << "validation accuracy " << format_double(result.accuracy) << '\n';
        skipped.insert(skipped.end(), result.skipped.begin(), result.skipped.end());
    }
    return report_skips(skipped);
}

int run_eval(const Options& o, const CLI::App& sub) {
    if (o.data.empty() || o.kb.empty() || o.model.empty()) throw Error("--data, --kb and --model are required");
    const auto ck = load_checkpoint(o.model);
    if (sub.get_option("--selector")->count() > 0) require_selector(ck, FeatureSelector::parse(o.selector));
    const auto ds = load_dataset(o.data);
    const auto resources = load_resources(resource_paths(o), ck.pipeline);
    const auto result = evaluate(ds, ck, resources, EvalOptions{o.implicit_only});
    emit(o.out, evaluation_csv(result));
    std::cerr << "accuracy " << format_double(result.accuracy) << " over " << result.instances.size()
              << " instances\n";
    return report_skips(result.skipped);
}

int run_predict(const Options& o, const CLI::App& sub) {
    if (o.instance.empty() || o.kb.empty() || o.model.empty()) throw Error("--instance, --kb and --model are required");
    const auto ck = load_checkpoint(o.model);
    if (sub.get_option("--selector")->count() > 0) require_selector(ck, FeatureSelector::parse(o.selector));
    const auto j = read_json_file(o.instance);
    std::istringstream line(j.dump());
    const auto ds = parse_dataset(line, o.instance, fs::path(o.instance).parent_path());
    const auto resources = load_resources(resource_paths(o), ck.pipeline);
    const auto result = evaluate(ds, ck, resources, EvalOptions{o.implicit_only});
    if (!result.skipped.empty()) return report_skips(result.skipped);
    emit(o.out, instance_result_to_json(result.instances.front()).dump() + "\n");
    return kExitOk;
}

void add_resource_flags(CLI::App* sub, Options& o, bool with_model) {
    sub->add_option("--data", o.data, "dataset (JSON lines)");
    sub->add_option("--kb", o.kb, "knowledge base (TSV triples)");
    sub->add_option("--embeddings", o.embeddings, "precomputed sentence embeddings (JSON lines)");
    sub->add_option("--word-vectors", o.word_vectors, "word vectors (JSON lines)");
    sub->add_option("--stopwords", o.stop_words, "stop-word list, one per line");
    sub->add_option("--hallucination", o.hallucination, "hallucination spec with the synonym map (JSON)");
    sub->add_option("--hops", o.hops, "retrieval hops");
    sub->add_option("--reference-mode", o.reference_mode, "mean or max over reference captions");
    if (with_model) {
        sub->add_option("--model", o.model, "checkpoint (JSON)");
        sub->add_option("--selector", o.selector, "gate features, subset of sim,al,ep");
        sub->add_flag("--implicit-only", o.implicit_only, "ignore the explicit path");
    }
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"Knowledge-based VQA with semantic-inconsistency gating"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--seed", o.seed, "random seed")->capture_default_str();
    app.add_option("--config", o.config, "JSON config with pipeline/model/train sections");
    app.add_option("--out", o.out, "output file or directory");

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    synth->add_option("--n", o.synth.n, "instance count")->capture_default_str();
    synth->add_option("--consistency-rate", o.synth.consistency_rate, "fraction of consistent instances")->capture_default_str();
    synth->add_option("--members", o.synth.members, "ensemble size")->capture_default_str();
    synth->add_option("--implicit-dim", o.synth.implicit_dim)->capture_default_str();
    synth->add_option("--word-dim", o.synth.word_dim)->capture_default_str();
    synth->add_option("--sentence-dim", o.synth.sentence_dim)->capture_default_str();
    synth->add_option("--implicit-signal", o.synth.implicit_signal)->capture_default_str();
    synth->add_option("--al-coupling", o.synth.al_coupling)->capture_default_str();
    synth->add_option("--ep-coupling", o.synth.ep_coupling)->capture_default_str();

    auto* analyze_cmd = app.add_subcommand("analyze", "uncertainty, similarity and hallucination reports");
    add_resource_flags(analyze_cmd, o, false);
    auto* correlate = app.add_subcommand("correlate", "caption similarity vs uncertainty correlations");
    add_resource_flags(correlate, o, false);
    auto* retrieve = app.add_subcommand("retrieve", "print retrieved subgraphs");
    add_resource_flags(retrieve, o, false);
    retrieve->add_option("--instance", o.instance, "restrict to one instance id");

    auto* train = app.add_subcommand("train", "train the fusion model");
    add_resource_flags(train, o, false);
    train->add_option("--selector", o.selector, "gate features, subset of sim,al,ep");
    train->add_option("--gating", o.gating, "gated or ungated");
    train->add_flag("--no-explicit", o.no_explicit, "train the implicit path only");
    train->add_option("--epochs", o.epochs, "passes over the training split")->capture_default_str();
    train->add_option("--lr", o.lr, "learning rate")->capture_default_str();
    train->add_option("--momentum", o.momentum, "SGD momentum")->capture_default_str();
    train->add_option("--batch-size", o.batch_size, "instances per update")->capture_default_str();
    train->add_option("--val-fraction", o.val_fraction, "held-out fraction, split with --seed");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_resource_flags(eval, o, true);
    auto* predict = app.add_subcommand("predict", "answer one instance");
    add_resource_flags(predict, o, true);
    predict->add_option("--instance", o.instance, "instance JSON file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        if (synth->parsed()) return run_synth(o);
        if (analyze_cmd->parsed()) return run_analyze(o, resolve_settings(o, *analyze_cmd), false);
        if (correlate->parsed()) return run_analyze(o, resolve_settings(o, *correlate), true);
        if (retrieve->parsed()) return run_retrieve(o, resolve_settings(o, *retrieve));
        if (train->parsed()) return run_train(o, resolve_settings(o, *train));
        if (eval->parsed()) return run_eval(o, *eval);
        if (predict->parsed()) return run_predict(o, *predict);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    }
    return kExitInvalid;
}
