#include "kvqa/model.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "kvqa/io.hpp"

namespace kvqa {

namespace {

std::string gating_name(GatingMode mode) { return mode == GatingMode::gated ? "gated" : "ungated"; }

GatingMode parse_gating(const std::string& name) {
    if (name == "gated") return GatingMode::gated;
    if (name == "ungated") return GatingMode::ungated;
    throw Error("unknown gating mode '" + name + "'");
}

std::vector<std::size_t> rgcn_dims(const PipelineConfig& pipeline, std::size_t implicit_dim, std::size_t word_dim) {
    return {2 + word_dim + implicit_dim, pipeline.hidden_dim, pipeline.explicit_dim};
}

}  // namespace

Json pipeline_config_to_json(const PipelineConfig& c) {
    return Json{{"hops", c.hops},
                {"reference_mode", c.reference_mode == ReferenceAggregation::mean ? "mean" : "max"},
                {"hidden_dim", c.hidden_dim},
                {"explicit_dim", c.explicit_dim},
                {"joint_dim", c.joint_dim},
                {"fallback_word_dim", c.fallback_word_dim},
                {"fallback_embedding_dim", c.fallback_embedding_dim}};
}

PipelineConfig pipeline_config_from_json(const Json& j, PipelineConfig c) {
    if (!j.is_object()) throw Error("pipeline config must be a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "hops") c.hops = value.get<std::size_t>();
            else if (key == "reference_mode") c.reference_mode = parse_reference_aggregation(value.get<std::string>());
            else if (key == "hidden_dim") c.hidden_dim = value.get<std::size_t>();
            else if (key == "explicit_dim") c.explicit_dim = value.get<std::size_t>();
            else if (key == "joint_dim") c.joint_dim = value.get<std::size_t>();
            else if (key == "fallback_word_dim") c.fallback_word_dim = value.get<std::size_t>();
            else if (key == "fallback_embedding_dim") c.fallback_embedding_dim = value.get<std::size_t>();
            else throw Error("unknown pipeline config key '" + key + "'");
        }
    } catch (const Json::exception& e) {
        throw Error(std::string("pipeline config: ") + e.what());
    }
    if (c.hidden_dim == 0 || c.explicit_dim == 0 || c.joint_dim == 0 || c.fallback_word_dim == 0 ||
        c.fallback_embedding_dim == 0) {
        throw Error("pipeline config dimensions must be positive");
    }
    return c;
}

Resources load_resources(const ResourcePaths& paths, const PipelineConfig& config) {
    Resources r{load_triples(paths.kb), EmbeddingProvider(config.fallback_embedding_dim),
                WordVectors(config.fallback_word_dim), {}, {}};
    if (paths.embeddings) r.embeddings = load_embeddings(*paths.embeddings, config.fallback_embedding_dim);
    if (paths.word_vectors) r.word_vectors = load_word_vectors(*paths.word_vectors);
    if (paths.stop_words) r.stop_words = load_stop_words(*paths.stop_words);
    if (paths.hallucination) r.synonyms = load_hallucination_spec(*paths.hallucination).synonyms();
    return r;
}

InstanceSignals compute_signals(const QAInstance& instance, const std::filesystem::path& base_dir,
                                const Resources& resources, const PipelineConfig& config) {
    InstanceSignals s;
    s.uncertainty = sentence_uncertainty(resolve_ensemble(instance, base_dir));
    s.sim = multi_reference_similarity(resources.embeddings, instance.generated_caption,
                                       instance.ground_truth_captions, config.reference_mode);
    s.question_words = question_terms(instance.question, resources.stop_words);
    s.graph = retrieve_subgraph(resources.kb, instance.image_keywords, s.question_words, config.hops);
    return s;
}

PreparedInstance prepare_instance(const QAInstance& instance, const std::filesystem::path& base_dir,
                                  const Resources& resources, const AnswerVocabulary& answers,
                                  const PipelineConfig& config) {
    auto signals = compute_signals(instance, base_dir, resources, config);
    PreparedInstance p;
    p.id = instance.id;
    p.gt_answers = instance.gt_answers;
    auto& ex = p.example;
    ex.sim = signals.sim;
    ex.u_al = signals.uncertainty.mean_al;
    ex.u_ep = signals.uncertainty.mean_ep;
    ex.implicit = instance.implicit_embedding;
    if (!signals.graph.empty()) {
        ex.node_features = assemble_node_features(signals.graph, instance.image_keywords, signals.question_words,
                                                  instance.implicit_embedding, resources.word_vectors)
                               .stacked();
    }
    ex.answer_nodes = answers.bind(signals.graph, resources.synonyms);
    ex.graph = std::move(signals.graph);
    ex.targets = soft_targets(answers, instance.gt_answers);
    return p;
}

PreparedDataset prepare_dataset(const Dataset& dataset, const Resources& resources, const AnswerVocabulary& answers,
                                const PipelineConfig& config) {
    PreparedDataset out;
    out.instances.reserve(dataset.size());
    for (const auto& inst : dataset.instances) {
        try {
            out.instances.push_back(prepare_instance(inst, dataset.base_dir, resources, answers, config));
        } catch (const Error& e) {
            out.skipped.emplace_back(inst.id, e.what());
        }
    }
    return out;
}

bool Checkpoint::operator==(const Checkpoint& o) const {
    return checkpoint_to_json(*this) == checkpoint_to_json(o) && params == o.params && stats == o.stats &&
           loss_trace == o.loss_trace;
}

ModelParams make_model_shape(const FusionDims& d, std::vector<std::string> relations,
                             std::span<const std::size_t> dims) {
    ModelParams p;
    p.fusion.gate_v = Matrix(1, d.feature_dim);
    p.fusion.gate_g = Matrix(1, d.feature_dim);
    p.fusion.answer_weight = Matrix(d.answer_count, d.implicit_dim);
    p.fusion.answer_bias = Vector(d.answer_count, 0.0);
    p.fusion.explicit_weight = Matrix(d.joint_dim, d.explicit_dim);
    p.fusion.explicit_bias = Vector(d.joint_dim, 0.0);
    p.fusion.implicit_weight = Matrix(d.joint_dim, d.implicit_dim);
    p.fusion.implicit_bias = Vector(d.joint_dim, 0.0);
    std::vector<RgcnLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        RgcnLayer layer;
        layer.relation_weights.assign(2 * relations.size(), Matrix(dims[l + 1], dims[l]));
        layer.self_weight = Matrix(dims[l + 1], dims[l]);
        layers.push_back(std::move(layer));
    }
    p.rgcn = RgcnParams(std::move(relations), std::move(layers));
    return p;
}

ModelParams initialize_model(const PipelineConfig& pipeline, const ModelConfig& model, const AnswerVocabulary& answers,
                             std::vector<std::string> relations, std::size_t implicit_dim, std::size_t word_dim,
                             Rng& rng) {
    const auto dims = rgcn_dims(pipeline, implicit_dim, word_dim);
    ModelParams p;
    p.rgcn = RgcnParams::initialize(std::move(relations), dims, rng);
    p.fusion = FusionParams::initialize(
        {model.selector.size(), implicit_dim, pipeline.explicit_dim, pipeline.joint_dim, answers.size()}, rng);
    return p;
}

Checkpoint train_prepared(std::span<const PreparedInstance> train, const AnswerVocabulary& answers,
                          std::vector<std::string> relations, std::size_t word_dim, const PipelineConfig& pipeline,
                          const ModelConfig& model, const TrainConfig& train_config) {
    if (train.empty()) throw Error("no usable training instances");
    if (answers.size() == 0) throw Error("empty answer vocabulary");
    std::vector<FusionExample> examples;
    std::vector<SimilarityRecord> records;
    examples.reserve(train.size());
    for (const auto& p : train) {
        examples.push_back(p.example);
        records.push_back({p.example.sim, p.example.u_al, p.example.u_ep});
    }
    Checkpoint ck;
    ck.model = model;
    ck.pipeline = pipeline;
    ck.train = train_config;
    ck.answers = answers;
    ck.word_dim = word_dim;
    ck.stats = FeatureStats::fit(records);
    Rng rng(train_config.seed);
    auto initial = initialize_model(pipeline, model, answers, std::move(relations),
                                    examples.front().implicit.size(), word_dim, rng);
    auto result = fit(examples, std::move(initial), model, ck.stats, train_config);
    ck.params = std::move(result.params);
    ck.loss_trace = std::move(result.loss_trace);
    return ck;
}

Checkpoint train_model(const Dataset& train, const Resources& resources, const PipelineConfig& pipeline,
                       const ModelConfig& model, const TrainConfig& train_config) {
    const auto answers = build_answer_vocabulary(train);
    const auto prepared = prepare_dataset(train, resources, answers, pipeline);
    return train_prepared(prepared.instances, answers, resources.kb.relations(), resources.word_vectors.dim(),
                          pipeline, model, train_config);
}

Json checkpoint_to_json(const Checkpoint& ck) {
    auto params = ck.params;  // tensors() hands out mutable views
    Json jp = Json::object();
    for (const auto& t : params.tensors()) {
        jp[t.name] = Json{{"rows", t.rows},
                          {"cols", t.cols},
                          {"data", std::vector<double>(t.values.begin(), t.values.end())}};
    }
    std::vector<std::size_t> dims;
    for (const auto& layer : ck.params.rgcn.layers()) dims.push_back(layer.input_dim());
    if (!ck.params.rgcn.layers().empty()) dims.push_back(ck.params.rgcn.output_dim());
    const auto fd = ck.params.fusion.dims();
    Json config{{"selector", ck.model.selector.to_string()},
                {"gating", gating_name(ck.model.gating)},
                {"use_explicit", ck.model.use_explicit},
                {"explicit_loss_weight", ck.model.explicit_loss_weight},
                {"pipeline", pipeline_config_to_json(ck.pipeline)},
                {"train",
                 {{"epochs", ck.train.epochs},
                  {"lr", ck.train.lr},
                  {"momentum", ck.train.momentum},
                  {"batch_size", ck.train.batch_size},
                  {"seed", ck.train.seed}}},
                {"answers", ck.answers.answers()},
                {"relations", ck.params.rgcn.relations()},
                {"word_dim", ck.word_dim},
                {"implicit_dim", fd.implicit_dim},
                {"rgcn_dims", dims}};
    return Json{{"version", Checkpoint::kVersion},
                {"config", std::move(config)},
                {"feature_stats",
                 {{"al_mean", ck.stats.al_mean},
                  {"al_scale", ck.stats.al_scale},
                  {"ep_mean", ck.stats.ep_mean},
                  {"ep_scale", ck.stats.ep_scale}}},
                {"params", std::move(jp)},
                {"loss_trace", ck.loss_trace}};
}

Checkpoint checkpoint_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("version")) throw Error("checkpoint has no version field");
    const auto version = j.at("version");
    if (!version.is_number_integer() || version.get<int>() != Checkpoint::kVersion) {
        throw Error("checkpoint version " + version.dump() + " is not supported (expected " +
                    std::to_string(Checkpoint::kVersion) + ")");
    }
    try {
        const auto& c = j.at("config");
        Checkpoint ck;
        ck.model.selector = FeatureSelector::parse(c.at("selector").get<std::string>());
        ck.model.gating = parse_gating(c.at("gating").get<std::string>());
        ck.model.use_explicit = c.at("use_explicit").get<bool>();
        ck.model.explicit_loss_weight = c.at("explicit_loss_weight").get<double>();
        ck.pipeline = pipeline_config_from_json(c.at("pipeline"));
        const auto& t = c.at("train");
        ck.train = {t.at("epochs").get<std::size_t>(), t.at("lr").get<double>(), t.at("momentum").get<double>(),
                    t.at("batch_size").get<std::size_t>(), t.at("seed").get<std::uint64_t>()};
        ck.answers = AnswerVocabulary(c.at("answers").get<std::vector<std::string>>());
        ck.word_dim = c.at("word_dim").get<std::size_t>();
        const auto implicit_dim = c.at("implicit_dim").get<std::size_t>();
        const auto dims = c.at("rgcn_dims").get<std::vector<std::size_t>>();
        const auto& fs = j.at("feature_stats");
        ck.stats = {fs.at("al_mean").get<double>(), fs.at("al_scale").get<double>(), fs.at("ep_mean").get<double>(),
                    fs.at("ep_scale").get<double>()};
        ck.params = make_model_shape({ck.model.selector.size(), implicit_dim, dims.empty() ? 0 : dims.back(),
                                      ck.pipeline.joint_dim, ck.answers.size()},
                                     c.at("relations").get<std::vector<std::string>>(), dims);
        const auto& jp = j.at("params");
        for (auto& tensor : ck.params.tensors()) {
            if (!jp.contains(tensor.name)) throw Error("checkpoint is missing parameter '" + tensor.name + "'");
            const auto& entry = jp.at(tensor.name);
            const auto data = entry.at("data").get<std::vector<double>>();
            if (entry.at("rows").get<std::size_t>() != tensor.rows || entry.at("cols").get<std::size_t>() != tensor.cols ||
                data.size() != tensor.values.size()) {
                throw Error("checkpoint parameter '" + tensor.name + "' has the wrong shape");
            }
            if (!all_finite(data)) throw Error("checkpoint parameter '" + tensor.name + "' is not finite");
            std::copy(data.begin(), data.end(), tensor.values.begin());
        }
        if (jp.size() != ck.params.tensors().size()) throw Error("checkpoint has unexpected parameters");
        if (j.contains("loss_trace")) ck.loss_trace = j.at("loss_trace").get<std::vector<double>>();
        return ck;
    } catch (const Json::exception& e) {
        throw Error(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    write_text_file(path, checkpoint_to_json(checkpoint).dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": malformed checkpoint: " + e.what());
    }
    try {
        return checkpoint_from_json(j);
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void require_selector(const Checkpoint& checkpoint, const FeatureSelector& requested) {
    if (!(checkpoint.model.selector == requested)) {
        throw Error("checkpoint was trained with selector '" + checkpoint.model.selector.to_string() +
                    "' and cannot run with selector '" + requested.to_string() + "'");
    }
}

InstanceResult predict_prepared(const PreparedInstance& instance, const Checkpoint& checkpoint,
                                const EvalOptions& options) {
    ModelConfig config = checkpoint.model;
    if (options.implicit_only) config.use_explicit = false;
    const auto st = forward(instance.example, checkpoint.params, config, checkpoint.stats);
    const auto pred = predict_answer(st.implicit_scores, st.explicit_scores);
    InstanceResult r;
    r.id = instance.id;
    r.predicted = checkpoint.answers.answer(pred.answer);
    r.score = pred.score;
    r.accuracy = vqa_accuracy(r.predicted, instance.gt_answers);
    r.v_score = st.gates.v;
    r.g_score = st.gates.g;
    r.from_explicit = pred.from_explicit;
    r.subgraph_nodes = instance.example.graph.node_count();
    return r;
}

EvaluationResult evaluate_prepared(std::span<const PreparedInstance> instances, const Checkpoint& checkpoint,
                                   const EvalOptions& options) {
    EvaluationResult out;
    double total = 0.0;
    for (const auto& inst : instances) {
        try {
            out.instances.push_back(predict_prepared(inst, checkpoint, options));
            total += out.instances.back().accuracy;
        } catch (const Error& e) {
            out.skipped.emplace_back(inst.id, e.what());
        }
    }
    if (!out.instances.empty()) out.accuracy = total / static_cast<double>(out.instances.size());
    return out;
}

EvaluationResult evaluate(const Dataset& dataset, const Checkpoint& checkpoint, const Resources& resources,
                          const EvalOptions& options) {
    if (resources.word_vectors.dim() != checkpoint.word_dim) {
        throw Error("word-vector dimension " + std::to_string(resources.word_vectors.dim()) +
                    " does not match the checkpoint's " + std::to_string(checkpoint.word_dim));
    }
    auto prepared = prepare_dataset(dataset, resources, checkpoint.answers, checkpoint.pipeline);
    auto result = evaluate_prepared(prepared.instances, checkpoint, options);
    prepared.skipped.insert(prepared.skipped.end(), result.skipped.begin(), result.skipped.end());
    result.skipped = std::move(prepared.skipped);
    return result;
}

std::string evaluation_csv(const EvaluationResult& result) {
    std::ostringstream out;
    out << "id,predicted,score,accuracy,v_score,g_score,source,subgraph_nodes\n";
    for (const auto& r : result.instances) {
        out << r.id << ',' << r.predicted << ',' << format_double(r.score) << ',' << format_double(r.accuracy) << ','
            << format_double(r.v_score) << ',' << format_double(r.g_score) << ','
            << (r.from_explicit ? "explicit" : "implicit") << ',' << r.subgraph_nodes << '\n';
    }
    return out.str();
}

Json instance_result_to_json(const InstanceResult& r) {
    return Json{{"id", r.id},
                {"answer", r.predicted},
                {"score", r.score},
                {"accuracy", r.accuracy},
                {"v_score", r.v_score},
                {"g_score", r.g_score},
                {"source", r.from_explicit ? "explicit" : "implicit"},
                {"subgraph_nodes", r.subgraph_nodes}};
}

}  // namespace kvqa
