#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "kvqa/analysis.hpp"
#include "kvqa/dataset.hpp"
#include "kvqa/model.hpp"
#include "kvqa/synth.hpp"

using namespace kvqa;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("kvqa_unit_" + tag + "_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> dataset_lines(std::size_t n) {
    SynthConfig cfg;
    cfg.n = n;
    cfg.seed = 3;
    std::ostringstream out;
    write_dataset(out, generate_synthetic(cfg).dataset);
    std::vector<std::string> lines;
    std::istringstream in(out.str());
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

struct Trained {
    SyntheticBundle bundle;
    Resources resources;
    PipelineConfig pipeline;
    PreparedDataset prepared;
    Checkpoint checkpoint;
};

const Trained& trained() {
    static const Trained t = [] {
        Trained x;
        SynthConfig cfg;
        cfg.n = 60;
        cfg.seed = 11;
        x.bundle = generate_synthetic(cfg);
        x.pipeline.hidden_dim = 8;
        x.pipeline.explicit_dim = 8;
        x.resources = synthetic_resources(x.bundle, x.pipeline);
        const auto answers = build_answer_vocabulary(x.bundle.dataset);
        x.prepared = prepare_dataset(x.bundle.dataset, x.resources, answers, x.pipeline);
        ModelConfig model;
        TrainConfig train{5, 0.1, 0.9, 16, 4};
        x.checkpoint = train_prepared(x.prepared.instances, answers, x.resources.kb.relations(),
                                      x.resources.word_vectors.dim(), x.pipeline, model, train);
        return x;
    }();
    return t;
}

}  // namespace

TEST_CASE("dataset parsing errors name the line and field") {
    std::istringstream empty("\n\n");
    CHECK_THROWS_WITH_AS(parse_dataset(empty, "d.jsonl"), doctest::Contains("dataset is empty"), Error);

    const auto lines = dataset_lines(2);
    std::istringstream dup(lines[0] + "\n" + lines[0] + "\n");
    CHECK_THROWS_WITH_AS(parse_dataset(dup, "d.jsonl"), doctest::Contains("d.jsonl:2: duplicate id"), Error);

    auto j = nlohmann::json::parse(lines[1]);
    j.erase("question");
    std::istringstream missing(lines[0] + "\n" + j.dump() + "\n");
    CHECK_THROWS_WITH_AS(parse_dataset(missing, "d.jsonl"), doctest::Contains("d.jsonl:2: field 'question': missing"), Error);

    j = nlohmann::json::parse(lines[0]);
    j["gt_answers"] = nlohmann::json::array();
    std::istringstream no_answers(j.dump());
    CHECK_THROWS_WITH_AS(parse_dataset(no_answers, "d.jsonl"), doctest::Contains("field 'gt_answers'"), Error);

    std::istringstream garbage("{not json");
    CHECK_THROWS_WITH_AS(parse_dataset(garbage, "d.jsonl"), doctest::Contains("d.jsonl:1:"), Error);
}

TEST_CASE("dataset round trip") {
    const auto lines = dataset_lines(3);
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    std::istringstream in(text);
    const auto ds = parse_dataset(in);
    std::ostringstream out;
    write_dataset(out, ds);
    CHECK(out.str() == text);
}

TEST_CASE("VQA accuracy") {
    const std::vector<GroundTruthAnswer> gt{{"red", 2}, {"Blue ", 4}, {"green", 1}};
    CHECK(vqa_accuracy("red", gt) == doctest::Approx(2.0 / 3.0));
    CHECK(vqa_accuracy("blue", gt) == 1.0);
    CHECK(vqa_accuracy("GREEN", gt) == doctest::Approx(1.0 / 3.0));
    CHECK(vqa_accuracy("pink", gt) == 0.0);
    const AnswerVocabulary vocab({"blue", "pink", "red"});
    const auto t = soft_targets(vocab, gt);
    CHECK(t == Vector{1.0, 0.0, 2.0 / 3.0});
}

TEST_CASE("split is seeded and sized") {
    SynthConfig cfg;
    cfg.n = 20;
    const auto ds = generate_synthetic(cfg).dataset;
    const auto [a, b] = split_dataset(ds, 0.25, 9);
    CHECK(a.size() == 15);
    CHECK(b.size() == 5);
    const auto [c, d] = split_dataset(ds, 0.25, 9);
    CHECK(d.instances[0].id == b.instances[0].id);
    CHECK_THROWS_AS(split_dataset(ds, 1.5, 9), Error);
}

TEST_CASE("pipeline configuration JSON") {
    PipelineConfig p;
    p.hops = 2;
    p.reference_mode = ReferenceAggregation::max;
    const auto back = pipeline_config_from_json(pipeline_config_to_json(p));
    CHECK(back.hops == 2);
    CHECK(back.reference_mode == ReferenceAggregation::max);
    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json{{"hopz", 1}}), Error);
    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json{{"hidden_dim", 0}}), Error);
}

TEST_CASE("checkpoint round trip is bit exact") {
    const auto& t = trained();
    TempDir dir("ckpt");
    const auto path = dir.path / "model.json";
    save_checkpoint(t.checkpoint, path);
    const auto loaded = load_checkpoint(path);
    CHECK(loaded == t.checkpoint);
    const auto a = evaluate_prepared(t.prepared.instances, t.checkpoint);
    const auto b = evaluate_prepared(t.prepared.instances, loaded);
    CHECK(evaluation_csv(a) == evaluation_csv(b));

    const auto text = read_file(path);
    {
        std::ofstream out(dir.path / "trunc.json");
        out << text.substr(0, text.size() / 2);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.path / "trunc.json"), doctest::Contains("malformed checkpoint"), Error);

    auto j = nlohmann::json::parse(text);
    j["version"] = 99;
    CHECK_THROWS_WITH_AS(checkpoint_from_json(j), doctest::Contains("version 99 is not supported"), Error);

    j = nlohmann::json::parse(text);
    j["params"].erase("W_v");
    CHECK_THROWS_AS(checkpoint_from_json(j), Error);

    CHECK_NOTHROW(require_selector(t.checkpoint, FeatureSelector{}));
    CHECK_THROWS_WITH_AS(require_selector(t.checkpoint, FeatureSelector::parse("sim,ep")),
                         doctest::Contains("trained with selector 'sim,al'"), Error);
}

TEST_CASE("evaluation is deterministic and reports the mean accuracy") {
    const auto& t = trained();
    const auto a = evaluate_prepared(t.prepared.instances, t.checkpoint);
    const auto b = evaluate_prepared(t.prepared.instances, t.checkpoint);
    CHECK(evaluation_csv(a) == evaluation_csv(b));
    double total = 0.0;
    for (const auto& r : a.instances) total += r.accuracy;
    CHECK(a.accuracy == doctest::Approx(total / a.instances.size()));
    CHECK(a.instances.size() == t.prepared.instances.size());
    const auto csv = evaluation_csv(a);
    CHECK(csv.rfind("id,predicted,score,accuracy,v_score,g_score,source,subgraph_nodes\n", 0) == 0);
}

TEST_CASE("a single instance whose answer is forced scores 1") {
    const auto& t = trained();
    auto ckpt = t.checkpoint;
    auto inst = t.prepared.instances.front();
    inst.gt_answers = {{ckpt.answers.answer(0), 3}};
    for (double& x : ckpt.params.fusion.answer_weight.data()) x = 0.0;
    ckpt.params.fusion.answer_bias.assign(ckpt.answers.size(), -30.0);
    ckpt.params.fusion.answer_bias[0] = 30.0;
    const auto r = evaluate_prepared(std::span<const PreparedInstance>(&inst, 1), ckpt, {true});
    CHECK(r.accuracy == 1.0);
}

TEST_CASE("an empty subgraph predicts exactly like the implicit-only model") {
    const auto& t = trained();
    for (auto inst : t.prepared.instances) {
        const auto implicit = predict_prepared(inst, t.checkpoint, {true});
        inst.example.graph = Subgraph();
        inst.example.node_features = Matrix();
        const auto empty = predict_prepared(inst, t.checkpoint);
        CHECK(empty.predicted == implicit.predicted);
        CHECK(empty.score == implicit.score);
        CHECK_FALSE(empty.from_explicit);
    }
}

TEST_CASE("instances with unresolvable ensembles are skipped") {
    const auto& t = trained();
    auto ds = t.bundle.dataset;
    ds.instances.resize(4);
    ds.instances[1].ensemble = fs::path("missing/does_not_exist.json");
    const auto prepared = prepare_dataset(ds, t.resources, t.checkpoint.answers, t.pipeline);
    CHECK(prepared.instances.size() == 3);
    REQUIRE(prepared.skipped.size() == 1);
    CHECK(prepared.skipped[0].first == ds.instances[1].id);
    const auto r = evaluate(ds, t.checkpoint, t.resources);
    CHECK(r.instances.size() == 3);
    CHECK(r.skipped.size() == 1);
}

TEST_CASE("synthetic generator is reproducible") {
    SynthConfig cfg;
    cfg.n = 12;
    cfg.seed = 5;
    TempDir a("synA"), b("synB");
    write_synthetic(generate_synthetic(cfg), a.path);
    write_synthetic(generate_synthetic(cfg), b.path);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.path)) {
        if (!e.is_regular_file()) continue;
        ++files;
        const auto rel = fs::relative(e.path(), a.path);
        CHECK(read_file(e.path()) == read_file(b.path / rel));
    }
    CHECK(files == 7 + 12);
    const auto loaded = load_dataset(a.path / "data.jsonl");
    CHECK(loaded.size() == 12);

    cfg.n = 0;
    const auto none = generate_synthetic(cfg);
    CHECK(none.dataset.empty());
    CHECK(none.truth.empty());
}

TEST_CASE("at full consistency the KB fact is always the correct answer") {
    SynthConfig cfg;
    cfg.n = 100;
    cfg.consistency_rate = 1.0;
    const auto b = generate_synthetic(cfg);
    double acc = 0.0;
    for (std::size_t i = 0; i < b.truth.size(); ++i) {
        CHECK(b.truth[i].consistent);
        acc += vqa_accuracy(b.truth[i].kb_answer, b.dataset.instances[i].gt_answers);
    }
    CHECK(acc / b.truth.size() == 1.0);
}

TEST_CASE("histogram and skewness") {
    const std::vector<double> same(10, 0.4);
    const auto h = histogram(same, 30);
    CHECK(h.counts.size() == 30);
    CHECK(h.counts[0] == 10);
    CHECK(sample_skewness(same) == 0.0);
    const std::vector<double> v{0.0, 0.5, 1.0, 1.0};
    const auto h2 = histogram(v, 2);
    CHECK(h2.counts == std::vector<std::size_t>{1, 3});
    // g1 of {1, 2, 3, 10}: m2 = 12.5, m3 = 45, g1 = 45 / 12.5^1.5
    const std::vector<double> s{1, 2, 3, 10};
    CHECK(sample_skewness(s) == doctest::Approx(45.0 / std::pow(12.5, 1.5)));
}

TEST_CASE("analysis reports") {
    SynthConfig cfg;
    cfg.n = 150;
    cfg.seed = 8;
    const auto b = generate_synthetic(cfg);
    const auto res = synthetic_resources(b);
    const auto report = analyze(b.dataset, res.embeddings, &b.hallucination);
    REQUIRE(report.correlations.has_value());
    CHECK((*report.correlations)[0].coefficient < -0.2);  // inconsistency lowers similarity, raises u_al
    REQUIRE(report.buckets.has_value());
    const auto csv = buckets_csv(*report.buckets);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
    for (std::size_t i = 0; i < report.instances.size(); ++i) {
        CHECK(*report.instances[i].hallucination_ratio == doctest::Approx(b.truth[i].hallucination_ratio));
    }

    Dataset one = b.dataset;
    one.instances.resize(1);
    const auto small = analyze(one, res.embeddings, nullptr);
    CHECK_FALSE(small.correlations.has_value());
    CHECK_FALSE(small.buckets.has_value());
    CHECK(small.notices.size() == 2);
}

TEST_CASE("identical captions collapse the similarity histogram") {
    SynthConfig cfg;
    cfg.n = 10;
    auto b = generate_synthetic(cfg);
    for (auto& inst : b.dataset.instances) inst.ground_truth_captions = {inst.generated_caption};
    const auto res = synthetic_resources(b);
    const auto report = analyze(b.dataset, res.embeddings);
    const auto& sim = report.distributions[2];
    CHECK(sim.counts[0] == 10);
    CHECK_FALSE(report.correlations.has_value());
}
