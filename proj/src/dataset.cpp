#include "kvqa/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_set>

#include "kvqa/io.hpp"

namespace kvqa {

namespace {

struct FieldError : Error {
    FieldError(const std::string& field, const std::string& msg) : Error("field '" + field + "': " + msg) {}
};

const Json& require(const Json& j, const char* field) {
    if (!j.contains(field)) throw FieldError(field, "missing");
    return j.at(field);
}

std::string require_string(const Json& j, const char* field, bool allow_empty = false) {
    const auto& v = require(j, field);
    if (!v.is_string()) throw FieldError(field, "expected a string");
    auto s = v.get<std::string>();
    if (!allow_empty && s.empty()) throw FieldError(field, "must not be empty");
    return s;
}

std::vector<std::string> string_list(const Json& j, const char* field) {
    const auto& v = require(j, field);
    if (!v.is_array()) throw FieldError(field, "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& x : v) {
        if (!x.is_string()) throw FieldError(field, "expected an array of strings");
        out.push_back(x.get<std::string>());
    }
    return out;
}

std::vector<Keyword> parse_keywords(const Json& j) {
    std::vector<Keyword> out;
    if (!j.contains("image_keywords")) return out;
    const auto& v = j.at("image_keywords");
    if (!v.is_array()) throw FieldError("image_keywords", "expected an array");
    for (const auto& k : v) {
        Keyword kw;
        if (k.is_array() && k.size() == 2 && k[0].is_string() && k[1].is_number()) {
            kw = {k[0].get<std::string>(), k[1].get<double>()};
        } else if (k.is_object() && k.contains("word") && k.contains("prob") && k.at("word").is_string() &&
                   k.at("prob").is_number()) {
            kw = {k.at("word").get<std::string>(), k.at("prob").get<double>()};
        } else {
            throw FieldError("image_keywords", "entries must be {\"word\", \"prob\"} or [word, prob]");
        }
        if (kw.word.empty()) throw FieldError("image_keywords", "empty keyword");
        if (!(kw.prob >= 0.0 && kw.prob <= 1.0)) throw FieldError("image_keywords", "probability outside [0,1]");
        out.push_back(std::move(kw));
    }
    return out;
}

std::vector<GroundTruthAnswer> parse_answers(const Json& j) {
    const auto& v = require(j, "gt_answers");
    if (!v.is_array() || v.empty()) throw FieldError("gt_answers", "expected a non-empty array");
    std::vector<GroundTruthAnswer> out;
    for (const auto& a : v) {
        GroundTruthAnswer ans;
        if (a.is_array() && a.size() == 2 && a[0].is_string() && a[1].is_number_integer()) {
            ans = {a[0].get<std::string>(), a[1].get<int>()};
        } else if (a.is_object() && a.contains("answer") && a.at("answer").is_string()) {
            ans.answer = a.at("answer").get<std::string>();
            const auto c = a.value("count", Json(1));
            if (!c.is_number_integer()) throw FieldError("gt_answers", "count must be an integer");
            ans.count = c.get<int>();
        } else {
            throw FieldError("gt_answers", "entries must be {\"answer\", \"count\"} or [answer, count]");
        }
        if (ans.count < 1) throw FieldError("gt_answers", "count must be >= 1");
        if (normalize_answer(ans.answer).empty()) throw FieldError("gt_answers", "empty answer");
        out.push_back(std::move(ans));
    }
    return out;
}

QAInstance parse_instance(const Json& j) {
    if (!j.is_object()) throw Error("expected a JSON object");
    QAInstance inst;
    inst.id = require_string(j, "id");
    inst.question = require_string(j, "question");
    inst.image_keywords = parse_keywords(j);
    {
        const auto& v = require(j, "implicit_embedding");
        if (!v.is_array() || v.empty()) throw FieldError("implicit_embedding", "expected a non-empty array of numbers");
        for (const auto& x : v) {
            if (!x.is_number()) throw FieldError("implicit_embedding", "expected numbers");
            inst.implicit_embedding.push_back(x.get<double>());
        }
        if (!all_finite(inst.implicit_embedding)) throw FieldError("implicit_embedding", "non-finite value");
    }
    inst.generated_caption = require_string(j, "generated_caption");
    inst.ground_truth_captions = string_list(j, "ground_truth_captions");
    if (inst.ground_truth_captions.empty()) throw FieldError("ground_truth_captions", "must not be empty");
    const auto& ens = require(j, "ensemble");
    if (ens.is_string()) {
        inst.ensemble = std::filesystem::path(ens.get<std::string>());
    } else if (ens.is_object()) {
        try {
            inst.ensemble = std::make_shared<const EnsembleTokenDistributions>(ensemble_from_json(ens));
        } catch (const Error& e) {
            throw FieldError("ensemble", e.what());
        }
    } else {
        throw FieldError("ensemble", "expected a path or an inline ensemble object");
    }
    inst.gt_answers = parse_answers(j);
    if (j.contains("objects")) inst.objects = string_list(j, "objects");
    return inst;
}

Json instance_to_json(const QAInstance& inst) {
    Json kws = Json::array();
    for (const auto& k : inst.image_keywords) kws.push_back({{"word", k.word}, {"prob", k.prob}});
    Json answers = Json::array();
    for (const auto& a : inst.gt_answers) answers.push_back({{"answer", a.answer}, {"count", a.count}});
    Json j{{"id", inst.id},
           {"question", inst.question},
           {"image_keywords", std::move(kws)},
           {"implicit_embedding", inst.implicit_embedding},
           {"generated_caption", inst.generated_caption},
           {"ground_truth_captions", inst.ground_truth_captions},
           {"gt_answers", std::move(answers)}};
    if (const auto* p = std::get_if<std::filesystem::path>(&inst.ensemble)) {
        j["ensemble"] = p->generic_string();
    } else {
        j["ensemble"] = ensemble_to_json(*std::get<std::shared_ptr<const EnsembleTokenDistributions>>(inst.ensemble));
    }
    if (!inst.objects.empty()) j["objects"] = inst.objects;
    return j;
}

}  // namespace

std::string split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw Error("unknown split '" + std::string(name) + "'");
}

Dataset parse_dataset(std::istream& in, std::string_view origin, std::filesystem::path base_dir) {
    Dataset ds;
    ds.base_dir = std::move(base_dir);
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
        QAInstance inst;
        try {
            inst = parse_instance(Json::parse(line));
        } catch (const Json::exception& e) {
            throw Error(where + e.what());
        } catch (const Error& e) {
            throw Error(where + e.what());
        }
        if (!ds.instances.empty() && inst.implicit_embedding.size() != ds.instances.front().implicit_embedding.size()) {
            throw Error(where + "field 'implicit_embedding': dimension " + std::to_string(inst.implicit_embedding.size()) +
                        " differs from " + std::to_string(ds.instances.front().implicit_embedding.size()));
        }
        if (!ids.insert(inst.id).second) throw Error(where + "duplicate id '" + inst.id + "'");
        ds.instances.push_back(std::move(inst));
    }
    if (ds.instances.empty()) throw Error(std::string(origin) + ": dataset is empty");
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset " + path.string());
    return parse_dataset(in, path.string(), path.parent_path());
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
    for (const auto& inst : dataset.instances) out << instance_to_json(inst).dump() << '\n';
}

EnsembleTokenDistributions resolve_ensemble(const QAInstance& instance, const std::filesystem::path& base_dir) {
    if (const auto* inline_ens = std::get_if<std::shared_ptr<const EnsembleTokenDistributions>>(&instance.ensemble)) {
        return **inline_ens;
    }
    auto path = std::get<std::filesystem::path>(instance.ensemble);
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    if (!std::filesystem::exists(path)) {
        throw Error("instance '" + instance.id + "': ensemble file " + path.string() + " not found");
    }
    return load_ensemble(path);
}

std::string normalize_answer(std::string_view answer) {
    auto begin = answer.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) return {};
    auto end = answer.find_last_not_of(" \t\r\n");
    std::string out(answer.substr(begin, end - begin + 1));
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

double vqa_accuracy(std::string_view predicted, std::span<const GroundTruthAnswer> gt_answers) {
    const auto p = normalize_answer(predicted);
    int matches = 0;
    for (const auto& a : gt_answers) {
        if (normalize_answer(a.answer) == p) matches += a.count;
    }
    return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

Vector soft_targets(const AnswerVocabulary& vocab, std::span<const GroundTruthAnswer> gt_answers) {
    Vector t(vocab.size(), 0.0);
    for (const auto& a : gt_answers) {
        if (auto i = vocab.index(normalize_answer(a.answer))) t[*i] += a.count;
    }
    for (double& x : t) x = std::min(x / 3.0, 1.0);
    return t;
}

AnswerVocabulary build_answer_vocabulary(const Dataset& dataset) {
    std::set<std::string> answers;
    for (const auto& inst : dataset.instances) {
        for (const auto& a : inst.gt_answers) answers.insert(normalize_answer(a.answer));
    }
    return AnswerVocabulary(std::vector<std::string>(answers.begin(), answers.end()));
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("split fraction must lie in [0,1]");
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dataset.size())));
    std::vector<bool> in_second(dataset.size(), false);
    for (std::size_t k = 0; k < held; ++k) in_second[order[k]] = true;
    Dataset first{{}, dataset.split, dataset.base_dir};
    Dataset second{{}, Split::val, dataset.base_dir};
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        (in_second[i] ? second : first).instances.push_back(dataset.instances[i]);
    }
    return {std::move(first), std::move(second)};
}

}  // namespace kvqa
