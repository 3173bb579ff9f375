#include "kvqa/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace kvqa {

namespace {

Vector vector_from_json(const Json& j, const std::string& what) {
    if (!j.is_array()) throw Error(what + ": expected an array of numbers");
    Vector v;
    v.reserve(j.size());
    for (const auto& x : j) {
        if (!x.is_number()) throw Error(what + ": expected an array of numbers");
        v.push_back(x.get<double>());
    }
    if (!all_finite(v)) throw Error(what + ": non-finite value");
    return v;
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw Error(where + ": " + e.what());
        }
        try {
            fn(j);
        } catch (const Json::exception& e) {
            throw Error(where + ": " + e.what());
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
    }
}

}  // namespace

std::string format_double(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

EnsembleTokenDistributions ensemble_from_json(const Json& j) {
    try {
        auto vocab = j.at("vocab").get<std::vector<std::string>>();
        const auto members = j.at("members").get<std::size_t>();
        const auto tokens = j.at("tokens").get<std::size_t>();
        const auto kind = j.value("kind", std::string("probs"));
        if (kind != "probs" && kind != "logits") throw Error("ensemble kind must be 'probs' or 'logits'");
        const auto& data = j.at("data");
        if (!data.is_array() || data.size() != members) {
            throw Error("ensemble data must hold " + std::to_string(members) + " members");
        }
        std::vector<double> flat;
        flat.reserve(members * tokens * vocab.size());
        for (std::size_t m = 0; m < members; ++m) {
            if (!data[m].is_array() || data[m].size() != tokens) {
                throw Error("ensemble member " + std::to_string(m) + " must hold " + std::to_string(tokens) + " tokens");
            }
            for (std::size_t t = 0; t < tokens; ++t) {
                auto row = vector_from_json(data[m][t], "ensemble member " + std::to_string(m) + " token " + std::to_string(t));
                if (row.size() != vocab.size()) {
                    throw Error("ensemble member " + std::to_string(m) + " token " + std::to_string(t) +
                                " has " + std::to_string(row.size()) + " entries, vocab has " +
                                std::to_string(vocab.size()));
                }
                flat.insert(flat.end(), row.begin(), row.end());
            }
        }
        if (kind == "logits") {
            return EnsembleTokenDistributions::from_logits(Vocabulary(std::move(vocab)), members, tokens, flat);
        }
        return EnsembleTokenDistributions(Vocabulary(std::move(vocab)), members, tokens, std::move(flat));
    } catch (const Json::exception& e) {
        throw Error(std::string("malformed ensemble: ") + e.what());
    }
}

Json ensemble_to_json(const EnsembleTokenDistributions& ens) {
    Json data = Json::array();
    for (std::size_t m = 0; m < ens.member_count(); ++m) {
        Json member = Json::array();
        for (std::size_t t = 0; t < ens.token_count(); ++t) {
            auto d = ens.distribution(m, t);
            member.push_back(Json(std::vector<double>(d.begin(), d.end())));
        }
        data.push_back(std::move(member));
    }
    return Json{{"vocab", ens.vocab().tokens()},
                {"members", ens.member_count()},
                {"tokens", ens.token_count()},
                {"kind", "probs"},
                {"data", std::move(data)}};
}

EnsembleTokenDistributions load_ensemble(const std::filesystem::path& path) {
    try {
        return ensemble_from_json(read_json_file(path));
    } catch (const Error& e) {
        const std::string msg = e.what();
        if (msg.rfind(path.string(), 0) == 0) throw;
        throw Error(path.string() + ": " + msg);
    }
}

HallucinationSpec hallucination_spec_from_json(const Json& j) {
    try {
        std::set<std::string> objects, object_words;
        std::map<std::string, std::string> synonyms;
        if (j.contains("objects")) {
            for (const auto& o : j.at("objects")) objects.insert(o.get<std::string>());
        }
        if (j.contains("object_words")) {
            for (const auto& o : j.at("object_words")) object_words.insert(o.get<std::string>());
        }
        if (j.contains("synonyms")) {
            for (const auto& [k, v] : j.at("synonyms").items()) synonyms[k] = v.get<std::string>();
        }
        HallucinationSpec base({}, std::move(synonyms), std::move(object_words));
        return base.with_objects(std::move(objects));
    } catch (const Json::exception& e) {
        throw Error(std::string("malformed hallucination spec: ") + e.what());
    }
}

Json hallucination_spec_to_json(const HallucinationSpec& spec) {
    return Json{{"objects", spec.ground_truth_objects()},
                {"synonyms", spec.synonyms()},
                {"object_words", spec.object_words()}};
}

HallucinationSpec load_hallucination_spec(const std::filesystem::path& path) {
    return hallucination_spec_from_json(read_json_file(path));
}

EmbeddingProvider load_embeddings(const std::filesystem::path& path, std::size_t fallback_dim) {
    EmbeddingProvider provider(fallback_dim);
    for_each_json_line(path, [&](const Json& j) {
        provider.add(j.at("sentence").get<std::string>(), vector_from_json(j.at("vector"), "vector"));
    });
    return provider;
}

void write_embeddings(std::ostream& out, const std::map<std::string, Vector>& table) {
    for (const auto& [sentence, vec] : table) out << Json{{"sentence", sentence}, {"vector", vec}}.dump() << '\n';
}

WordVectors load_word_vectors(const std::filesystem::path& path) {
    std::vector<std::pair<std::string, Vector>> rows;
    for_each_json_line(path, [&](const Json& j) {
        rows.emplace_back(j.at("word").get<std::string>(), vector_from_json(j.at("vector"), "vector"));
    });
    if (rows.empty()) throw Error(path.string() + ": no word vectors");
    WordVectors table(rows.front().second.size());
    for (auto& [word, vec] : rows) table.add(std::move(word), std::move(vec));
    return table;
}

void write_word_vectors(std::ostream& out, const std::map<std::string, Vector>& table) {
    for (const auto& [word, vec] : table) out << Json{{"word", word}, {"vector", vec}}.dump() << '\n';
}

}  // namespace kvqa
