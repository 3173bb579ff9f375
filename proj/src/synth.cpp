#include "kvqa/synth.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "kvqa/io.hpp"
#include "kvqa/similarity.hpp"

namespace kvqa {

namespace {

const std::vector<std::string> kColors = {"red", "blue", "green", "yellow", "white", "black", "brown", "orange"};
const std::vector<std::string> kMaterials = {"wood", "metal", "glass", "plastic"};
const std::vector<std::string> kScenes = {"beach", "kitchen", "street", "park", "office", "farm", "forest", "harbor"};
const std::vector<std::string> kObjects = {
    "dog",    "cat",   "car",    "person", "bicycle", "bench",  "table",    "chair",  "boat",  "tree",
    "bird",   "horse", "bus",    "truck",  "cup",     "bottle", "umbrella", "clock",  "sheep", "cow",
    "laptop", "phone", "pizza",  "cake",   "kite",    "train",  "bag",      "lamp",   "sofa",  "vase"};
const std::map<std::string, std::string> kSynonyms = {
    {"puppy", "dog"}, {"kitten", "cat"}, {"automobile", "car"}, {"man", "person"}, {"woman", "person"}};
const std::vector<std::string> kFunctionWords = {"a", "near", "and", "at", "the", "in", "with", "on"};
const std::vector<std::string> kStopWords = {"what", "is", "the", "of", "a", "an", "in", "this", "picture", "made"};

// Shared-across-members logit noise, member noise and the confidence boosts of each position kind.
constexpr double kSharedNoise = 1.0;
constexpr double kMemberNoise = 0.3;
constexpr double kFunctionBoost = 6.0;
constexpr double kObjectBoost = 4.5;
constexpr double kHallucinationDrop = 2.5;
constexpr double kInconsistentDrop = 1.0;
constexpr double kDisagreementBase = 0.5;
constexpr double kDisagreementHallucinated = 2.5;
constexpr double kFunctionWeight = 0.3;
constexpr std::size_t kGroundTruthObjects = 4;
constexpr std::size_t kAlternatives = 8;

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
    return items[std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng)];
}

template <typename T>
T pick_other(const std::vector<T>& items, const T& avoid, Rng& rng) {
    for (;;) {
        const T& x = pick(items, rng);
        if (x != avoid) return x;
    }
}

Vector gaussian_vector(std::size_t dim, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(dim);
    for (double& x : v) x = normal(rng);
    return v;
}

Vector unit(Vector v) {
    const double n = l2_norm(v);
    for (double& x : v) x /= n;
    return v;
}

std::string canonical(const std::string& word) {
    auto it = kSynonyms.find(word);
    return it == kSynonyms.end() ? word : it->second;
}

// A word's sentence-space vector depends only on (seed, canonical word).
Vector word_code(const std::string& word, std::uint64_t seed, std::size_t dim) {
    Rng rng(stable_hash(canonical(word)) ^ (seed * 0x9E3779B97F4A7C15ULL));
    return gaussian_vector(dim, rng);
}

Vector sentence_code(const std::string& sentence, std::uint64_t seed, std::size_t dim) {
    Vector sum(dim, 0.0);
    for (const auto& tok : tokenize(sentence)) {
        const bool function = std::find(kFunctionWords.begin(), kFunctionWords.end(), tok) != kFunctionWords.end();
        const auto code = word_code(tok, seed, dim);
        for (std::size_t i = 0; i < dim; ++i) sum[i] += (function ? kFunctionWeight : 1.0) * code[i];
    }
    return unit(std::move(sum));
}

// Surface form of a grounded object, occasionally a synonym.
std::string surface(const std::string& object, Rng& rng) {
    std::vector<std::string> forms{object};
    for (const auto& [syn, canon] : kSynonyms) {
        if (canon == object) forms.push_back(syn);
    }
    if (forms.size() > 1 && std::bernoulli_distribution(0.3)(rng)) return forms[1 + std::uniform_int_distribution<std::size_t>(0, forms.size() - 2)(rng)];
    return object;
}

std::string object_caption(const std::vector<std::string>& objects, const std::string& scene) {
    std::ostringstream out;
    out << "a " << objects[0];
    for (std::size_t i = 1; i < objects.size(); ++i) out << (i == 1 ? " near a " : " and a ") << objects[i];
    out << " at the " << scene;
    return out.str();
}

struct CaptionPosition {
    std::string token;
    bool is_function = false;
    bool hallucinated = false;
};

EnsembleTokenDistributions caption_ensemble(const std::vector<CaptionPosition>& caption, bool consistent,
                                            const SynthConfig& config, Rng& rng) {
    std::vector<std::string> vocab;
    std::set<std::string> seen;
    for (const auto& p : caption) {
        if (seen.insert(p.token).second) vocab.push_back(p.token);
    }
    std::size_t added = 0;
    while (added < kAlternatives) {
        const auto& o = pick(kObjects, rng);
        if (seen.insert(o).second) {
            vocab.push_back(o);
            ++added;
        }
    }
    const std::size_t V = vocab.size();
    const std::size_t T = caption.size();
    const std::size_t M = config.members;
    std::normal_distribution<double> shared(0.0, kSharedNoise), member(0.0, kMemberNoise);
    std::uniform_int_distribution<std::size_t> any(0, V - 1);
    std::vector<double> logits(M * T * V);
    for (std::size_t t = 0; t < T; ++t) {
        const auto chosen = static_cast<std::size_t>(
            std::find(vocab.begin(), vocab.end(), caption[t].token) - vocab.begin());
        Vector base(V);
        for (double& x : base) x = shared(rng);
        double boost = caption[t].is_function ? kFunctionBoost : kObjectBoost;
        if (caption[t].hallucinated) boost -= config.al_coupling * kHallucinationDrop;
        if (!consistent) boost -= config.al_coupling * kInconsistentDrop;
        base[chosen] += boost;
        const double disagreement =
            kDisagreementBase + (caption[t].hallucinated ? config.ep_coupling * kDisagreementHallucinated : 0.0);
        for (std::size_t m = 0; m < M; ++m) {
            double* row = &logits[(m * T + t) * V];
            for (std::size_t v = 0; v < V; ++v) row[v] = base[v] + member(rng);
            row[any(rng)] += disagreement;
        }
    }
    return EnsembleTokenDistributions::from_logits(Vocabulary(std::move(vocab)), M, T, logits);
}

}  // namespace

SyntheticBundle generate_synthetic(const SynthConfig& config) {
    if (!(config.consistency_rate >= 0.0 && config.consistency_rate <= 1.0)) {
        throw Error("consistency rate must lie in [0,1]");
    }
    if (config.members == 0 || config.implicit_dim == 0 || config.word_dim == 0 || config.sentence_dim == 0) {
        throw Error("synthetic dimensions and member count must be positive");
    }
    SyntheticBundle b;
    b.stop_words = kStopWords;
    {
        std::set<std::string> object_words(kObjects.begin(), kObjects.end());
        b.hallucination = HallucinationSpec({}, kSynonyms, std::move(object_words));
    }
    if (config.n == 0) return b;

    Rng rng(config.seed);
    std::vector<std::string> answers = kColors;
    answers.insert(answers.end(), kMaterials.begin(), kMaterials.end());

    for (const auto& w : answers) b.word_vectors[w] = gaussian_vector(config.word_dim, rng);
    for (const auto& w : kScenes) b.word_vectors[w] = gaussian_vector(config.word_dim, rng);
    for (const auto& w : kObjects) b.word_vectors[w] = gaussian_vector(config.word_dim, rng);

    std::map<std::string, Vector> prototypes;
    for (const auto& a : answers) prototypes[a] = unit(gaussian_vector(config.implicit_dim, rng));

    // Scene facts shared by every instance.
    for (const auto& scene : kScenes) {
        std::set<std::string> linked;
        while (linked.size() < 3) linked.insert(pick(answers, rng));
        std::size_t k = 0;
        for (const auto& a : linked) {
            b.triples.push_back({scene, k++ % 2 == 0 ? "relatedto" : "atlocation", a, "scene"});
        }
    }

    std::bernoulli_distribution consistent_draw(config.consistency_rate);
    std::uniform_int_distribution<std::size_t> object_count(3, 5);
    std::uniform_real_distribution<double> scene_prob(0.6, 1.0), object_prob(0.3, 0.9);
    std::normal_distribution<double> noise(0.0, 1.0);

    for (std::size_t i = 0; i < config.n; ++i) {
        QAInstance inst;
        inst.id = "syn" + std::to_string(i);
        const std::string subject = "subject" + std::to_string(i);
        const bool consistent = consistent_draw(rng);
        const bool color = std::bernoulli_distribution(static_cast<double>(kColors.size()) /
                                                       static_cast<double>(answers.size()))(rng);
        const auto& pool = color ? kColors : kMaterials;
        const std::string answer = pick(pool, rng);
        const std::string kb_answer = consistent ? answer : pick_other(pool, answer, rng);
        inst.question = color ? "what color is the " + subject : "what is the " + subject + " made of";

        b.triples.push_back({subject, "hasproperty", kb_answer, "synthetic"});
        b.triples.push_back({subject, "relatedto", pick_other(answers, kb_answer, rng), "synthetic"});

        std::set<std::string> gt_set;
        while (gt_set.size() < kGroundTruthObjects) gt_set.insert(pick(kObjects, rng));
        const std::vector<std::string> gt_objects(gt_set.begin(), gt_set.end());
        inst.objects = gt_objects;
        const std::string scene = pick(kScenes, rng);
        inst.image_keywords = {{scene, scene_prob(rng)}, {pick(gt_objects, rng), object_prob(rng)}};

        const auto& proto = prototypes.at(answer);
        inst.implicit_embedding.resize(config.implicit_dim);
        for (std::size_t d = 0; d < config.implicit_dim; ++d) {
            inst.implicit_embedding[d] = config.implicit_signal * proto[d] + noise(rng) / std::sqrt(static_cast<double>(config.implicit_dim));
        }

        // Generated caption: grounded or hallucinated object slots plus a scene word.
        const std::size_t slots = object_count(rng);
        std::bernoulli_distribution hallucinate(consistent ? 0.1 : 0.5);
        std::vector<std::string> mentioned;
        std::vector<bool> hallucinated;
        std::size_t n_hall = 0;
        for (std::size_t s = 0; s < slots; ++s) {
            const bool h = hallucinate(rng);
            std::string obj;
            if (h) {
                do obj = pick(kObjects, rng);
                while (gt_set.count(obj));
                ++n_hall;
            } else {
                obj = surface(pick(gt_objects, rng), rng);
            }
            mentioned.push_back(obj);
            hallucinated.push_back(h);
        }
        const std::string caption_scene = consistent ? scene : pick_other(kScenes, scene, rng);
        inst.generated_caption = object_caption(mentioned, caption_scene);

        std::vector<CaptionPosition> positions;
        {
            std::size_t slot = 0;
            for (const auto& tok : tokenize(inst.generated_caption)) {
                CaptionPosition p{tok, false, false};
                if (slot < mentioned.size() && tok == mentioned[slot]) {
                    p.hallucinated = hallucinated[slot++];
                } else {
                    p.is_function = std::find(kFunctionWords.begin(), kFunctionWords.end(), tok) != kFunctionWords.end();
                }
                positions.push_back(std::move(p));
            }
        }
        inst.ensemble = std::make_shared<const EnsembleTokenDistributions>(
            caption_ensemble(positions, consistent, config, rng));

        for (int c = 0; c < 2; ++c) {
            std::vector<std::string> objs = gt_objects;
            std::shuffle(objs.begin(), objs.end(), rng);
            objs.resize(2 + static_cast<std::size_t>(std::bernoulli_distribution(0.5)(rng)));
            inst.ground_truth_captions.push_back(object_caption(objs, scene));
        }
        for (const auto* s : {&inst.generated_caption, &inst.ground_truth_captions[0], &inst.ground_truth_captions[1]}) {
            if (!b.sentence_embeddings.count(*s)) b.sentence_embeddings[*s] = sentence_code(*s, config.seed, config.sentence_dim);
        }

        inst.gt_answers.push_back({answer, std::uniform_int_distribution<int>(3, 10)(rng)});
        if (std::bernoulli_distribution(0.3)(rng)) {
            inst.gt_answers.push_back({pick_other(pool, answer, rng), std::uniform_int_distribution<int>(1, 2)(rng)});
        }

        b.truth.push_back({inst.id, consistent, answer, kb_answer,
                           static_cast<double>(n_hall) / static_cast<double>(slots)});
        b.dataset.instances.push_back(std::move(inst));
    }
    return b;
}

Resources synthetic_resources(const SyntheticBundle& bundle, const PipelineConfig& pipeline) {
    Resources r{KnowledgeBase(bundle.triples), EmbeddingProvider(pipeline.fallback_embedding_dim),
                WordVectors(bundle.word_vectors.empty() ? pipeline.fallback_word_dim
                                                        : bundle.word_vectors.begin()->second.size()),
                StopWords(bundle.stop_words.begin(), bundle.stop_words.end()), bundle.hallucination.synonyms()};
    for (const auto& [s, v] : bundle.sentence_embeddings) r.embeddings.add(s, v);
    for (const auto& [w, v] : bundle.word_vectors) r.word_vectors.add(w, v);
    return r;
}

void write_synthetic(const SyntheticBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "ensembles");
    Dataset on_disk = bundle.dataset;
    for (auto& inst : on_disk.instances) {
        const auto& ens = std::get<std::shared_ptr<const EnsembleTokenDistributions>>(inst.ensemble);
        const auto rel = std::filesystem::path("ensembles") / (inst.id + ".json");
        write_text_file(dir / rel, ensemble_to_json(*ens).dump() + "\n");
        inst.ensemble = rel;
    }
    {
        std::ostringstream out;
        write_dataset(out, on_disk);
        write_text_file(dir / "data.jsonl", out.str());
    }
    {
        std::ostringstream out;
        write_triples(out, bundle.triples);
        write_text_file(dir / "kb.tsv", out.str());
    }
    {
        std::ostringstream out;
        write_embeddings(out, bundle.sentence_embeddings);
        write_text_file(dir / "embeddings.jsonl", out.str());
    }
    {
        std::ostringstream out;
        write_word_vectors(out, bundle.word_vectors);
        write_text_file(dir / "word_vectors.jsonl", out.str());
    }
    write_text_file(dir / "hallucination.json", hallucination_spec_to_json(bundle.hallucination).dump(1) + "\n");
    {
        std::string text;
        for (const auto& w : bundle.stop_words) text += w + "\n";
        write_text_file(dir / "stopwords.txt", text);
    }
    {
        std::ostringstream out;
        out << "id,consistent,answer,kb_answer,hallucination_ratio\n";
        for (const auto& t : bundle.truth) {
            out << t.id << ',' << (t.consistent ? 1 : 0) << ',' << t.answer << ',' << t.kb_answer << ','
                << format_double(t.hallucination_ratio) << '\n';
        }
        write_text_file(dir / "truth.csv", out.str());
    }
}

}  // namespace kvqa
