#include "kvqa/fusion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace kvqa {

namespace {

std::string lowercase_trimmed(std::string_view s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) return {};
    auto end = s.find_last_not_of(" \t\r\n");
    std::string out(s.substr(begin, end - begin + 1));
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

Vector uniform_vector(std::size_t n, double limit, Rng& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    Vector v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

void add_outer(Matrix& m, std::span<const double> left, std::span<const double> right, double scale = 1.0) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double l = scale * left[r];
        if (l == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) row[c] += l * right[c];
    }
}

void add_transposed_matvec(const Matrix& m, std::span<const double> g, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        if (g[r] == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] += g[r] * row[c];
    }
}

void add_into(std::span<double> dst, std::span<const double> src, double scale = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

FeatureSelector FeatureSelector::parse(std::string_view text) {
    FeatureSelector s{false, false, false};
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto comma = text.find(',', pos);
        if (comma == std::string_view::npos) comma = text.size();
        const auto item = lowercase_trimmed(text.substr(pos, comma - pos));
        if (item == "sim") {
            s.use_sim = true;
        } else if (item == "al") {
            s.use_al = true;
        } else if (item == "ep") {
            s.use_ep = true;
        } else if (!item.empty()) {
            throw Error("unknown selector feature '" + item + "' (expected sim, al, ep)");
        }
        pos = comma + 1;
    }
    if (s.size() == 0) throw Error("selector must enable at least one of sim, al, ep");
    return s;
}

std::string FeatureSelector::to_string() const {
    std::string out;
    auto append = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ',';
        out += name;
    };
    append(use_sim, "sim");
    append(use_al, "al");
    append(use_ep, "ep");
    return out;
}

Vector inconsistency_features(double sim, double u_al, double u_ep, const FeatureSelector& selector) {
    if (selector.size() == 0) throw Error("selector must enable at least one of sim, al, ep");
    if (!std::isfinite(sim) || !std::isfinite(u_al) || !std::isfinite(u_ep)) {
        throw Error("non-finite inconsistency feature");
    }
    Vector out;
    if (selector.use_sim) out.push_back(sim);
    if (selector.use_al) out.push_back(u_al);
    if (selector.use_ep) out.push_back(u_ep);
    return out;
}

FeatureStats FeatureStats::fit(std::span<const SimilarityRecord> records) {
    FeatureStats s;
    if (records.empty()) return s;
    const double n = static_cast<double>(records.size());
    for (const auto& r : records) {
        s.al_mean += r.u_al;
        s.ep_mean += r.u_ep;
    }
    s.al_mean /= n;
    s.ep_mean /= n;
    double al_var = 0.0, ep_var = 0.0;
    for (const auto& r : records) {
        al_var += (r.u_al - s.al_mean) * (r.u_al - s.al_mean);
        ep_var += (r.u_ep - s.ep_mean) * (r.u_ep - s.ep_mean);
    }
    s.al_scale = al_var > 0.0 ? std::sqrt(al_var / n) : 1.0;
    s.ep_scale = ep_var > 0.0 ? std::sqrt(ep_var / n) : 1.0;
    return s;
}

SimilarityRecord FeatureStats::apply(const SimilarityRecord& raw) const {
    return {raw.sim, (raw.u_al - al_mean) / al_scale, (raw.u_ep - ep_mean) / ep_scale};
}

FusionParams FusionParams::initialize(const FusionDims& d, Rng& rng) {
    if (d.feature_dim == 0 || d.implicit_dim == 0 || d.explicit_dim == 0 || d.joint_dim == 0 ||
        d.answer_count == 0) {
        throw Error("fusion dimensions must all be positive");
    }
    FusionParams p;
    p.gate_v = Matrix(1, d.feature_dim, 0.0);  // gates start neutral at 0.5
    p.gate_g = Matrix(1, d.feature_dim, 0.0);
    p.answer_weight = glorot_uniform(d.answer_count, d.implicit_dim, rng);
    p.answer_bias = Vector(d.answer_count, 0.0);
    p.explicit_weight = glorot_uniform(d.joint_dim, d.explicit_dim, rng);
    p.explicit_bias = uniform_vector(d.joint_dim, 1.0 / std::sqrt(static_cast<double>(d.joint_dim)), rng);
    p.implicit_weight = glorot_uniform(d.joint_dim, d.implicit_dim, rng);
    p.implicit_bias = uniform_vector(d.joint_dim, 1.0 / std::sqrt(static_cast<double>(d.joint_dim)), rng);
    return p;
}

FusionParams FusionParams::zeros_like() const {
    FusionParams z = *this;
    for (Matrix* m : {&z.gate_v, &z.gate_g, &z.answer_weight, &z.explicit_weight, &z.implicit_weight}) m->fill(0.0);
    for (Vector* v : {&z.answer_bias, &z.explicit_bias, &z.implicit_bias}) std::fill(v->begin(), v->end(), 0.0);
    return z;
}

FusionDims FusionParams::dims() const {
    return {gate_v.cols(), answer_weight.cols(), explicit_weight.cols(), explicit_weight.rows(),
            answer_weight.rows()};
}

GateScores gate_scores(std::span<const double> features, const FusionParams& params) {
    if (features.size() != params.gate_v.cols() || features.size() != params.gate_g.cols() ||
        params.gate_v.rows() != 1 || params.gate_g.rows() != 1) {
        throw Error("gate_scores: feature length " + std::to_string(features.size()) +
                    " does not match gate weights");
    }
    return {sigmoid(dot(params.gate_v.row(0), features)), sigmoid(dot(params.gate_g.row(0), features))};
}

GatedRepresentations gated_representations(std::span<const double> z_implicit,
                                           const Matrix& z_explicit_nodes, double v_score,
                                           double g_score) {
    GatedRepresentations out{Vector(z_implicit.begin(), z_implicit.end()), z_explicit_nodes};
    for (double& x : out.implicit) x *= v_score;
    for (double& x : out.explicit_nodes.data()) x *= g_score;
    return out;
}

Vector implicit_scores(std::span<const double> z_v_implicit, const FusionParams& params) {
    Vector y = affine_forward(params.answer_weight, params.answer_bias, z_v_implicit);
    for (double& x : y) x = sigmoid(x);
    return y;
}

Vector explicit_scores(const Matrix& z_g_explicit_nodes, std::span<const double> z_v_implicit,
                       std::span<const std::optional<std::size_t>> answer_nodes,
                       const FusionParams& params) {
    const Vector query = affine_forward(params.implicit_weight, params.implicit_bias, z_v_implicit);
    Vector y(answer_nodes.size(), 0.0);
    for (std::size_t i = 0; i < answer_nodes.size(); ++i) {
        if (!answer_nodes[i]) continue;
        if (*answer_nodes[i] >= z_g_explicit_nodes.rows()) throw Error("explicit_scores: node index out of range");
        const Vector key =
            affine_forward(params.explicit_weight, params.explicit_bias, z_g_explicit_nodes.row(*answer_nodes[i]));
        y[i] = sigmoid(dot(key, query));
    }
    return y;
}

Prediction predict_answer(std::span<const double> y_implicit, std::span<const double> y_explicit) {
    if (y_implicit.empty()) throw Error("empty answer vocabulary");
    if (y_implicit.size() != y_explicit.size()) throw Error("predict_answer: score length mismatch");
    Prediction best{0, std::max(y_implicit[0], y_explicit[0]), y_explicit[0] > y_implicit[0]};
    for (std::size_t i = 1; i < y_implicit.size(); ++i) {
        const double s = std::max(y_implicit[i], y_explicit[i]);
        if (s > best.score) best = {i, s, y_explicit[i] > y_implicit[i]};
    }
    return best;
}

AnswerVocabulary::AnswerVocabulary(std::vector<std::string> answers) : answers_(std::move(answers)) {
    for (std::size_t i = 0; i < answers_.size(); ++i) {
        if (!lookup_.emplace(answers_[i], i).second) throw Error("duplicate answer '" + answers_[i] + "'");
    }
}

std::optional<std::size_t> AnswerVocabulary::index(std::string_view answer) const {
    auto it = lookup_.find(std::string(answer));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::optional<std::size_t>> AnswerVocabulary::bind(
    const Subgraph& graph, const std::map<std::string, std::string>& synonyms) const {
    std::vector<std::optional<std::size_t>> out(answers_.size());
    for (std::size_t i = 0; i < answers_.size(); ++i) {
        const auto key = lowercase_trimmed(answers_[i]);
        out[i] = graph.node_index(key);
        if (!out[i]) {
            auto syn = synonyms.find(key);
            if (syn != synonyms.end()) out[i] = graph.node_index(syn->second);
        }
    }
    return out;
}

ModelParams ModelParams::zeros_like() const { return {fusion.zeros_like(), rgcn.zeros_like()}; }

std::vector<NamedTensor> ModelParams::tensors() {
    std::vector<NamedTensor> out;
    auto matrix = [&](std::string name, Matrix& m) { out.push_back({std::move(name), m.rows(), m.cols(), m.data()}); };
    auto vector = [&](std::string name, Vector& v) { out.push_back({std::move(name), v.size(), 1, v}); };
    matrix("W_v", fusion.gate_v);
    matrix("W_g", fusion.gate_g);
    matrix("W", fusion.answer_weight);
    vector("b", fusion.answer_bias);
    matrix("W_ge", fusion.explicit_weight);
    vector("b_ge", fusion.explicit_bias);
    matrix("W_vi", fusion.implicit_weight);
    vector("b_vi", fusion.implicit_bias);
    const auto& relations = rgcn.relations();
    for (std::size_t l = 0; l < rgcn.layers().size(); ++l) {
        auto& layer = rgcn.layers()[l];
        const std::string prefix = "rgcn." + std::to_string(l) + ".";
        matrix(prefix + "self", layer.self_weight);
        for (std::size_t r = 0; r < relations.size(); ++r) {
            matrix(prefix + relations[r] + ".fwd", layer.relation_weights[2 * r]);
            matrix(prefix + relations[r] + ".inv", layer.relation_weights[2 * r + 1]);
        }
    }
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : const_cast<ModelParams*>(this)->tensors()) n += t.values.size();
    return n;
}

ForwardState forward(const FusionExample& example, const ModelParams& params, const ModelConfig& config,
                     const FeatureStats& stats) {
    const auto& fp = params.fusion;
    ForwardState st;
    const auto standardized = stats.apply({example.sim, example.u_al, example.u_ep});
    st.features = inconsistency_features(standardized.sim, standardized.u_al, standardized.u_ep, config.selector);
    if (config.gating == GatingMode::gated) st.gates = gate_scores(st.features, fp);

    st.gated_implicit = example.implicit;
    for (double& x : st.gated_implicit) x *= st.gates.v;
    st.implicit_logits = affine_forward(fp.answer_weight, fp.answer_bias, st.gated_implicit);
    st.implicit_scores = st.implicit_logits;
    for (double& x : st.implicit_scores) x = sigmoid(x);

    const std::size_t answers = fp.answer_weight.rows();
    if (example.answer_nodes.size() != answers) throw Error("answer binding length does not match vocabulary");
    st.explicit_logits.assign(answers, 0.0);
    st.explicit_scores.assign(answers, 0.0);
    if (!config.use_explicit || example.graph.empty()) return st;

    st.rgcn = rgcn_forward(example.graph, example.node_features, params.rgcn);
    st.gated_explicit = st.rgcn->output;
    for (double& x : st.gated_explicit.data()) x *= st.gates.g;
    st.query = affine_forward(fp.implicit_weight, fp.implicit_bias, st.gated_implicit);
    st.keys = Matrix(st.gated_explicit.rows(), fp.explicit_weight.rows());
    for (std::size_t n = 0; n < st.keys.rows(); ++n) {
        const Vector k = affine_forward(fp.explicit_weight, fp.explicit_bias, st.gated_explicit.row(n));
        std::copy(k.begin(), k.end(), st.keys.row(n).begin());
    }
    for (std::size_t i = 0; i < answers; ++i) {
        const auto& node = example.answer_nodes[i];
        if (!node) continue;
        st.explicit_logits[i] = dot(st.keys.row(*node), st.query);
        st.explicit_scores[i] = sigmoid(st.explicit_logits[i]);
    }
    return st;
}

LossResult loss_and_gradients(const FusionExample& example, const ForwardState& st, const ModelParams& params,
                              const ModelConfig& config, std::span<const double> targets) {
    const auto& fp = params.fusion;
    const std::size_t answers = st.implicit_scores.size();
    if (targets.size() != answers) throw Error("target length does not match answer vocabulary");

    LossResult out;
    out.grads = params.zeros_like();
    auto& gf = out.grads.fusion;

    // Implicit head.
    const auto implicit = bce_loss(st.implicit_scores, targets);
    out.implicit_loss = implicit.loss;
    Vector d_logits(answers);
    for (std::size_t i = 0; i < answers; ++i) {
        const double y = st.implicit_scores[i];
        d_logits[i] = implicit.grad[i] * y * (1.0 - y);
    }
    add_outer(gf.answer_weight, d_logits, st.gated_implicit);
    add_into(gf.answer_bias, d_logits);
    Vector d_gated_implicit(st.gated_implicit.size(), 0.0);
    add_transposed_matvec(fp.answer_weight, d_logits, d_gated_implicit);

    // Explicit head over bound answers.
    double d_g = 0.0;
    std::vector<std::size_t> bound;
    if (st.rgcn) {
        for (std::size_t i = 0; i < answers; ++i) {
            if (example.answer_nodes[i]) bound.push_back(i);
        }
    }
    if (!bound.empty()) {
        out.explicit_term_used = true;
        Vector preds, tgts;
        for (std::size_t i : bound) {
            preds.push_back(st.explicit_scores[i]);
            tgts.push_back(targets[i]);
        }
        const auto expl = bce_loss(preds, tgts);
        const double weight = config.explicit_loss_weight;
        out.explicit_loss = expl.loss;

        Matrix d_keys(st.keys.rows(), st.keys.cols());
        Vector d_query(st.query.size(), 0.0);
        for (std::size_t k = 0; k < bound.size(); ++k) {
            const std::size_t i = bound[k];
            const std::size_t node = *example.answer_nodes[i];
            const double y = st.explicit_scores[i];
            const double dl = weight * expl.grad[k] * y * (1.0 - y);
            add_into(d_keys.row(node), st.query, dl);
            add_into(d_query, st.keys.row(node), dl);
        }

        Matrix d_gated_explicit(st.gated_explicit.rows(), st.gated_explicit.cols());
        for (std::size_t n = 0; n < d_keys.rows(); ++n) {
            auto dk = d_keys.row(n);
            add_outer(gf.explicit_weight, dk, st.gated_explicit.row(n));
            add_into(gf.explicit_bias, dk);
            add_transposed_matvec(fp.explicit_weight, dk, d_gated_explicit.row(n));
        }
        add_outer(gf.implicit_weight, d_query, st.gated_implicit);
        add_into(gf.implicit_bias, d_query);
        add_transposed_matvec(fp.implicit_weight, d_query, d_gated_implicit);

        const Matrix& z_explicit = st.rgcn->output;
        Matrix d_explicit(z_explicit.rows(), z_explicit.cols());
        for (std::size_t i = 0; i < z_explicit.size(); ++i) {
            d_g += d_gated_explicit.data()[i] * z_explicit.data()[i];
            d_explicit.data()[i] = st.gates.g * d_gated_explicit.data()[i];
        }
        auto rg = rgcn_backward(example.graph, *st.rgcn, params.rgcn, d_explicit);
        out.grads.rgcn = std::move(rg.params);
    }
    out.loss = out.implicit_loss + (out.explicit_term_used ? config.explicit_loss_weight * out.explicit_loss : 0.0);

    if (config.gating == GatingMode::gated) {
        const double d_v = dot(d_gated_implicit, example.implicit);
        const double v = st.gates.v;
        const double g = st.gates.g;
        add_into(gf.gate_v.row(0), st.features, d_v * v * (1.0 - v));
        add_into(gf.gate_g.row(0), st.features, d_g * g * (1.0 - g));
    }
    return out;
}

FitResult fit(std::span<const FusionExample> dataset, ModelParams initial, const ModelConfig& config,
              const FeatureStats& stats, const TrainConfig& train) {
    if (dataset.empty()) throw Error("cannot fit on an empty dataset");
    if (train.batch_size == 0) throw Error("batch size must be positive");
    FitResult result{std::move(initial), {}};
    ModelParams velocity = result.params.zeros_like();
    Rng rng(train.seed);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
            const std::size_t end = std::min(order.size(), start + train.batch_size);
            ModelParams batch_grad = result.params.zeros_like();
            auto accum = batch_grad.tensors();
            for (std::size_t k = start; k < end; ++k) {
                const auto& ex = dataset[order[k]];
                const auto st = forward(ex, result.params, config, stats);
                auto lr = loss_and_gradients(ex, st, result.params, config, ex.targets);
                if (!std::isfinite(lr.loss)) {
                    throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", instance " +
                                std::to_string(order[k]));
                }
                epoch_loss += lr.loss;
                auto g = lr.grads.tensors();
                for (std::size_t t = 0; t < accum.size(); ++t) add_into(accum[t].values, g[t].values);
            }
            const double scale = 1.0 / static_cast<double>(end - start);
            auto params = result.params.tensors();
            auto vel = velocity.tensors();
            for (std::size_t t = 0; t < params.size(); ++t) {
                for (std::size_t i = 0; i < params[t].values.size(); ++i) {
                    vel[t].values[i] = train.momentum * vel[t].values[i] - train.lr * scale * accum[t].values[i];
                    params[t].values[i] += vel[t].values[i];
                }
                if (!all_finite(params[t].values)) {
                    throw Error("non-finite parameter '" + params[t].name + "' at epoch " + std::to_string(epoch));
                }
            }
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(dataset.size()));
    }
    return result;
}

}  // namespace kvqa
