#include "kvqa/rgcn.hpp"

#include <algorithm>
#include <map>

namespace kvqa {

namespace {

// out_row += scale * W * x
void accumulate_matvec(const Matrix& w, std::span<const double> x, double scale, std::span<double> out) {
    for (std::size_t r = 0; r < w.rows(); ++r) out[r] += scale * dot(w.row(r), x);
}

// grad_w += scale * g x^T ; grad_x += scale * W^T g
void accumulate_outer(const Matrix& w, std::span<const double> x, std::span<const double> g, double scale,
                      Matrix& grad_w, std::span<double> grad_x) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double gr = scale * g[r];
        if (gr == 0.0) continue;
        auto gw = grad_w.row(r);
        auto wr = w.row(r);
        for (std::size_t c = 0; c < w.cols(); ++c) {
            gw[c] += gr * x[c];
            grad_x[c] += gr * wr[c];
        }
    }
}

}  // namespace

RgcnParams::RgcnParams(std::vector<std::string> relations, std::vector<RgcnLayer> layers)
    : relations_(std::move(relations)), layers_(std::move(layers)) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.relation_weights.size() != 2 * relations_.size()) {
            throw Error("rgcn layer " + std::to_string(l) + " has " +
                        std::to_string(layer.relation_weights.size()) + " relation matrices, expected " +
                        std::to_string(2 * relations_.size()));
        }
        for (const auto& w : layer.relation_weights) {
            if (w.rows() != layer.output_dim() || w.cols() != layer.input_dim()) {
                throw Error("rgcn layer " + std::to_string(l) + " relation matrix shape mismatch");
            }
        }
        if (l > 0 && layers_[l - 1].output_dim() != layer.input_dim()) {
            throw Error("rgcn layer " + std::to_string(l) + " input dim does not chain");
        }
    }
}

RgcnParams RgcnParams::initialize(std::vector<std::string> relations, std::span<const std::size_t> dims,
                                  Rng& rng) {
    if (dims.size() < 2) throw Error("rgcn needs at least input and output dims");
    std::vector<RgcnLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        RgcnLayer layer;
        for (std::size_t r = 0; r < 2 * relations.size(); ++r) {
            layer.relation_weights.push_back(glorot_uniform(dims[l + 1], dims[l], rng));
        }
        layer.self_weight = glorot_uniform(dims[l + 1], dims[l], rng);
        layers.push_back(std::move(layer));
    }
    return RgcnParams(std::move(relations), std::move(layers));
}

RgcnParams RgcnParams::zeros_like() const {
    RgcnParams copy = *this;
    for (auto& layer : copy.layers_) {
        for (auto& w : layer.relation_weights) w.fill(0.0);
        layer.self_weight.fill(0.0);
    }
    return copy;
}

std::optional<std::size_t> RgcnParams::relation_index(std::string_view name) const {
    auto it = std::lower_bound(relations_.begin(), relations_.end(), name);
    if (it != relations_.end() && *it == name) return static_cast<std::size_t>(it - relations_.begin());
    // Fall back to a linear scan for parameter sets built from unsorted relation lists.
    for (std::size_t i = 0; i < relations_.size(); ++i) {
        if (relations_[i] == name) return i;
    }
    return std::nullopt;
}

std::size_t RgcnParams::input_dim() const {
    if (layers_.empty()) throw Error("rgcn has no layers");
    return layers_.front().input_dim();
}

std::size_t RgcnParams::output_dim() const {
    if (layers_.empty()) throw Error("rgcn has no layers");
    return layers_.back().output_dim();
}

RgcnTrace rgcn_forward(const Subgraph& graph, const Matrix& features, const RgcnParams& params) {
    const std::size_t n = graph.node_count();
    if (features.rows() != n) throw Error("rgcn_forward: feature rows do not match node count");
    if (features.cols() != params.input_dim()) {
        throw Error("rgcn_forward: feature dim " + std::to_string(features.cols()) + ", expected " +
                    std::to_string(params.input_dim()));
    }

    RgcnTrace trace;
    const auto& edges = graph.edges();
    trace.edge_weight_ids.reserve(edges.size());
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> in_degree;  // (dst, weight id) -> count
    for (const auto& e : edges) {
        const auto& name = graph.relations()[e.relation];
        auto r = params.relation_index(name);
        if (!r) throw Error("relation '" + name + "' has no parameter matrix");
        const std::size_t id = 2 * *r + (e.direction == EdgeDirection::inverse ? 1 : 0);
        trace.edge_weight_ids.push_back(id);
        ++in_degree[{e.dst, id}];
    }
    trace.edge_norm.reserve(edges.size());
    for (std::size_t k = 0; k < edges.size(); ++k) {
        trace.edge_norm.push_back(1.0 / static_cast<double>(in_degree[{edges[k].dst, trace.edge_weight_ids[k]}]));
    }

    Matrix h = features;
    const auto& layers = params.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        Matrix pre(n, layer.output_dim());
        for (std::size_t i = 0; i < n; ++i) accumulate_matvec(layer.self_weight, h.row(i), 1.0, pre.row(i));
        for (std::size_t k = 0; k < edges.size(); ++k) {
            accumulate_matvec(layer.relation_weights[trace.edge_weight_ids[k]], h.row(edges[k].src),
                              trace.edge_norm[k], pre.row(edges[k].dst));
        }
        trace.inputs.push_back(std::move(h));
        h = pre;
        if (l + 1 < layers.size()) {
            for (double& v : h.data()) v = std::max(v, 0.0);
        }
        trace.preactivations.push_back(std::move(pre));
    }
    trace.output = std::move(h);
    return trace;
}

RgcnGradients rgcn_backward(const Subgraph& graph, const RgcnTrace& trace, const RgcnParams& params,
                            const Matrix& upstream) {
    const auto& layers = params.layers();
    if (trace.inputs.size() != layers.size()) throw Error("rgcn_backward: trace does not match params");
    if (upstream.rows() != trace.output.rows() || upstream.cols() != trace.output.cols()) {
        throw Error("rgcn_backward: upstream gradient shape mismatch");
    }
    const auto& edges = graph.edges();
    RgcnGradients grads{params.zeros_like(), {}};
    Matrix grad_out = upstream;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& layer = layers[l];
        auto& glayer = grads.params.layers()[l];
        const Matrix& h = trace.inputs[l];
        if (l + 1 < layers.size()) {
            const auto pre = trace.preactivations[l].data();
            auto g = grad_out.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (pre[i] <= 0.0) g[i] = 0.0;
            }
        }
        Matrix grad_in(h.rows(), h.cols());
        for (std::size_t i = 0; i < h.rows(); ++i) {
            accumulate_outer(layer.self_weight, h.row(i), grad_out.row(i), 1.0, glayer.self_weight, grad_in.row(i));
        }
        for (std::size_t k = 0; k < edges.size(); ++k) {
            const std::size_t id = trace.edge_weight_ids[k];
            accumulate_outer(layer.relation_weights[id], h.row(edges[k].src), grad_out.row(edges[k].dst),
                             trace.edge_norm[k], glayer.relation_weights[id], grad_in.row(edges[k].src));
        }
        grad_out = std::move(grad_in);
    }
    grads.input = std::move(grad_out);
    return grads;
}

}  // namespace kvqa
