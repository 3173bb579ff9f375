#pragma once

#include <random>

#include "kvqa/fusion.hpp"
#include "oracles.hpp"

namespace toy {

using namespace kvqa;

struct ToyCase {
    FusionExample example;
    ModelParams params;
    ModelConfig config;
    FeatureStats stats;
};

/// A small composed model: 3-node / 2-relation graph, 3 answers of which two are bound,
/// random soft targets. Parameters are scaled up so that gates and ReLUs are not degenerate.
inline ToyCase make_case(Rng& rng, const FeatureSelector& selector = {true, true, true}) {
    ToyCase c;
    const std::size_t implicit_dim = 3, word_dim = 2, answers = 3;
    const auto g = oracle::random_graph(rng, 3, 2, 4);
    c.example.graph = g.graph;
    const std::size_t in_dim = 2 + word_dim + implicit_dim;
    c.example.node_features = oracle::random_matrix(3, in_dim, rng);
    c.example.implicit = oracle::random_matrix(1, implicit_dim, rng).values();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    c.example.sim = unit(rng);
    c.example.u_al = 2.0 * unit(rng);
    c.example.u_ep = 0.5 * unit(rng);
    c.example.answer_nodes = {g.node_of_entity[0], std::nullopt, g.node_of_entity[2]};
    c.example.targets = {unit(rng), 1.0, 0.0};
    c.config.selector = selector;
    c.stats = {0.8, 0.6, 0.2, 0.1};
    const std::size_t dims[] = {in_dim, 4, 3};
    c.params.rgcn = RgcnParams::initialize(oracle::relation_names(2), dims, rng);
    c.params.fusion = FusionParams::initialize({selector.size(), implicit_dim, 3, 2, answers}, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : c.params.fusion.gate_v.data()) x = normal(rng);
    for (double& x : c.params.fusion.gate_g.data()) x = normal(rng);
    for (double& x : c.params.fusion.answer_bias) x = 0.3 * normal(rng);
    return c;
}

inline Vector flatten(ModelParams& p) {
    Vector out;
    for (const auto& t : p.tensors()) out.insert(out.end(), t.values.begin(), t.values.end());
    return out;
}

inline void assign(ModelParams& p, std::span<const double> flat) {
    std::size_t k = 0;
    for (auto& t : p.tensors()) {
        for (double& x : t.values) x = flat[k++];
    }
}

inline double loss_at(const ToyCase& c, std::span<const double> flat) {
    auto p = c.params;
    assign(p, flat);
    const auto st = forward(c.example, p, c.config, c.stats);
    return loss_and_gradients(c.example, st, p, c.config, c.example.targets).loss;
}

/// Relative error between the analytic and central-difference gradient over every parameter.
inline double gradient_error(ToyCase& c) {
    const auto st = forward(c.example, c.params, c.config, c.stats);
    auto grads = loss_and_gradients(c.example, st, c.params, c.config, c.example.targets).grads;
    const auto analytic = flatten(grads);
    const auto theta = flatten(c.params);
    const auto numeric = finite_difference_gradient([&](std::span<const double> v) { return loss_at(c, v); }, theta);
    return gradient_relative_error(analytic, numeric);
}

}  // namespace toy
