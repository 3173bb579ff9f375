#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kvqa/knowledge.hpp"
#include "kvqa/numerics.hpp"

namespace kvqa {

/// One relational graph-convolution layer.
/// relation_weights[2r] serves forward edges of relation r, [2r+1] its inverse.
struct RgcnLayer {
    std::vector<Matrix> relation_weights;
    Matrix self_weight;

    std::size_t input_dim() const noexcept { return self_weight.cols(); }
    std::size_t output_dim() const noexcept { return self_weight.rows(); }

    bool operator==(const RgcnLayer&) const = default;
};

class RgcnParams {
public:
    RgcnParams() = default;
    RgcnParams(std::vector<std::string> relations, std::vector<RgcnLayer> layers);

    /// Glorot-uniform initialisation. `dims` = {input, hidden..., output}.
    static RgcnParams initialize(std::vector<std::string> relations, std::span<const std::size_t> dims,
                                 Rng& rng);

    /// Same shapes, every entry zero.
    RgcnParams zeros_like() const;

    const std::vector<std::string>& relations() const noexcept { return relations_; }
    std::vector<RgcnLayer>& layers() noexcept { return layers_; }
    const std::vector<RgcnLayer>& layers() const noexcept { return layers_; }
    std::optional<std::size_t> relation_index(std::string_view name) const;

    std::size_t input_dim() const;
    std::size_t output_dim() const;

    bool operator==(const RgcnParams&) const = default;

private:
    std::vector<std::string> relations_;
    std::vector<RgcnLayer> layers_;
};

/// Everything the backward pass needs from a forward pass.
struct RgcnTrace {
    std::vector<Matrix> inputs;          // h^l per layer
    std::vector<Matrix> preactivations;  // per layer, before ReLU
    std::vector<std::size_t> edge_weight_ids;  // per subgraph edge, index into relation_weights
    std::vector<double> edge_norm;             // per edge, 1 / c_{dst, relation}
    Matrix output;
};

/// h^{l+1}_i = act( sum_r sum_{j in N_i^r} W_r h_j / |N_i^r| + W_0 h_i ), ReLU on hidden layers,
/// identity on the last one. Throws when a subgraph relation has no parameters.
RgcnTrace rgcn_forward(const Subgraph& graph, const Matrix& features, const RgcnParams& params);

struct RgcnGradients {
    RgcnParams params;
    Matrix input;
};

RgcnGradients rgcn_backward(const Subgraph& graph, const RgcnTrace& trace, const RgcnParams& params,
                            const Matrix& upstream);

}  // namespace kvqa
