#include "kvqa/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kvqa {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw Error("matrix value count " + std::to_string(values_.size()) + " does not match " +
                    std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    if (!all_finite(values_)) throw Error("matrix contains non-finite values");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

void validate_distribution(std::span<const double> probs) {
    if (probs.empty()) throw Error("empty distribution");
    double total = 0.0;
    for (double p : probs) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) throw Error("probability outside [0,1]");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw Error("probabilities sum to " + std::to_string(total) + ", expected 1");
    }
}

ProbabilityDistribution::ProbabilityDistribution(Vector probs) : probs_(std::move(probs)) {
    validate_distribution(probs_);
}

ProbabilityDistribution softmax(std::span<const double> logits) {
    if (logits.empty()) throw Error("empty logits");
    if (!all_finite(logits)) throw Error("non-finite logits");
    const double shift = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - shift);
        total += out[i];
    }
    for (double& p : out) p /= total;
    return ProbabilityDistribution(std::move(out));
}

double entropy_term(double p) { return p > 0.0 ? -p * std::log(p) : 0.0; }

double entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs) h += entropy_term(p);
    return h;
}

double entropy(const ProbabilityDistribution& dist) { return entropy(dist.probs()); }

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("dot: length mismatch");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("cosine_similarity: length mismatch");
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw Error("degenerate embedding");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw Error("pearson: length mismatch");
    if (xs.size() < 2) throw Error("pearson: need at least two points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error("zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Vector affine_forward(const Matrix& weight, std::span<const double> bias, std::span<const double> x) {
    if (weight.cols() != x.size() || weight.rows() != bias.size()) {
        throw Error("affine_forward: shape mismatch (" + std::to_string(weight.rows()) + "x" +
                    std::to_string(weight.cols()) + " weight, " + std::to_string(bias.size()) +
                    " bias, " + std::to_string(x.size()) + " input)");
    }
    Vector y(bias.begin(), bias.end());
    for (std::size_t r = 0; r < weight.rows(); ++r) y[r] += dot(weight.row(r), x);
    return y;
}

AffineGradients affine_backward(const Matrix& weight, std::span<const double> x,
                                std::span<const double> upstream) {
    if (weight.cols() != x.size() || weight.rows() != upstream.size()) {
        throw Error("affine_backward: shape mismatch");
    }
    AffineGradients g{Matrix(weight.rows(), weight.cols()),
                      Vector(upstream.begin(), upstream.end()), Vector(x.size(), 0.0)};
    for (std::size_t r = 0; r < weight.rows(); ++r) {
        const double u = upstream[r];
        if (u == 0.0) continue;
        auto grow = g.weight.row(r);
        auto wrow = weight.row(r);
        for (std::size_t c = 0; c < weight.cols(); ++c) {
            grow[c] = u * x[c];
            g.input[c] += u * wrow[c];
        }
    }
    return g;
}

BceResult bce_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) throw Error("bce_loss: length mismatch");
    if (pred.empty()) throw Error("bce_loss: empty input");
    const double n = static_cast<double>(pred.size());
    BceResult out{0.0, Vector(pred.size())};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = std::clamp(pred[i], kBceEpsilon, 1.0 - kBceEpsilon);
        const double t = target[i];
        if (!(t >= 0.0 && t <= 1.0)) throw Error("bce_loss: target outside [0,1]");
        out.loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        out.grad[i] = (-t / p + (1.0 - t) / (1.0 - p)) / n;
    }
    out.loss /= n;
    return out;
}

Vector finite_difference_gradient(const ScalarFunction& f, std::span<const double> theta,
                                  double step) {
    if (!(step > 0.0)) throw Error("finite difference step must be positive");
    Vector probe(theta.begin(), theta.end());
    Vector grad(theta.size());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + step;
        const double up = f(probe);
        probe[i] = saved - step;
        const double down = f(probe);
        probe[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw Error("non-finite function value at coordinate " + std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

double gradient_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
    if (a.size() != b.size()) throw Error("gradient_relative_error: length mismatch");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(diff) / std::max({l2_norm(a), l2_norm(b), floor});
}

Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = dist(rng);
    return m;
}

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace kvqa
