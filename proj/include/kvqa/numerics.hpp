#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kvqa {

/// Raised for invalid inputs, shape mismatches and malformed files.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

/// Every random draw in the library comes from an explicitly seeded engine of this type.
using Rng = std::mt19937_64;

/// Dense row-major matrix of finite reals.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return values_; }
    std::span<const double> data() const noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

    void fill(double value);

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

/// A validated probability vector: entries in [0,1] summing to 1 within 1e-9.
class ProbabilityDistribution {
public:
    explicit ProbabilityDistribution(Vector probs);

    std::span<const double> probs() const noexcept { return probs_; }
    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }

private:
    Vector probs_;
};

/// Checks the distribution invariants without constructing; throws Error on violation.
void validate_distribution(std::span<const double> probs);

ProbabilityDistribution softmax(std::span<const double> logits);

/// -p ln p with the 0 ln 0 = 0 convention.
double entropy_term(double p);

/// Shannon entropy in nats.
double entropy(const ProbabilityDistribution& dist);
double entropy(std::span<const double> probs);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

double pearson(std::span<const double> xs, std::span<const double> ys);

double sigmoid(double x);

Vector affine_forward(const Matrix& weight, std::span<const double> bias, std::span<const double> x);

struct AffineGradients {
    Matrix weight;
    Vector bias;
    Vector input;
};

AffineGradients affine_backward(const Matrix& weight, std::span<const double> x,
                                std::span<const double> upstream);

inline constexpr double kBceEpsilon = 1e-7;

struct BceResult {
    double loss = 0.0;
    Vector grad;  // d loss / d pred
};

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
BceResult bce_loss(std::span<const double> pred, std::span<const double> target);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences, one coordinate at a time.
Vector finite_difference_gradient(const ScalarFunction& f, std::span<const double> theta,
                                  double step = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor); the comparison used by every gradient check.
double gradient_relative_error(std::span<const double> a, std::span<const double> b,
                               double floor = 1e-8);

/// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

bool all_finite(std::span<const double> values);

}  // namespace kvqa
