#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kvqa/dataset.hpp"
#include "kvqa/similarity.hpp"
#include "kvqa/uncertainty.hpp"

namespace kvqa {

struct Histogram {
    double lower = 0.0;
    double upper = 0.0;
    std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max]; the top edge belongs to the last bin.
/// A constant sample puts all its mass in the first bin.
Histogram histogram(std::span<const double> values, std::size_t bins = 30);

/// Moment-based sample skewness g1; 0 for a constant sample.
double sample_skewness(std::span<const double> values);

struct InstanceAnalysis {
    std::string id;
    SentenceUncertainty uncertainty;
    double sim = 0.0;
    std::optional<double> hallucination_ratio;
    std::optional<std::pair<double, double>> hallucinated_ratio;  // (aleatoric, epistemic)
};

struct AnalysisReport {
    std::vector<InstanceAnalysis> instances;
    std::optional<std::array<CorrelationRow, 3>> correlations;
    std::array<Histogram, 3> distributions;  // mean_al, mean_ep, sim
    std::array<double, 3> skewness{};
    std::optional<std::array<BucketReport, kBucketCount>> buckets;
    std::vector<std::pair<std::string, std::string>> skipped;
    std::vector<std::string> notices;
};

inline constexpr std::array<const char*, 3> kDistributionNames = {"mean_al", "mean_ep", "sim"};

/// Per-instance uncertainty and similarity plus the derived reports. Buckets need a
/// hallucination spec; instance `objects` override the spec's ground-truth objects.
AnalysisReport analyze(const Dataset& dataset, const EmbeddingProvider& provider,
                       const HallucinationSpec* spec = nullptr,
                       ReferenceAggregation mode = ReferenceAggregation::mean);

std::string records_csv(const AnalysisReport& report);
std::string correlations_csv(const std::array<CorrelationRow, 3>& rows);
std::string distributions_csv(const AnalysisReport& report);
std::string buckets_csv(const std::array<BucketReport, kBucketCount>& buckets);
std::string hallucinated_ratio_csv(const AnalysisReport& report);

/// Writes records.csv, correlations.csv, distributions.csv, buckets.csv and
/// buckets_hallucinated_ratio.csv (the last two only when buckets were computed).
void write_analysis(const AnalysisReport& report, const std::filesystem::path& dir);

}  // namespace kvqa
