#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kvqa/numerics.hpp"

namespace kvqa {

class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(std::size_t i) const { return tokens_.at(i); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    std::optional<std::size_t> index(std::string_view token) const;

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> lookup_;
};

/// Token distributions produced by each ensemble member for one caption.
///
/// Member m's distribution at caption position t is row (m * T + t) of an
/// (M * T) x |V| table. Every row is a valid probability distribution.
class EnsembleTokenDistributions {
public:
    EnsembleTokenDistributions(Vocabulary vocab, std::size_t members, std::size_t tokens,
                               std::vector<double> probs);

    /// Same layout as the constructor, but each row holds logits converted with softmax.
    static EnsembleTokenDistributions from_logits(Vocabulary vocab, std::size_t members,
                                                  std::size_t tokens,
                                                  const std::vector<double>& logits);

    std::size_t member_count() const noexcept { return members_; }
    std::size_t token_count() const noexcept { return tokens_; }
    const Vocabulary& vocab() const noexcept { return vocab_; }
    std::span<const double> distribution(std::size_t member, std::size_t token) const;
    const std::vector<double>& raw() const noexcept { return probs_; }

private:
    Vocabulary vocab_;
    std::size_t members_ = 0;
    std::size_t tokens_ = 0;
    std::vector<double> probs_;
};

struct TokenUncertainty {
    double h_total = 0.0;
    double u_al = 0.0;
    double u_ep = 0.0;      // clamped at zero
    double raw_u_ep = 0.0;  // h_total - u_al before clamping
};

struct SentenceUncertainty {
    std::vector<TokenUncertainty> per_token;
    double mean_al = 0.0;
    double mean_ep = 0.0;
    double mean_total = 0.0;
};

/// Decides which caption words count as hallucinated objects.
class HallucinationSpec {
public:
    HallucinationSpec() = default;
    HallucinationSpec(std::set<std::string> ground_truth_objects,
                      std::map<std::string, std::string> synonyms,
                      std::set<std::string> object_words);

    /// Single synonym-map lookup; unknown tokens pass through (lowercased).
    std::string canonical(std::string_view token) const;
    bool is_object_word(std::string_view token) const;
    bool is_hallucinated(std::string_view token) const;

    const std::set<std::string>& ground_truth_objects() const noexcept { return objects_; }
    const std::map<std::string, std::string>& synonyms() const noexcept { return synonyms_; }
    const std::set<std::string>& object_words() const noexcept { return object_words_; }

    HallucinationSpec with_objects(std::set<std::string> ground_truth_objects) const;

private:
    std::set<std::string> objects_;
    std::map<std::string, std::string> synonyms_;
    std::set<std::string> object_words_;
};

ProbabilityDistribution mixture_distribution(const EnsembleTokenDistributions& ens,
                                             std::size_t token_index);

TokenUncertainty token_uncertainty(const EnsembleTokenDistributions& ens, std::size_t token_index);

SentenceUncertainty sentence_uncertainty(const EnsembleTokenDistributions& ens);

inline constexpr double kLogProbFloor = 1e-12;

/// Sum over positions of ln p_mix(y_i), each term floored at ln(1e-12).
double sequence_log_prob(const EnsembleTokenDistributions& ens,
                         std::span<const std::size_t> token_sequence);

double hallucinated_mass(const EnsembleTokenDistributions& ens, std::size_t token_index,
                         const HallucinationSpec& spec);

struct EntropySplit {
    double relevant = 0.0;
    double hallucinated = 0.0;
};

EntropySplit entropy_split(const EnsembleTokenDistributions& ens, std::size_t token_index,
                           const HallucinationSpec& spec);

/// Fraction of object words in the caption whose canonical form is not a ground-truth object.
/// A caption with no object words has ratio 0.
double hallucination_ratio(std::span<const std::string> caption_tokens, const HallucinationSpec& spec);

enum class HallucinationBucket { G1 = 0, G2, G3, G4, G5 };
inline constexpr std::size_t kBucketCount = 5;

HallucinationBucket hallucination_bucket(double ratio);
std::string bucket_name(HallucinationBucket bucket);

struct FiveNumberSummary {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

/// Quantile of a sorted sample by linear interpolation between order statistics.
double quantile_sorted(std::span<const double> sorted, double q);
FiveNumberSummary five_number_summary(std::vector<double> values);

struct BucketReport {
    HallucinationBucket bucket = HallucinationBucket::G1;
    std::size_t count = 0;
    std::optional<FiveNumberSummary> aleatoric;
    std::optional<FiveNumberSummary> epistemic;
};

using BucketedUncertainty = std::pair<SentenceUncertainty, HallucinationBucket>;

std::array<BucketReport, kBucketCount> group_uncertainty_report(
    std::span<const BucketedUncertainty> items);

/// Caption-mean uncertainty divided by the mean over hallucinated positions, for
/// (aleatoric, epistemic). Empty when the caption has no hallucinated position, its length
/// differs from the ensemble's token count, or a hallucinated mean is zero.
std::optional<std::pair<double, double>> hallucinated_uncertainty_ratio(
    const SentenceUncertainty& sentence, std::span<const std::string> caption_tokens,
    const HallucinationSpec& spec);

}  // namespace kvqa
