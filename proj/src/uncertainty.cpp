#include "kvqa/uncertainty.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace kvqa {

namespace {

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

void check_token_index(const EnsembleTokenDistributions& ens, std::size_t token_index) {
    if (token_index >= ens.token_count()) {
        throw Error("token index " + std::to_string(token_index) + " out of range (T=" +
                    std::to_string(ens.token_count()) + ")");
    }
}

Vector mixture_values(const EnsembleTokenDistributions& ens, std::size_t token_index) {
    check_token_index(ens, token_index);
    Vector mix(ens.vocab().size(), 0.0);
    for (std::size_t m = 0; m < ens.member_count(); ++m) {
        auto d = ens.distribution(m, token_index);
        for (std::size_t v = 0; v < mix.size(); ++v) mix[v] += d[v];
    }
    const double inv = 1.0 / static_cast<double>(ens.member_count());
    for (double& p : mix) p *= inv;
    return mix;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    lookup_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!lookup_.emplace(tokens_[i], i).second) {
            throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }
}

std::optional<std::size_t> Vocabulary::index(std::string_view token) const {
    auto it = lookup_.find(std::string(token));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

EnsembleTokenDistributions::EnsembleTokenDistributions(Vocabulary vocab, std::size_t members,
                                                       std::size_t tokens,
                                                       std::vector<double> probs)
    : vocab_(std::move(vocab)), members_(members), tokens_(tokens), probs_(std::move(probs)) {
    if (members_ == 0) throw Error("ensemble needs at least one member");
    if (tokens_ == 0) throw Error("ensemble needs at least one token");
    if (vocab_.size() == 0) throw Error("ensemble vocabulary is empty");
    if (probs_.size() != members_ * tokens_ * vocab_.size()) {
        throw Error("ensemble data has " + std::to_string(probs_.size()) + " values, expected " +
                    std::to_string(members_ * tokens_ * vocab_.size()));
    }
    for (std::size_t m = 0; m < members_; ++m) {
        for (std::size_t t = 0; t < tokens_; ++t) {
            try {
                validate_distribution(distribution(m, t));
            } catch (const Error& e) {
                throw Error("member " + std::to_string(m) + " token " + std::to_string(t) + ": " +
                            e.what());
            }
        }
    }
}

EnsembleTokenDistributions EnsembleTokenDistributions::from_logits(
    Vocabulary vocab, std::size_t members, std::size_t tokens, const std::vector<double>& logits) {
    const std::size_t v = vocab.size();
    if (v == 0 || logits.size() != members * tokens * v) {
        throw Error("ensemble logits have " + std::to_string(logits.size()) + " values, expected " +
                    std::to_string(members * tokens * v));
    }
    std::vector<double> probs;
    probs.reserve(logits.size());
    for (std::size_t row = 0; row < members * tokens; ++row) {
        auto dist = softmax(std::span<const double>(logits).subspan(row * v, v));
        probs.insert(probs.end(), dist.probs().begin(), dist.probs().end());
    }
    return EnsembleTokenDistributions(std::move(vocab), members, tokens, std::move(probs));
}

std::span<const double> EnsembleTokenDistributions::distribution(std::size_t member,
                                                                 std::size_t token) const {
    const std::size_t v = vocab_.size();
    return std::span<const double>(probs_).subspan((member * tokens_ + token) * v, v);
}

HallucinationSpec::HallucinationSpec(std::set<std::string> ground_truth_objects,
                                     std::map<std::string, std::string> synonyms,
                                     std::set<std::string> object_words)
    : objects_(std::move(ground_truth_objects)),
      synonyms_(std::move(synonyms)),
      object_words_(std::move(object_words)) {
    for (const auto& [word, canon] : synonyms_) {
        auto it = synonyms_.find(canon);
        if (it != synonyms_.end() && it->second != canon) {
            throw Error("synonym map is not idempotent: '" + word + "' -> '" + canon + "' -> '" +
                        it->second + "'");
        }
    }
}

std::string HallucinationSpec::canonical(std::string_view token) const {
    std::string lower = lowercase(token);
    auto it = synonyms_.find(lower);
    return it == synonyms_.end() ? lower : it->second;
}

bool HallucinationSpec::is_object_word(std::string_view token) const {
    const std::string lower = lowercase(token);
    return object_words_.count(lower) > 0 || object_words_.count(canonical(lower)) > 0;
}

bool HallucinationSpec::is_hallucinated(std::string_view token) const {
    return is_object_word(token) && objects_.count(canonical(token)) == 0;
}

HallucinationSpec HallucinationSpec::with_objects(std::set<std::string> ground_truth_objects) const {
    HallucinationSpec copy = *this;
    copy.objects_.clear();
    for (const auto& o : ground_truth_objects) copy.objects_.insert(copy.canonical(o));
    return copy;
}

ProbabilityDistribution mixture_distribution(const EnsembleTokenDistributions& ens,
                                             std::size_t token_index) {
    return ProbabilityDistribution(mixture_values(ens, token_index));
}

TokenUncertainty token_uncertainty(const EnsembleTokenDistributions& ens, std::size_t token_index) {
    check_token_index(ens, token_index);
    TokenUncertainty u;
    if (ens.member_count() == 1) {
        u.h_total = entropy(ens.distribution(0, token_index));
        u.u_al = u.h_total;
        return u;
    }
    double sum = 0.0;
    for (std::size_t m = 0; m < ens.member_count(); ++m) sum += entropy(ens.distribution(m, token_index));
    u.u_al = sum / static_cast<double>(ens.member_count());
    u.h_total = entropy(mixture_values(ens, token_index));
    u.raw_u_ep = u.h_total - u.u_al;
    u.u_ep = std::max(u.raw_u_ep, 0.0);
    // Keep h_total == u_al + u_ep exact after clamping a rounding-level negative.
    if (u.raw_u_ep < 0.0) u.h_total = u.u_al;
    return u;
}

SentenceUncertainty sentence_uncertainty(const EnsembleTokenDistributions& ens) {
    SentenceUncertainty s;
    s.per_token.reserve(ens.token_count());
    for (std::size_t t = 0; t < ens.token_count(); ++t) {
        s.per_token.push_back(token_uncertainty(ens, t));
        s.mean_al += s.per_token.back().u_al;
        s.mean_ep += s.per_token.back().u_ep;
        s.mean_total += s.per_token.back().h_total;
    }
    const double n = static_cast<double>(ens.token_count());
    s.mean_al /= n;
    s.mean_ep /= n;
    s.mean_total /= n;
    return s;
}

double sequence_log_prob(const EnsembleTokenDistributions& ens,
                         std::span<const std::size_t> token_sequence) {
    if (token_sequence.size() != ens.token_count()) {
        throw Error("sequence length " + std::to_string(token_sequence.size()) +
                    " does not match token count " + std::to_string(ens.token_count()));
    }
    double total = 0.0;
    for (std::size_t t = 0; t < token_sequence.size(); ++t) {
        if (token_sequence[t] >= ens.vocab().size()) throw Error("token id out of vocabulary");
        const double p = mixture_values(ens, t)[token_sequence[t]];
        total += std::log(std::max(p, kLogProbFloor));
    }
    return total;
}

double hallucinated_mass(const EnsembleTokenDistributions& ens, std::size_t token_index,
                         const HallucinationSpec& spec) {
    const Vector mix = mixture_values(ens, token_index);
    double mass = 0.0;
    for (std::size_t v = 0; v < mix.size(); ++v) {
        if (spec.is_hallucinated(ens.vocab().token(v))) mass += mix[v];
    }
    return mass;
}

EntropySplit entropy_split(const EnsembleTokenDistributions& ens, std::size_t token_index,
                           const HallucinationSpec& spec) {
    const Vector mix = mixture_values(ens, token_index);
    EntropySplit split;
    for (std::size_t v = 0; v < mix.size(); ++v) {
        const double term = entropy_term(mix[v]);
        if (spec.is_hallucinated(ens.vocab().token(v))) {
            split.hallucinated += term;
        } else {
            split.relevant += term;
        }
    }
    return split;
}

double hallucination_ratio(std::span<const std::string> caption_tokens, const HallucinationSpec& spec) {
    if (caption_tokens.empty()) throw Error("empty caption");
    std::size_t objects = 0;
    std::size_t hallucinated = 0;
    for (const auto& tok : caption_tokens) {
        if (!spec.is_object_word(tok)) continue;
        ++objects;
        if (spec.is_hallucinated(tok)) ++hallucinated;
    }
    if (objects == 0) return 0.0;
    return static_cast<double>(hallucinated) / static_cast<double>(objects);
}

HallucinationBucket hallucination_bucket(double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw Error("hallucination ratio " + std::to_string(ratio) + " outside [0,1]");
    }
    if (ratio < 0.2) return HallucinationBucket::G1;
    if (ratio < 0.4) return HallucinationBucket::G2;
    if (ratio < 0.6) return HallucinationBucket::G3;
    if (ratio < 0.8) return HallucinationBucket::G4;
    return HallucinationBucket::G5;
}

std::string bucket_name(HallucinationBucket bucket) {
    return "G" + std::to_string(static_cast<int>(bucket) + 1);
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw Error("quantile of empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

FiveNumberSummary five_number_summary(std::vector<double> values) {
    if (values.empty()) throw Error("summary of empty sample");
    std::sort(values.begin(), values.end());
    return {values.front(), quantile_sorted(values, 0.25), quantile_sorted(values, 0.5),
            quantile_sorted(values, 0.75), values.back()};
}

std::array<BucketReport, kBucketCount> group_uncertainty_report(
    std::span<const BucketedUncertainty> items) {
    std::array<std::vector<double>, kBucketCount> al, ep;
    for (const auto& [sentence, bucket] : items) {
        al[static_cast<std::size_t>(bucket)].push_back(sentence.mean_al);
        ep[static_cast<std::size_t>(bucket)].push_back(sentence.mean_ep);
    }
    std::array<BucketReport, kBucketCount> out;
    for (std::size_t b = 0; b < kBucketCount; ++b) {
        out[b].bucket = static_cast<HallucinationBucket>(b);
        out[b].count = al[b].size();
        if (out[b].count > 0) {
            out[b].aleatoric = five_number_summary(std::move(al[b]));
            out[b].epistemic = five_number_summary(std::move(ep[b]));
        }
    }
    return out;
}

std::optional<std::pair<double, double>> hallucinated_uncertainty_ratio(
    const SentenceUncertainty& sentence, std::span<const std::string> caption_tokens,
    const HallucinationSpec& spec) {
    if (caption_tokens.size() != sentence.per_token.size()) return std::nullopt;
    double al = 0.0, ep = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < caption_tokens.size(); ++i) {
        if (!spec.is_hallucinated(caption_tokens[i])) continue;
        al += sentence.per_token[i].u_al;
        ep += sentence.per_token[i].u_ep;
        ++n;
    }
    if (n == 0) return std::nullopt;
    al /= static_cast<double>(n);
    ep /= static_cast<double>(n);
    if (al == 0.0 || ep == 0.0) return std::nullopt;
    return std::make_pair(sentence.mean_al / al, sentence.mean_ep / ep);
}

}  // namespace kvqa
