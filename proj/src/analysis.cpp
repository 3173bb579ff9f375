#include "kvqa/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kvqa/io.hpp"

namespace kvqa {

namespace {

std::string summary_cells(const std::optional<FiveNumberSummary>& s) {
    if (!s) return ",,,,";
    return format_double(s->min) + ',' + format_double(s->q1) + ',' + format_double(s->median) + ',' +
           format_double(s->q3) + ',' + format_double(s->max);
}

std::string summary_header(const std::string& prefix) {
    return prefix + "_min," + prefix + "_q1," + prefix + "_median," + prefix + "_q3," + prefix + "_max";
}

}  // namespace

Histogram histogram(std::span<const double> values, std::size_t bins) {
    if (bins == 0) throw Error("histogram needs at least one bin");
    Histogram h;
    h.counts.assign(bins, 0);
    if (values.empty()) return h;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    h.lower = *lo;
    h.upper = *hi;
    const double width = (h.upper - h.lower) / static_cast<double>(bins);
    for (double v : values) {
        std::size_t b = 0;
        if (width > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((v - h.lower) / width));
        ++h.counts[b];
    }
    return h;
}

double sample_skewness(std::span<const double> values) {
    if (values.empty()) return 0.0;
    // Round-off in the mean would give a constant sample arbitrary skewness.
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo == *hi) return 0.0;
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0;
    for (double v : values) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if (m2 <= 0.0) return 0.0;
    return m3 / std::pow(m2, 1.5);
}

AnalysisReport analyze(const Dataset& dataset, const EmbeddingProvider& provider, const HallucinationSpec* spec,
                       ReferenceAggregation mode) {
    AnalysisReport report;
    std::vector<BucketedUncertainty> bucketed;
    for (const auto& inst : dataset.instances) {
        InstanceAnalysis a;
        a.id = inst.id;
        try {
            a.uncertainty = sentence_uncertainty(resolve_ensemble(inst, dataset.base_dir));
            a.sim = multi_reference_similarity(provider, inst.generated_caption, inst.ground_truth_captions, mode);
            if (spec) {
                const auto local = inst.objects.empty()
                                       ? *spec
                                       : spec->with_objects({inst.objects.begin(), inst.objects.end()});
                const auto tokens = tokenize(inst.generated_caption);
                a.hallucination_ratio = hallucination_ratio(tokens, local);
                a.hallucinated_ratio = hallucinated_uncertainty_ratio(a.uncertainty, tokens, local);
            }
        } catch (const Error& e) {
            report.skipped.emplace_back(inst.id, e.what());
            continue;
        }
        if (a.hallucination_ratio) {
            bucketed.emplace_back(a.uncertainty, hallucination_bucket(*a.hallucination_ratio));
        }
        report.instances.push_back(std::move(a));
    }

    std::array<std::vector<double>, 3> columns;
    std::vector<SimilarityRecord> records;
    for (const auto& a : report.instances) {
        columns[0].push_back(a.uncertainty.mean_al);
        columns[1].push_back(a.uncertainty.mean_ep);
        columns[2].push_back(a.sim);
        records.push_back({a.sim, a.uncertainty.mean_al, a.uncertainty.mean_ep});
    }
    for (std::size_t c = 0; c < 3; ++c) {
        report.distributions[c] = histogram(columns[c]);
        report.skewness[c] = sample_skewness(columns[c]);
    }

    if (records.size() < 2) {
        report.notices.push_back("correlations omitted: fewer than 2 analysed instances");
    } else {
        try {
            report.correlations = correlation_report(records);
        } catch (const Error& e) {
            report.notices.push_back(std::string("correlations omitted: ") + e.what());
        }
    }

    if (spec) {
        report.buckets = group_uncertainty_report(bucketed);
    } else {
        report.notices.push_back("bucket report omitted: no hallucination spec given");
    }
    return report;
}

std::string records_csv(const AnalysisReport& report) {
    std::ostringstream out;
    out << "id,sim,mean_al,mean_ep,mean_total,hallucination_ratio\n";
    for (const auto& a : report.instances) {
        out << a.id << ',' << format_double(a.sim) << ',' << format_double(a.uncertainty.mean_al) << ','
            << format_double(a.uncertainty.mean_ep) << ',' << format_double(a.uncertainty.mean_total) << ','
            << (a.hallucination_ratio ? format_double(*a.hallucination_ratio) : "") << '\n';
    }
    return out.str();
}

std::string correlations_csv(const std::array<CorrelationRow, 3>& rows) {
    std::ostringstream out;
    out << "pair,pearson\n";
    for (const auto& r : rows) out << r.pair << ',' << format_double(r.coefficient) << '\n';
    return out.str();
}

std::string distributions_csv(const AnalysisReport& report) {
    std::ostringstream out;
    out << "variable,bin,lower,upper,count,skewness\n";
    for (std::size_t c = 0; c < 3; ++c) {
        const auto& h = report.distributions[c];
        const double width = (h.upper - h.lower) / static_cast<double>(h.counts.size());
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            const double lo = h.lower + width * static_cast<double>(b);
            const double hi = b + 1 == h.counts.size() ? h.upper : h.lower + width * static_cast<double>(b + 1);
            out << kDistributionNames[c] << ',' << b << ',' << format_double(lo) << ',' << format_double(hi) << ','
                << h.counts[b] << ',' << format_double(report.skewness[c]) << '\n';
        }
    }
    return out.str();
}

std::string buckets_csv(const std::array<BucketReport, kBucketCount>& buckets) {
    std::ostringstream out;
    out << "bucket,count," << summary_header("al") << ',' << summary_header("ep") << '\n';
    for (const auto& b : buckets) {
        out << bucket_name(b.bucket) << ',' << b.count << ',' << summary_cells(b.aleatoric) << ','
            << summary_cells(b.epistemic) << '\n';
    }
    return out.str();
}

std::string hallucinated_ratio_csv(const AnalysisReport& report) {
    std::array<std::vector<double>, kBucketCount> al, ep;
    for (const auto& a : report.instances) {
        if (!a.hallucination_ratio || !a.hallucinated_ratio) continue;
        const auto b = static_cast<std::size_t>(hallucination_bucket(*a.hallucination_ratio));
        al[b].push_back(a.hallucinated_ratio->first);
        ep[b].push_back(a.hallucinated_ratio->second);
    }
    std::ostringstream out;
    out << "bucket,count," << summary_header("al_ratio") << ',' << summary_header("ep_ratio") << '\n';
    for (std::size_t b = 0; b < kBucketCount; ++b) {
        std::optional<FiveNumberSummary> sa, se;
        if (!al[b].empty()) {
            sa = five_number_summary(al[b]);
            se = five_number_summary(ep[b]);
        }
        out << bucket_name(static_cast<HallucinationBucket>(b)) << ',' << al[b].size() << ',' << summary_cells(sa)
            << ',' << summary_cells(se) << '\n';
    }
    return out.str();
}

void write_analysis(const AnalysisReport& report, const std::filesystem::path& dir) {
    write_text_file(dir / "records.csv", records_csv(report));
    if (report.correlations) write_text_file(dir / "correlations.csv", correlations_csv(*report.correlations));
    write_text_file(dir / "distributions.csv", distributions_csv(report));
    if (report.buckets) {
        write_text_file(dir / "buckets.csv", buckets_csv(*report.buckets));
        write_text_file(dir / "buckets_hallucinated_ratio.csv", hallucinated_ratio_csv(report));
    }
}

}  // namespace kvqa
