// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.
// Usage: kvqa_acceptance [criterion numbers...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/experiment.hpp"
#include "../support/oracles.hpp"
#include "../support/toy_model.hpp"
#include "kvqa/analysis.hpp"
#include "kvqa/dataset.hpp"
#include "kvqa/model.hpp"
#include "kvqa/numerics.hpp"
#include "kvqa/rgcn.hpp"
#include "kvqa/similarity.hpp"
#include "kvqa/synth.hpp"
#include "kvqa/uncertainty.hpp"

using namespace kvqa;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets, pinned here rather than derived at run time.
constexpr double kIdentityTol = 1e-9;      // criteria 1, 2
constexpr double kGradientTol = 1e-4;      // criterion 3
constexpr double kOracleTol = 1e-9;        // criterion 4
constexpr double kCorrelationTol = 0.05;   // criterion 5
constexpr double kGatingMargin = 0.02;     // criterion 7
constexpr double kMetricTol = 1e-15;       // criterion 9

struct Outcome {
    bool ok = true;
    std::string detail;
};

struct Criterion {
    int number;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, format, a, b, c, d);
    return buf;
}

// 1. Entropy decomposition identities on random ensembles.
Outcome uncertainty_identities() {
    Rng rng(1001);
    std::uniform_int_distribution<std::size_t> members(1, 8), vocab(2, 50), tokens(1, 4);
    double worst = 0.0;
    std::size_t negative = 0, single_member_nonzero = 0, checked = 0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t m = members(rng), v = vocab(rng), t = tokens(rng);
        const auto ens = oracle::random_ensemble(rng, m, t, v);
        for (std::size_t i = 0; i < t; ++i) {
            const auto u = token_uncertainty(ens, i);
            std::vector<double> mix(v, 0.0);
            double al = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                const auto row = ens.distribution(j, i);
                const std::vector<double> p(row.begin(), row.end());
                al += oracle::entropy_nats(p) / static_cast<double>(m);
                for (std::size_t w = 0; w < v; ++w) mix[w] += p[w] / static_cast<double>(m);
            }
            const double total = oracle::entropy_nats(mix);
            worst = std::max({worst, std::abs(u.h_total - u.u_al - u.u_ep), std::abs(u.h_total - total),
                              std::abs(u.u_al - al), std::abs(u.u_ep - std::max(0.0, total - al))});
            negative += u.u_ep < 0.0;
            if (m == 1) single_member_nonzero += u.u_ep != 0.0;
            ++checked;
        }
    }
    Outcome o;
    o.ok = worst <= kIdentityTol && negative == 0 && single_member_nonzero == 0;
    o.detail = fmt("%.0f token positions, max deviation %.2e, u_ep<0: %.0f, M=1 with u_ep!=0: %.0f", checked, worst,
                   negative, single_member_nonzero);
    return o;
}

// 2. Relevant + hallucinated partial entropies equal the mixture entropy.
Outcome entropy_split_conservation() {
    Rng rng(2002);
    std::uniform_int_distribution<std::size_t> members(1, 8), vocab(2, 50);
    std::bernoulli_distribution coin(0.5);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t m = members(rng), v = vocab(rng);
        const auto ens = oracle::random_ensemble(rng, m, 1, v);
        std::set<std::string> objects, gt;
        for (const auto& w : ens.vocab().tokens()) {
            if (coin(rng)) {
                objects.insert(w);
                if (coin(rng)) gt.insert(w);
            }
        }
        const HallucinationSpec spec(gt, {}, objects);
        const auto split = entropy_split(ens, 0, spec);
        std::vector<double> mix(v, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            const auto row = ens.distribution(j, 0);
            for (std::size_t w = 0; w < v; ++w) mix[w] += row[w] / static_cast<double>(m);
        }
        double hallucinated = 0.0;
        for (std::size_t w = 0; w < v; ++w) {
            const auto& word = ens.vocab().token(w);
            if (objects.count(word) && !gt.count(word) && mix[w] > 0.0) hallucinated -= mix[w] * std::log(mix[w]);
        }
        worst = std::max({worst, std::abs(split.relevant + split.hallucinated - oracle::entropy_nats(mix)),
                          std::abs(split.hallucinated - hallucinated)});
    }
    return {worst <= kIdentityTol, fmt("1000 partitions, max deviation %.2e", worst)};
}

// 3. Analytic gradients against central differences.
Outcome gradient_suite() {
    Rng rng(3003);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.05, 0.95);
    double affine = 0.0, bce = 0.0, rgcn = 0.0, full = 0.0;
    for (int k = 0; k < 20; ++k) {
        // Affine layer under a random linear read-out.
        const std::size_t in = 2 + k % 4, out = 1 + k % 3;
        const auto w = oracle::random_matrix(out, in, rng);
        const auto b = oracle::random_matrix(1, out, rng).values();
        const auto x = oracle::random_matrix(1, in, rng).values();
        const auto up = oracle::random_matrix(1, out, rng).values();
        const auto g = affine_backward(w, x, up);
        auto f_w = [&](std::span<const double> t) {
            return dot(affine_forward(Matrix(out, in, Vector(t.begin(), t.end())), b, x), up);
        };
        auto f_b = [&](std::span<const double> t) { return dot(affine_forward(w, t, x), up); };
        auto f_x = [&](std::span<const double> t) { return dot(affine_forward(w, b, t), up); };
        affine = std::max({affine, gradient_relative_error(g.weight.values(), finite_difference_gradient(f_w, w.values())),
                           gradient_relative_error(g.bias, finite_difference_gradient(f_b, b)),
                           gradient_relative_error(g.input, finite_difference_gradient(f_x, x))});

        // BCE with soft targets, away from the clamp.
        Vector pred(5), target(5);
        for (auto& p : pred) p = unit(rng);
        for (auto& t : target) t = unit(rng);
        auto f_bce = [&](std::span<const double> p) { return bce_loss(p, target).loss; };
        bce = std::max(bce, gradient_relative_error(bce_loss(pred, target).grad, finite_difference_gradient(f_bce, pred)));

        // Two-layer RGCN on a 3-node / 2-relation graph, every weight and the input.
        const auto graph = oracle::random_graph(rng, 3, 2, 4);
        const std::size_t dims[] = {3, 4, 2};
        const auto params = RgcnParams::initialize(oracle::relation_names(2), dims, rng);
        const auto feats = oracle::random_matrix(3, 3, rng);
        const auto read = oracle::random_matrix(3, 2, rng);
        const auto trace = rgcn_forward(graph.graph, feats, params);
        auto grads = rgcn_backward(graph.graph, trace, params, read);
        Vector analytic = grads.input.values(), flat = feats.values();
        const std::size_t n_input = flat.size();
        for (const auto& layer : grads.params.layers()) {
            analytic.insert(analytic.end(), layer.self_weight.values().begin(), layer.self_weight.values().end());
            for (const auto& r : layer.relation_weights) analytic.insert(analytic.end(), r.values().begin(), r.values().end());
        }
        for (const auto& layer : params.layers()) {
            flat.insert(flat.end(), layer.self_weight.values().begin(), layer.self_weight.values().end());
            for (const auto& r : layer.relation_weights) flat.insert(flat.end(), r.values().begin(), r.values().end());
        }
        auto f_rgcn = [&](std::span<const double> t) {
            auto p = params;
            std::size_t i = n_input;
            for (auto& layer : p.layers()) {
                for (double& v : layer.self_weight.data()) v = t[i++];
                for (auto& r : layer.relation_weights) {
                    for (double& v : r.data()) v = t[i++];
                }
            }
            const Matrix input(3, 3, Vector(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(n_input)));
            return dot(rgcn_forward(graph.graph, input, p).output.values(), read.values());
        };
        rgcn = std::max(rgcn, gradient_relative_error(analytic, finite_difference_gradient(f_rgcn, flat)));

        // Composed model: gates, scorers, RGCN and the combined loss.
        const FeatureSelector selectors[] = {{true, true, false}, {true, true, true}, {false, true, false}, {true, false, false}};
        auto c = toy::make_case(rng, selectors[k % 4]);
        if (k % 5 == 4) c.config.gating = GatingMode::ungated;
        if (k % 7 == 6) c.config.explicit_loss_weight = 0.5;
        full = std::max(full, toy::gradient_error(c));
    }
    Outcome o;
    o.ok = std::max({affine, bce, rgcn, full}) < kGradientTol;
    o.detail = fmt("max rel. error affine %.1e, bce %.1e, rgcn %.1e, model %.1e", affine, bce, rgcn, full);
    return o;
}

// 4. Sparse RGCN against the dense-adjacency oracle.
Outcome rgcn_oracle() {
    Rng rng(4004);
    double worst = 0.0;
    std::size_t graphs = 0;
    for (std::size_t nodes = 1; nodes <= 5; ++nodes) {
        for (std::size_t relations = 1; relations <= 3; ++relations) {
            for (int rep = 0; rep < 20; ++rep) {
                const auto g = oracle::random_graph(rng, nodes, relations, 1 + rep % (2 * nodes + 1));
                const std::size_t dims[] = {4, 6, 5, 3};
                const std::size_t layers = 2 + rep % 2;
                const auto params = RgcnParams::initialize(oracle::relation_names(relations),
                                                           std::span<const std::size_t>(dims, layers + 1), rng);
                const auto x = oracle::random_matrix(nodes, 4, rng);
                const auto ours = rgcn_forward(g.graph, x, params).output;
                const auto ref = oracle::dense_rgcn(nodes, g.triples, relations, x, params);
                for (std::size_t i = 0; i < ours.size(); ++i) {
                    worst = std::max(worst, std::abs(ours.data()[i] - ref.data()[i]));
                }
                ++graphs;
            }
        }
    }
    return {worst <= kOracleTol, fmt("%.0f graphs, max abs deviation %.2e", graphs, worst)};
}

// 5. Planted correlations are recovered.
Outcome correlation_recovery() {
    Rng rng(5005);
    std::normal_distribution<double> normal(0.0, 1.0);
    Outcome o;
    for (const double rho : {-0.5, -0.2, 0.45}) {
        std::vector<SimilarityRecord> recs;
        for (int i = 0; i < 10000; ++i) {
            const double x = normal(rng), z = normal(rng);
            recs.push_back({x, rho * x + std::sqrt(1.0 - rho * rho) * z, normal(rng)});
        }
        const double r = correlation_report(recs)[0].coefficient;
        o.ok = o.ok && std::abs(r - rho) <= kCorrelationTol;
        o.detail += fmt("rho %.2f -> %.4f; ", rho, r);
    }
    return o;
}

// 6. Bucket medians rise with the hallucination ratio.
Outcome bucket_monotonicity() {
    SynthConfig cfg;
    cfg.seed = 6006;
    cfg.n = 1000;
    const auto bundle = generate_synthetic(cfg);
    const auto res = synthetic_resources(bundle);
    const auto report = analyze(bundle.dataset, res.embeddings, &bundle.hallucination);
    Outcome o;
    if (!report.buckets) return {false, "no bucket report"};
    double prev_al = -1.0, prev_ep = -1.0;
    std::size_t populated = 0;
    for (const auto& b : *report.buckets) {
        o.detail += bucket_name(b.bucket) + "(" + std::to_string(b.count) + ")";
        if (!b.aleatoric) {
            o.detail += " ";
            continue;
        }
        ++populated;
        o.detail += fmt(" al %.3f ep %.3f; ", b.aleatoric->median, b.epistemic->median);
        o.ok = o.ok && b.aleatoric->median >= prev_al && b.epistemic->median >= prev_ep;
        prev_al = b.aleatoric->median;
        prev_ep = b.epistemic->median;
    }
    o.ok = o.ok && populated == kBucketCount;
    return o;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

TrainConfig experiment_training(std::uint64_t seed) {
    TrainConfig t;
    t.epochs = 30;
    t.lr = 0.1;
    t.momentum = 0.9;
    t.batch_size = 32;
    t.seed = seed;
    return t;
}

SynthConfig experiment_corpus(std::uint64_t seed, double ep_coupling) {
    SynthConfig s;
    s.seed = seed;
    s.n = 2000;
    s.consistency_rate = 0.5;
    s.ep_coupling = ep_coupling;
    return s;
}

// 7. Gated beats ungated by a margin on every seed.
Outcome gating_efficacy() {
    Outcome o;
    for (const auto seed : kSeeds) {
        const auto split = experiment::make_split(experiment_corpus(seed, 1.0), seed);
        const auto tc = experiment_training(seed);
        const double base = experiment::test_accuracy(split, experiment::train(split, experiment::ungated(), tc));
        const double gate = experiment::test_accuracy(split, experiment::train(split, experiment::gated("sim,al"), tc));
        o.ok = o.ok && gate - base >= kGatingMargin;
        o.detail += fmt("seed %.0f: gated %.4f ungated %.4f; ", static_cast<double>(seed), gate, base);
    }
    return o;
}

// 8. {sim, al} >= {al} >= ungated in mean accuracy when u_ep carries no signal.
Outcome ablation_ordering() {
    double sim_al = 0.0, al = 0.0, base = 0.0;
    for (const auto seed : kSeeds) {
        const auto split = experiment::make_split(experiment_corpus(seed, 0.0), seed);
        const auto tc = experiment_training(seed);
        sim_al += experiment::test_accuracy(split, experiment::train(split, experiment::gated("sim,al"), tc)) / 3.0;
        al += experiment::test_accuracy(split, experiment::train(split, experiment::gated("al"), tc)) / 3.0;
        base += experiment::test_accuracy(split, experiment::train(split, experiment::ungated(), tc)) / 3.0;
    }
    return {sim_al >= al && al >= base, fmt("mean accuracy {sim,al} %.4f, {al} %.4f, ungated %.4f", sim_al, al, base)};
}

// 9. VQA accuracy over an exhaustive count table.
Outcome metric_table() {
    double worst = 0.0;
    std::size_t cases = 0;
    for (int count = 0; count <= 10; ++count) {
        for (int others = 0; others <= 10; ++others) {
            std::vector<GroundTruthAnswer> gt;
            if (count > 0) gt.push_back({"Red", count});
            if (others > 0 || count == 0) gt.push_back({"blue", std::max(others, 1)});
            const double expected = count >= 3 ? 1.0 : count / 3.0;
            worst = std::max({worst, std::abs(vqa_accuracy("red", gt) - expected),
                              std::abs(vqa_accuracy(" RED ", gt) - expected)});
            ++cases;
        }
    }
    return {worst <= kMetricTol, fmt("%.0f tables, max deviation %.1e", cases, worst)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 10. Seeds reproduce artifacts bit for bit; checkpoints survive a round trip.
Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / ("kvqa_acceptance_" + std::to_string(std::random_device{}()));
    SynthConfig cfg;
    cfg.seed = 1010;
    cfg.n = 300;
    write_synthetic(generate_synthetic(cfg), root / "a");
    write_synthetic(generate_synthetic(cfg), root / "b");
    std::size_t files = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file()) continue;
        ++files;
        differing += slurp(e.path()) != slurp(root / "b" / fs::relative(e.path(), root / "a"));
    }

    const auto split = experiment::make_split(cfg, 7);
    TrainConfig tc = experiment_training(7);
    tc.epochs = 8;
    const auto first = experiment::train(split, experiment::gated("sim,al"), tc);
    const auto second = experiment::train(split, experiment::gated("sim,al"), tc);
    const bool traces = first.loss_trace == second.loss_trace && first.params == second.params;
    const auto report_a = evaluation_csv(evaluate_prepared(split.test.instances, first));
    const auto report_b = evaluation_csv(evaluate_prepared(split.test.instances, second));

    save_checkpoint(first, root / "model.json");
    const auto loaded = load_checkpoint(root / "model.json");
    save_checkpoint(loaded, root / "model2.json");
    const bool round_trip = loaded == first && slurp(root / "model.json") == slurp(root / "model2.json") &&
                            evaluation_csv(evaluate_prepared(split.test.instances, loaded)) == report_a;
    std::error_code ec;
    fs::remove_all(root, ec);

    Outcome o;
    o.ok = files > 0 && differing == 0 && traces && report_a == report_b && round_trip;
    o.detail = fmt("%.0f synthetic files (%.0f differ), traces equal %.0f, reports equal %.0f", files, differing, traces,
                   report_a == report_b);
    o.detail += round_trip ? ", checkpoint round trip exact" : ", checkpoint round trip differs";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "uncertainty identities", 5, uncertainty_identities},
        {2, "entropy split conservation", 5, entropy_split_conservation},
        {3, "gradient suite", 30, gradient_suite},
        {4, "RGCN dense oracle", 5, rgcn_oracle},
        {5, "correlation recovery", 5, correlation_recovery},
        {6, "hallucination bucket monotonicity", 10, bucket_monotonicity},
        {7, "gating efficacy", 120, gating_efficacy},
        {8, "ablation ordering", 300, ablation_ordering},
        {9, "VQA metric table", 1, metric_table},
        {10, "determinism and persistence", 30, determinism},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.number)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = secs < c.budget_seconds;
        const bool pass = o.ok && in_budget;
        failures += !pass;
        std::printf("%s C%d %s [%.2fs / %.0fs budget%s] %s\n", pass ? "PASS" : "FAIL", c.number, c.name, secs,
                    c.budget_seconds, in_budget ? "" : ", over budget", o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
