#include <doctest.h>

#include <cmath>
#include <limits>

#include "../support/toy_model.hpp"
#include "kvqa/fusion.hpp"

using namespace kvqa;

TEST_CASE("inconsistency features follow the fixed order") {
    CHECK(inconsistency_features(0.7, 1.2, 0.4, FeatureSelector::parse("sim")) == Vector{0.7});
    CHECK(inconsistency_features(0.7, 1.2, 0.4, FeatureSelector::parse("al,sim")) == Vector{0.7, 1.2});
    CHECK(inconsistency_features(0.7, 1.2, 0.4, FeatureSelector::parse("sim,al,ep")).size() == 3);
    CHECK_THROWS_AS(inconsistency_features(0.7, 1.2, 0.4, FeatureSelector{false, false, false}), Error);
    CHECK_THROWS_AS(FeatureSelector::parse(""), Error);
    CHECK_THROWS_AS(FeatureSelector::parse("sim,bogus"), Error);
    CHECK(FeatureSelector::parse("ep, SIM").to_string() == "sim,ep");
}

TEST_CASE("feature standardisation uses population statistics of the training set") {
    const std::vector<SimilarityRecord> recs{{0.1, 1.0, 0.5}, {0.2, 3.0, 0.5}};
    const auto s = FeatureStats::fit(recs);
    CHECK(s.al_mean == 2.0);
    CHECK(s.al_scale == 1.0);
    CHECK(s.ep_scale == 1.0);  // constant column keeps unit scale
    const auto z = s.apply({0.3, 3.0, 0.7});
    CHECK(z.sim == 0.3);
    CHECK(z.u_al == 1.0);
    CHECK(z.u_ep == doctest::Approx(0.2));
}

TEST_CASE("gate scores") {
    FusionParams p;
    p.gate_v = Matrix(1, 2);
    p.gate_g = Matrix(1, 2);
    auto g = gate_scores(std::vector<double>{0.3, -2.0}, p);
    CHECK(g.v == 0.5);
    CHECK(g.g == 0.5);
    p.gate_v = Matrix(1, 2, Vector{2, 0});
    g = gate_scores(std::vector<double>{1.0, 123.0}, p);
    CHECK(g.v == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
    p.gate_v = Matrix(1, 2, Vector{1e6, 0});
    CHECK(gate_scores(std::vector<double>{1.0, 0.0}, p).v == doctest::Approx(1.0));
    CHECK_THROWS_AS(gate_scores(std::vector<double>{1.0}, p), Error);
}

TEST_CASE("property: gates stay in (0,1) and are monotone in positively weighted features") {
    Rng rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int k = 0; k < 100; ++k) {
        FusionParams p;
        p.gate_v = Matrix(1, 2, Vector{std::abs(n(rng)) + 0.01, n(rng)});
        p.gate_g = Matrix(1, 2, Vector{n(rng), n(rng)});
        const Vector x{n(rng), n(rng)};
        const auto a = gate_scores(x, p);
        CHECK(a.v > 0.0);
        CHECK(a.v < 1.0);
        CHECK(a.g > 0.0);
        CHECK(a.g < 1.0);
        const auto b = gate_scores(Vector{x[0] + 0.5, x[1]}, p);
        CHECK(b.v > a.v);
    }
}

TEST_CASE("gated representations scale elementwise") {
    const auto r = gated_representations(std::vector<double>{2, -4}, Matrix(1, 2, Vector{1, 3}), 0.25, 1.0);
    CHECK(r.implicit == Vector{0.5, -1});
    CHECK(r.explicit_nodes == Matrix(1, 2, Vector{1, 3}));
    CHECK(gated_representations(std::vector<double>{2, -4}, Matrix(1, 1, Vector{8}), 0.5, 0.5).implicit == Vector{1, -2});
}

TEST_CASE("implicit scores") {
    FusionParams p;
    p.answer_weight = Matrix(2, 2);
    p.answer_bias = {0, 0};
    CHECK(implicit_scores(std::vector<double>{1, 1}, p) == Vector{0.5, 0.5});
    p.answer_weight = Matrix(2, 2, Vector{1, -1, 0.5, 2});
    p.answer_bias = {0.1, -0.2};
    const auto y = implicit_scores(std::vector<double>{1, 1}, p);
    CHECK(y[0] == doctest::Approx(1.0 / (1.0 + std::exp(-0.1))));
    CHECK(y[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.3))));
}

TEST_CASE("explicit scores") {
    FusionParams p;
    p.explicit_weight = Matrix(1, 1, Vector{1});
    p.explicit_bias = {0};
    p.implicit_weight = Matrix(1, 1, Vector{1});
    p.implicit_bias = {0};
    const std::vector<std::optional<std::size_t>> bind{0, std::nullopt, 1};
    const Matrix nodes(2, 1, Vector{1.0, -2.0});
    const auto y = explicit_scores(nodes, std::vector<double>{0.5}, bind, p);
    CHECK(y[0] == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
    CHECK(y[0] == doctest::Approx(0.6225).epsilon(1e-4));
    CHECK(y[1] == 0.0);
    CHECK(y[2] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));

    FusionParams zero;
    zero.explicit_weight = Matrix(2, 1);
    zero.explicit_bias = {0, 0};
    zero.implicit_weight = Matrix(2, 1);
    zero.implicit_bias = {0, 0};
    const auto z = explicit_scores(nodes, std::vector<double>{0.5}, bind, zero);
    CHECK(z == Vector{0.5, 0.0, 0.5});
    const std::vector<std::optional<std::size_t>> out_of_range{5};
    CHECK_THROWS_AS(explicit_scores(nodes, std::vector<double>{0.5}, out_of_range, p), Error);
}

TEST_CASE("final answer rule") {
    auto pr = predict_answer(std::vector<double>{0.2, 0.9}, std::vector<double>{0.95, 0.0});
    CHECK(pr.answer == 0);
    CHECK(pr.score == 0.95);
    CHECK(pr.from_explicit);
    pr = predict_answer(std::vector<double>{0.2, 0.9, 0.1}, std::vector<double>{0, 0, 0});
    CHECK(pr.answer == 1);
    CHECK_FALSE(pr.from_explicit);
    pr = predict_answer(std::vector<double>{0.1, 0.7, 0.2, 0.7}, std::vector<double>{0, 0, 0, 0});
    CHECK(pr.answer == 1);
    CHECK_THROWS_AS(predict_answer(std::vector<double>{}, std::vector<double>{}), Error);
    CHECK_THROWS_AS(predict_answer(std::vector<double>{0.1}, std::vector<double>{0.1, 0.2}), Error);
}

TEST_CASE("property: appending answers scored below the max keeps the argmax") {
    Rng rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 100; ++k) {
        Vector yi(5), ye(5);
        for (auto& x : yi) x = u(rng);
        for (auto& x : ye) x = u(rng);
        const auto before = predict_answer(yi, ye);
        for (int extra = 0; extra < 3; ++extra) {
            yi.push_back(before.score * u(rng) * 0.999);
            ye.push_back(before.score * u(rng) * 0.999);
        }
        const auto after = predict_answer(yi, ye);
        CHECK(after.answer == before.answer);
        CHECK(after.score == before.score);
    }
}

TEST_CASE("answer binding uses lowercase matches, then synonyms") {
    const KnowledgeBase kb({{"grass", "hasproperty", "green", "x"}, {"grass", "relatedto", "dog", "x"}});
    const auto g = retrieve_subgraph(kb, {}, std::vector<std::string>{"grass"}, 1);
    const AnswerVocabulary v({"Green", "puppy", "blue"});
    const auto b = v.bind(g, {{"puppy", "dog"}});
    CHECK(b[0] == g.node_index("green"));
    CHECK(b[1] == g.node_index("dog"));
    CHECK_FALSE(b[2].has_value());
    CHECK_THROWS_AS(AnswerVocabulary({"a", "a"}), Error);
}

TEST_CASE("with g = 0 and zero biases the explicit path cannot discriminate") {
    Rng rng(4);
    auto c = toy::make_case(rng);
    c.params.fusion.explicit_bias.assign(c.params.fusion.explicit_bias.size(), 0.0);
    const auto st = forward(c.example, c.params, c.config, c.stats);
    const auto forced = gated_representations(st.gated_implicit, st.rgcn->output, 1.0, 0.0);
    const auto y = explicit_scores(forced.explicit_nodes, forced.implicit, c.example.answer_nodes, c.params.fusion);
    CHECK(y[0] == y[2]);
    CHECK(y[0] == 0.5);
}

TEST_CASE("loss values") {
    Rng rng(2);
    auto c = toy::make_case(rng);
    // All parameters zero: every score is 0.5, so each BCE term is ln 2.
    c.params = c.params.zeros_like();
    c.example.targets = {1.0, 0.0, 1.0};
    const auto st = forward(c.example, c.params, c.config, c.stats);
    const auto r = loss_and_gradients(c.example, st, c.params, c.config, c.example.targets);
    CHECK(r.implicit_loss == doctest::Approx(std::log(2.0)));
    CHECK(r.explicit_loss == doctest::Approx(std::log(2.0)));
    CHECK(r.loss == doctest::Approx(2.0 * std::log(2.0)));
    CHECK(r.explicit_term_used);

    auto unbound = c;
    unbound.example.answer_nodes = {std::nullopt, std::nullopt, std::nullopt};
    const auto st2 = forward(unbound.example, unbound.params, unbound.config, unbound.stats);
    const auto r2 = loss_and_gradients(unbound.example, st2, unbound.params, unbound.config, unbound.example.targets);
    CHECK_FALSE(r2.explicit_term_used);
    CHECK(r2.loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("loss is near zero when predictions equal hard targets") {
    Rng rng(2);
    auto c = toy::make_case(rng);
    c.params = c.params.zeros_like();
    c.config.use_explicit = false;
    c.example.targets = {1.0, 0.0, 1.0};
    c.params.fusion.answer_bias = {50.0, -50.0, 50.0};
    const auto st = forward(c.example, c.params, c.config, c.stats);
    const auto r = loss_and_gradients(c.example, st, c.params, c.config, c.example.targets);
    CHECK(r.loss < 1e-6);
}

TEST_CASE("property: composed-model gradients match finite differences") {
    Rng rng(21);
    const FeatureSelector selectors[] = {{true, true, true}, {true, true, false}, {false, true, false}};
    for (int k = 0; k < 9; ++k) {
        auto c = toy::make_case(rng, selectors[k % 3]);
        if (k % 4 == 3) c.config.gating = GatingMode::ungated;
        if (k == 8) c.config.explicit_loss_weight = 0.3;
        CHECK(toy::gradient_error(c) < 1e-4);
    }
}

TEST_CASE("named tensors") {
    Rng rng(3);
    auto c = toy::make_case(rng);
    const auto t = c.params.tensors();
    CHECK(t[0].name == "W_v");
    CHECK(t[7].name == "b_vi");
    CHECK(t[8].name == "rgcn.0.self");
    CHECK(t[9].name == "rgcn.0.r0.fwd");
    CHECK(t[10].name == "rgcn.0.r0.inv");
    std::size_t n = 0;
    for (const auto& x : t) n += x.values.size();
    CHECK(c.params.parameter_count() == n);
}

TEST_CASE("fit: lr = 0 leaves parameters unchanged and runs are bit-reproducible") {
    Rng rng(6);
    std::vector<FusionExample> data;
    auto base = toy::make_case(rng);
    for (int k = 0; k < 10; ++k) {
        auto c = toy::make_case(rng);
        c.example.graph = base.example.graph;
        data.push_back(c.example);
    }
    TrainConfig tc{3, 0.0, 0.9, 4, 1};
    const auto frozen = fit(data, base.params, base.config, base.stats, tc);
    CHECK(frozen.params == base.params);
    tc.lr = 0.05;
    const auto a = fit(data, base.params, base.config, base.stats, tc);
    const auto b = fit(data, base.params, base.config, base.stats, tc);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.params == b.params);
    CHECK(a.loss_trace.size() == 3);
    CHECK_THROWS_AS(fit(std::vector<FusionExample>{}, base.params, base.config, base.stats, tc), Error);
    tc.batch_size = 0;
    CHECK_THROWS_AS(fit(data, base.params, base.config, base.stats, tc), Error);
}

TEST_CASE("fit aborts on a non-finite loss") {
    Rng rng(6);
    auto c = toy::make_case(rng);
    c.example.implicit[0] = std::numeric_limits<double>::infinity();
    std::vector<FusionExample> data{c.example};
    TrainConfig tc{2, 0.1, 0.9, 1, 1};
    CHECK_THROWS_AS(fit(data, c.params, c.config, c.stats, tc), Error);
}
