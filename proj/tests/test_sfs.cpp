// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <doctest.h>

#include "lor2c/sfs.hpp"
#include "oracles.hpp"

using namespace lor2c;

namespace {

SfsModuleEntry entry(int id, int span_start, double sfs_value, int span_len = 1,
                     AdapterKind kind = AdapterKind::Lor2c) {
    SfsModuleEntry e;
    e.module_id = id;
    e.kind = kind;
    e.span_start = span_start;
    e.span_len = span_len;
    e.sfs = sfs_value;
    return e;
}

}  // namespace

TEST_SUITE("sfs") {

TEST_CASE("diagonal construction has the prescribed spectrum") {
    const int d = 6, r = 4;
    std::vector<double> b(static_cast<std::size_t>(d) * r, 0.0);
    std::vector<double> a(static_cast<std::size_t>(r) * d, 0.0);
    const double diag[] = {4, 3, 2, 1};
    for (int i = 0; i < r; ++i) {
        b[static_cast<std::size_t>(i) * r + i] = diag[i];  // B: scaled identity columns
        a[static_cast<std::size_t>(i) * d + i] = 1.0;      // A: identity rows
    }
    const auto sv = singular_values_lowrank(Tensor::from_data({r, d}, a),
                                            Tensor::from_data({d, r}, b));
    REQUIRE(sv.size() == 4);
    for (int i = 0; i < r; ++i) CHECK(sv[static_cast<std::size_t>(i)] == doctest::Approx(diag[i]).epsilon(1e-12));
}

TEST_CASE("zero B gives an all-zero spectrum") {
    const auto sv = singular_values_lowrank(Tensor::full({3, 8}, 0.7), Tensor::zeros({8, 3}));
    REQUIRE(sv.size() == 3);
    for (double v : sv) CHECK(v == 0.0);
}

TEST_CASE("low-rank singular values match the dense SVD oracle") {
    Rng rng(61);
    const int d = 32, r = 8;
    Tensor a = Tensor::randn({r, d}, rng, 0.5);
    Tensor b = Tensor::randn({d, r}, rng, 0.5);

    const auto fast = singular_values_lowrank(a, b);
    const auto dense = oracle::dense_product_ba({b.data().begin(), b.data().end()},
                                                {a.data().begin(), a.data().end()}, d, r);
    const auto full = oracle::dense_svd_singular_values(dense, d, d);
    REQUIRE(fast.size() == static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        CHECK(fast[static_cast<std::size_t>(i)] ==
              doctest::Approx(full[static_cast<std::size_t>(i)]).epsilon(1e-8));
    for (std::size_t i = r; i < full.size(); ++i) CHECK(full[i] < 1e-10);
}

TEST_CASE("non-finite factors are rejected") {
    Tensor a = Tensor::full({2, 4}, 1.0);
    Tensor b = Tensor::full({4, 2}, 1.0);
    a.data()[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(singular_values_lowrank(a, b), NumericError);
}

TEST_CASE("rank above width violates the contract") {
    CHECK_THROWS_AS(singular_values_lowrank(Tensor::zeros({5, 3}), Tensor::zeros({3, 5})),
                    ContractError);
}

TEST_CASE("sfs worked example: [4,3,2,1] with k=1 is exactly 0.6") {
    CHECK(sfs({4, 3, 2, 1}, 1) == 0.6);
}

TEST_CASE("sfs with k = n is zero") {
    CHECK(sfs({4, 3, 2, 1}, 4) == 0.0);
    CHECK(sfs({1.5}, 1) == 0.0);
}

TEST_CASE("sfs of a uniform spectrum is 1 - k/n") {
    const std::vector<double> uniform(10, 2.5);
    for (int k = 1; k <= 10; ++k)
        CHECK(sfs(uniform, k) == doctest::Approx(1.0 - k / 10.0).epsilon(1e-12));
}

TEST_CASE("sfs of an all-zero spectrum is zero") {
    CHECK(sfs({0, 0, 0}, 1) == 0.0);
}

TEST_CASE("sfs contract errors") {
    CHECK_THROWS_AS(sfs({1, 2, 3}, 1), ContractError);   // unsorted
    CHECK_THROWS_AS(sfs({3, 2, -1}, 1), ContractError);  // negative
    CHECK_THROWS_AS(sfs({3, 2, 1}, 0), ContractError);   // k < 1
    CHECK_THROWS_AS(sfs({3, 2, 1}, 4), ContractError);   // k > n
    CHECK_THROWS_AS(sfs({}, 1), ContractError);
}

TEST_CASE("sfs properties: range, k-monotonicity, scale invariance") {
    Rng rng(67);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(20));
        std::vector<double> lambda(static_cast<std::size_t>(n));
        for (double& v : lambda) v = std::abs(rng.normal(0.0, 2.0));
        std::sort(lambda.begin(), lambda.end(), std::greater<>());

        const double c = 0.01 + 10.0 * rng.uniform();
        std::vector<double> scaled = lambda;
        for (double& v : scaled) v *= c;

        double prev = 1.0;
        for (int k = 1; k <= n; ++k) {
            const double v = sfs(lambda, k);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            CHECK(v <= prev + 1e-12);
            CHECK(std::abs(v - sfs(scaled, k)) < 1e-12);
            prev = v;
        }
    }
}

TEST_CASE("pair scores over adjacent modules") {
    const std::vector<SfsModuleEntry> modules = {entry(0, 0, 0.2), entry(1, 1, 0.5),
                                                 entry(2, 2, 0.1)};
    const auto scores = pair_scores(modules);
    REQUIRE(scores.size() == 2);
    CHECK(scores[0].left_id == 0);
    CHECK(scores[0].right_id == 1);
    CHECK(scores[0].score == doctest::Approx(0.7));
    CHECK(scores[1].left_id == 1);
    CHECK(scores[1].right_id == 2);
    CHECK(scores[1].score == doctest::Approx(0.6));
}

TEST_CASE("a single module yields no pairs") {
    CHECK(pair_scores({entry(0, 0, 0.4)}).empty());
}

TEST_CASE("excluded layers mask pairs") {
    const std::vector<SfsModuleEntry> modules = {entry(0, 0, 0.2), entry(1, 1, 0.5),
                                                 entry(2, 2, 0.1)};
    const auto scores = pair_scores(modules, {2});
    REQUIRE(scores.size() == 1);
    CHECK(scores[0].left_id == 0);
    CHECK(scores[0].right_id == 1);
}

TEST_CASE("gaps between spans break adjacency") {
    const std::vector<SfsModuleEntry> modules = {entry(0, 0, 0.2), entry(1, 2, 0.5)};
    CHECK(pair_scores(modules).empty());
}

TEST_CASE("non-lor2c modules never pair") {
    const std::vector<SfsModuleEntry> modules = {
        entry(0, 0, 0.2), entry(1, 1, 0.5, 1, AdapterKind::LoraQv), entry(2, 2, 0.1)};
    CHECK(pair_scores(modules).empty());
}

TEST_CASE("select_merge_pair picks the minimum and breaks ties low") {
    const auto pick = select_merge_pair({{0, 1, 0.7}, {1, 2, 0.6}});
    REQUIRE(pick.has_value());
    CHECK(pick->left_id == 1);
    CHECK(pick->right_id == 2);

    const auto tie = select_merge_pair({{0, 1, 0.5}, {1, 2, 0.5}});
    REQUIRE(tie.has_value());
    CHECK(tie->left_id == 0);

    CHECK_FALSE(select_merge_pair({}).has_value());
}

TEST_CASE("select_inject_target follows the policy with low-layer ties") {
    SfsReport report;
    report.modules = {entry(0, 0, 0.2), entry(1, 1, 0.5), entry(2, 2, 0.1)};

    auto lowest = select_inject_target(report, {}, InjectPolicy::LowestSfs);
    REQUIRE(lowest.has_value());
    CHECK(*lowest == 2);

    auto highest = select_inject_target(report, {}, InjectPolicy::HighestSfs);
    REQUIRE(highest.has_value());
    CHECK(*highest == 1);

    CHECK_FALSE(select_inject_target(report, {0, 1, 2}).has_value());

    // multi-layer modules are not injectable
    report.modules = {entry(0, 0, 0.2, 2), entry(1, 2, 0.5)};
    auto only_single = select_inject_target(report, {});
    REQUIRE(only_single.has_value());
    CHECK(*only_single == 1);

    // ties resolve toward the lower layer
    report.modules = {entry(3, 0, 0.3), entry(4, 1, 0.3)};
    CHECK(*select_inject_target(report, {}) == 3);
}

TEST_CASE("merge selection is invariant under uniform spectrum rescaling") {
    Rng rng(71);
    for (int trial = 0; trial < 50; ++trial) {
        const int n_modules = 3 + static_cast<int>(rng.uniform_int(5));
        const int r = 4;
        std::vector<SfsModuleEntry> plain, rescaled;
        const double c = 0.05 + 20.0 * rng.uniform();
        for (int m = 0; m < n_modules; ++m) {
            std::vector<double> lambda(static_cast<std::size_t>(r));
            for (double& v : lambda) v = std::abs(rng.normal(0.0, 1.0));
            std::sort(lambda.begin(), lambda.end(), std::greater<>());
            std::vector<double> scaled = lambda;
            for (double& v : scaled) v *= c;

            SfsModuleEntry e = entry(m, m, sfs(lambda, 2));
            e.singular_values = lambda;
            plain.push_back(e);
            SfsModuleEntry e2 = entry(m, m, sfs(scaled, 2));
            e2.singular_values = scaled;
            rescaled.push_back(e2);
        }
        const auto p1 = select_merge_pair(pair_scores(plain));
        const auto p2 = select_merge_pair(pair_scores(rescaled));
        REQUIRE(p1.has_value());
        REQUIRE(p2.has_value());
        CHECK(p1->left_id == p2->left_id);
        CHECK(p1->right_id == p2->right_id);
    }
}

TEST_CASE("feature-mode spectra match the dense oracle on stacked outputs") {
    Rng rng(73);
    const int n = 24, d = 10, r = 3;
    Tensor h = Tensor::randn({n, d}, rng, 1.0);
    Tensor a = Tensor::randn({r, d}, rng, 0.4);
    Tensor b = Tensor::randn({d, r}, rng, 0.4);

    Tensor hb = matmul(h, b);
    const auto fast = singular_values_of_product(hb, a);

    const auto hb_dense = oracle::matmul_reference({h.data().begin(), h.data().end()},
                                                   {b.data().begin(), b.data().end()}, n, d, r);
    const auto out_dense = oracle::matmul_reference(hb_dense, {a.data().begin(), a.data().end()},
                                                    n, r, d);
    const auto full = oracle::dense_svd_singular_values(out_dense, n, d);
    for (int i = 0; i < r; ++i)
        CHECK(fast[static_cast<std::size_t>(i)] ==
              doctest::Approx(full[static_cast<std::size_t>(i)]).epsilon(1e-8));
}

TEST_CASE("sv trajectory of one epoch and one module is that spectrum's prefix") {
    const std::vector<std::vector<std::vector<double>>> history = {{{5, 4, 3, 2}}};
    const auto points = sv_trajectory(history, 3);
    REQUIRE(points.size() == 3);
    CHECK(points[0].epoch == 0);
    CHECK(points[0].index == 1);
    CHECK(points[0].mean == 5.0);
    CHECK(points[2].mean == 3.0);
}

TEST_CASE("sv trajectory of two identical modules equals either spectrum") {
    const std::vector<std::vector<std::vector<double>>> history = {{{5, 4}, {5, 4}}};
    const auto points = sv_trajectory(history, 2);
    REQUIRE(points.size() == 2);
    CHECK(points[0].mean == 5.0);
    CHECK(points[1].mean == 4.0);
}

TEST_CASE("sv trajectory matches an independent scalar averaging pass") {
    Rng rng(79);
    std::vector<std::vector<std::vector<double>>> history;
    const int epochs = 5, modules = 4, r = 6;
    for (int e = 0; e < epochs; ++e) {
        std::vector<std::vector<double>> row;
        for (int m = 0; m < modules; ++m) {
            std::vector<double> sv(static_cast<std::size_t>(r));
            for (double& v : sv) v = std::abs(rng.normal(0.0, 1.0));
            std::sort(sv.begin(), sv.end(), std::greater<>());
            row.push_back(sv);
        }
        history.push_back(row);
    }
    const int top = 4;
    const auto points = sv_trajectory(history, top);
    REQUIRE(points.size() == static_cast<std::size_t>(epochs * top));
    std::size_t at = 0;
    for (int e = 0; e < epochs; ++e)
        for (int idx = 0; idx < top; ++idx) {
            double acc = 0.0;
            for (int m = 0; m < modules; ++m) acc += history[e][m][static_cast<std::size_t>(idx)];
            CHECK(points[at].mean == acc / modules);
            CHECK(points[at].epoch == e);
            CHECK(points[at].index == idx + 1);
            ++at;
        }
}

TEST_CASE("ragged trajectory history is a contract error") {
    CHECK_THROWS_AS(sv_trajectory({{{1, 2}, {1, 2, 3}}}, 2), ContractError);
    CHECK_THROWS_AS(sv_trajectory({}, 2), ContractError);
}

TEST_CASE("build_sfs_report covers lor2c modules with pair scores") {
    ModelLayout layout = ModelLayout::lor2c_all_layers(3, 2);
    AdapterParams params = AdapterParams::init(layout, 6, 5);
    Rng rng(83);
    for (const AdapterModule& m : layout.modules())
        for (double& v : params.lor2c(m.id).b.data()) v = rng.normal(0.0, 0.3);

    const SfsReport report = build_sfs_report(4, layout, params, 1);
    CHECK(report.epoch == 4);
    REQUIRE(report.modules.size() == 3);
    CHECK(report.pair_scores.size() == 2);
    for (const SfsModuleEntry& m : report.modules) {
        CHECK(m.singular_values.size() == 2);
        CHECK(m.singular_values[0] >= m.singular_values[1]);
        CHECK(m.sfs >= 0.0);
        CHECK(m.sfs <= 1.0);
    }
}

}  // TEST_SUITE
