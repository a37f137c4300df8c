#include <Eigen/Dense>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "typocirc/analysis.hpp"

using namespace typocirc;

namespace {

// n points on a random k-dimensional subspace of R^d, plus an offset.
Tensor planted_rank(int n, int d, int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd basis(k, d), coef(n, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j) basis(i, j) = g(rng);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) coef(i, j) = g(rng) * (1.0 + j);
    Eigen::MatrixXd x = coef * basis;
    Tensor t({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) t.at(i, j) = static_cast<float>(x(i, j) + 3.0);
    return t;
}

double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1.0;
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return wins / pairs;
}

}  // namespace

TEST_CASE("intrinsic dimension recovers planted rank") {
    for (int k : {1, 3, 5}) {
        auto r = intrinsic_dimensionality(planted_rank(200, 16, k, static_cast<std::uint64_t>(k)), 0.999999);
        CHECK(r.id == k);
        CHECK(!r.degenerate);
        CHECK(r.spectrum.size() == 16);
    }
}

TEST_CASE("isotropic data needs almost every direction") {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Tensor x({5000, 10});
    for (auto& v : x.data) v = g(rng);
    CHECK(intrinsic_dimensionality(x, 0.95).id == 10);
}

TEST_CASE("threshold one counts every non-zero direction") {
    CHECK(intrinsic_dimensionality(planted_rank(100, 8, 3, 7), 1.0).id == 3);
}

TEST_CASE("intrinsic dimension is rotation invariant") {
    auto x = planted_rank(150, 6, 4, 11);
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd a(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) a(i, j) = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    Tensor y({150, 6});
    for (int i = 0; i < 150; ++i)
        for (int j = 0; j < 6; ++j) {
            double s = 0.0;
            for (int u = 0; u < 6; ++u) s += x.at(i, u) * q(u, j);
            y.at(i, j) = static_cast<float>(s);
        }
    for (double t : {0.5, 0.8, 0.95, 0.99})
        CHECK(intrinsic_dimensionality(x, t).id == intrinsic_dimensionality(y, t).id);
}

TEST_CASE("zero variance is flagged degenerate") {
    auto r = intrinsic_dimensionality(Tensor({10, 4}, 1.5f));
    CHECK(r.degenerate);
    CHECK(r.id == 0);
    CHECK_THROWS_AS(intrinsic_dimensionality(Tensor({10, 4}), 0.0), Error);
}

TEST_CASE("roc auc equals pair counting") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 40);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = static_cast<double>(rng() % 7);  // plenty of ties
            y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        CHECK(std::abs(roc_auc(s, y) - auc_oracle(s, y)) < 1e-9);
    }
}

TEST_CASE("roc auc edge cases") {
    std::vector<double> s{0.1, 0.2, 0.8, 0.9};
    CHECK(roc_auc(s, std::vector<int>{0, 0, 1, 1}) == 1.0);
    CHECK(roc_auc(s, std::vector<int>{1, 1, 0, 0}) == 0.0);
    CHECK(roc_auc(std::vector<double>(6, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0}) == 0.5);
    // flipping labels mirrors the score
    std::vector<int> y{0, 1, 0, 1};
    std::vector<int> flipped{1, 0, 1, 0};
    CHECK(roc_auc(s, y) + roc_auc(s, flipped) == doctest::Approx(1.0));
    CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1, 1, 1, 1}), Error);
    CHECK_THROWS_AS(roc_auc(s, std::vector<int>{0, 1}), Error);
    CHECK_THROWS_AS(roc_auc(s, std::vector<int>{0, 2, 0, 1}), Error);
}

TEST_CASE("summary statistics") {
    auto s = summarize(std::vector<double>{3.0, 1.0, 2.0, 10.0});
    CHECK(s.n == 4);
    CHECK(s.mean == 4.0);
    CHECK(s.median == 2.5);
    CHECK(s.min == 1.0);
    CHECK(s.max == 10.0);
    CHECK(to_json(s)["median"] == 2.5);
    CHECK(summarize(std::vector<double>{}).n == 0);
}

TEST_CASE("planted sink head separates clean and typographic sets") {
    testutil::PlantedFixture f(30);
    auto st = sink_norm_stats(f.model.weights, f.planted(), f.clean, f.typo);
    REQUIRE(st.clean.size() == 30);
    std::vector<double> scores = st.clean;
    scores.insert(scores.end(), st.typo.begin(), st.typo.end());
    std::vector<int> y(30, 0);
    y.resize(60, 1);
    CHECK(roc_auc(scores, y) > 0.95);
    CHECK(summarize(st.clean).max < summarize(st.typo).min);
    for (double v : scores) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(spatial_attention_norms(f.model.weights, {9, 0}, f.clean), Error);
}

TEST_CASE("id curve covers every capture point") {
    testutil::PlantedFixture f(40);
    auto curve = id_curve(f.model.weights, f.typo);
    REQUIRE(curve.size() == 8);
    CHECK(curve.front().id.degenerate);  // the cls row entering block 0 is constant
    for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k].id.id >= 1);
}

TEST_CASE("linear probe auc on the planted model") {
    testutil::PlantedFixture f(60);
    ProbeConfig pc;
    pc.epochs = 200;
    CHECK(linear_probe_auc(f.model.weights, f.clean, f.typo, pc) > 0.95);
}
