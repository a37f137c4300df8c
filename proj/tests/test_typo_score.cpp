#include <numeric>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "typocirc/typo_score.hpp"

using namespace typocirc;

namespace {

// Random images on a 14x14 grid, each with the 3-row bottom band flagged.
Dataset band_dataset(const ModelConfig& cfg, int n) {
    Dataset ds;
    ds.manifest.class_names = {"a", "b"};
    ds.manifest.typo_class_names = {"a", "b"};
    ds.manifest.tokens = cfg.tokens;
    for (int i = 0; i < n; ++i) {
        ds.manifest.entries.push_back({"u" + std::to_string(i), "", i % 2, 1 - i % 2, fixed_bottom_mask(cfg.grid(), 3)});
        ds.images.push_back(testutil::random_image(cfg, static_cast<std::uint64_t>(i)));
    }
    return ds;
}

}  // namespace

TEST_CASE("mass ratio") {
    RegionMask m{{0, 1, 1, 0}};
    CHECK(typo_mass_ratio(std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f}, m) == doctest::Approx(0.5).epsilon(1e-7));
    // normalised by the spatial mass, not by one
    CHECK(typo_mass_ratio(std::vector<float>{0.05f, 0.1f, 0.15f, 0.2f}, m) == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(typo_mass_ratio(std::vector<float>{0, 0, 0, 0}, m) == doctest::Approx(0.5));
    CHECK_THROWS_AS(typo_mass_ratio(std::vector<float>{0.5f, 0.5f}, m), Error);
}

TEST_CASE("uniform attention scores m over T on every head") {
    auto cfg = testutil::tiny_config(2, 3, 12, 1, 14, 4);
    auto w = gen_uniform_model(cfg, 5);
    auto ds = band_dataset(cfg, 3);
    auto sm = typo_attention_score(w, ds);
    REQUIRE(sm.scores.size() == 6);
    for (double s : sm.scores) CHECK(std::abs(s - 42.0 / 196.0) < 1e-6);
    CHECK(std::abs(sm.mean - 0.2143) < 1e-4);
    std::vector<RegionMask> masks(3, fixed_bottom_mask(14, 3));
    CHECK(expected_uniform_score(masks) == doctest::Approx(42.0 / 196.0).epsilon(1e-12));
}

TEST_CASE("expected uniform score averages per-sample fractions") {
    std::vector<RegionMask> masks{fixed_bottom_mask(4, 1), fixed_bottom_mask(4, 2)};
    CHECK(expected_uniform_score(masks) == doctest::Approx((4.0 / 16 + 8.0 / 16) / 2).epsilon(1e-12));
}

TEST_CASE("scores match a straight-loop oracle") {
    auto cfg = testutil::tiny_config(2, 2, 8, 2, 4, 4);
    auto w = gen_random_model(cfg, 9, 0.6f);
    SyntheticConfig sc;
    sc.n = 6;
    sc.classes = 3;
    sc.typo_classes = 3;
    sc.image_size = 8;
    sc.patch_size = 2;
    sc.region = RegionMode::Random;
    sc.region_rows = 2;
    sc.region_cols = 2;
    auto ds = testutil::render_dataset(sc, true);
    auto sm = typo_attention_score(w, ds);
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h) {
            double total = 0.0;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                auto tr = forward(w, ds.images[i], {}, {.attention = true});
                const auto& att = tr.layers[static_cast<std::size_t>(l)].attention;
                double num = 0.0, den = 0.0;
                for (int t = 0; t < 16; ++t) {
                    const double a = att.data[static_cast<std::size_t>(h * 17 * 17 + 1 + t)];
                    den += a;
                    if (ds.manifest.entries[i].mask.flags[static_cast<std::size_t>(t)]) num += a;
                }
                total += num / den;
            }
            CHECK(std::abs(sm.at({l, h}) - total / 6.0) < 1e-7);
        }
    CHECK(sm.per_layer_max[0] == std::max(sm.at({0, 0}), sm.at({0, 1})));
}

TEST_CASE("scores are invariant to dataset order") {
    auto cfg = testutil::tiny_config(2, 2, 8, 1, 14, 4);
    auto w = gen_random_model(cfg, 3, 0.8f);
    auto ds = band_dataset(cfg, 9);
    std::vector<std::size_t> order(9);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(4);
    std::shuffle(order.begin(), order.end(), rng);
    auto a = typo_attention_score(w, ds), b = typo_attention_score(w, permuted(ds, order));
    CHECK(a.scores == b.scores);
}

TEST_CASE("scores ignore the cls share of attention") {
    // Forcing alpha rescales A* uniformly, which leaves the normalised ratio unchanged.
    testutil::PlantedFixture f(12);
    InterventionSpec iv;
    iv.alpha.push_back({f.planted(), 0.5});
    auto a = typo_attention_score(f.model.weights, f.typo);
    auto b = typo_attention_score(f.model.weights, f.typo, iv);
    CHECK(b.at(f.planted()) == doctest::Approx(a.at(f.planted())).epsilon(1e-6));
}

TEST_CASE("planted head dominates the score matrix") {
    testutil::PlantedFixture f(30);
    auto sm = typo_attention_score(f.model.weights, f.typo);
    CHECK(sm.at(f.planted()) > 0.9);
    CHECK(sm.at(f.planted()) > 3 * sm.mean);
    for (int l = 0; l < sm.layers; ++l)
        for (int h = 0; h < sm.heads; ++h)
            if (HeadId{l, h} != f.planted()) CHECK(sm.at({l, h}) < sm.at(f.planted()));
}

TEST_CASE("clean samples cannot be scored") {
    testutil::PlantedFixture f(6);
    CHECK_THROWS_AS(typo_attention_score(f.model.weights, f.clean), Error);
    Dataset empty;
    CHECK_THROWS_AS(typo_attention_score(f.model.weights, empty), Error);
}

TEST_CASE("score matrix json round trip") {
    ScoreMatrix m;
    m.layers = 2;
    m.heads = 2;
    m.scores = {0.1, 0.9, 0.3, 0.2};
    m.finalize();
    CHECK(m.mean == doctest::Approx(0.375));
    CHECK(m.per_layer_max == std::vector<double>{0.9, 0.3});
    auto r = ScoreMatrix::from_json(m.to_json());
    CHECK(r.scores == m.scores);
    CHECK(r.mean == m.mean);
    auto bad = m.to_json();
    bad["scores"] = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(ScoreMatrix::from_json(bad), Error);
}
