#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "typocirc/vit.hpp"

using namespace typocirc;

namespace {

bool same_floats(std::span<const float> a, std::span<const float> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool traces_bitwise_equal(const RunTrace& a, const RunTrace& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        const auto &x = a.layers[l], &y = b.layers[l];
        if (!bitwise_equal(x.attention, y.attention) || !bitwise_equal(x.cls_attention, y.cls_attention) ||
            !bitwise_equal(x.cls_contrib, y.cls_contrib) || !bitwise_equal(x.residual_post_attn, y.residual_post_attn) ||
            !bitwise_equal(x.residual_post_block, y.residual_post_block) ||
            !same_floats(x.cls_post_attn, y.cls_post_attn) || !same_floats(x.cls_post_block, y.cls_post_block))
            return false;
    }
    return bitwise_equal(a.embed_in, b.embed_in) && same_floats(a.cls_embed, b.cls_embed) &&
           same_floats(a.final_ln, b.final_ln) && same_floats(a.final_cls_embedding, b.final_cls_embedding);
}

const std::vector<float>& cls_entering(const RunTrace& t, int l) {
    return l == 0 ? t.cls_embed : t.layers[static_cast<std::size_t>(l - 1)].cls_post_block;
}

}  // namespace

TEST_CASE("patchify flattens each patch as (channel, row, col)") {
    auto cfg = testutil::tiny_config(1, 1, 4, 2, 2, 2);
    Tensor img({3, 4, 4});
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i);
    auto p = patchify(cfg, img);
    REQUIRE(p.shape == std::vector<std::int64_t>{4, 12});
    // token 1 is grid (row 0, col 1): pixels x in {2, 3}, y in {0, 1}
    std::vector<float> want;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 2; ++y)
            for (int x = 2; x < 4; ++x) want.push_back(static_cast<float>(c * 16 + y * 4 + x));
    CHECK(std::vector<float>(p.row(1).begin(), p.row(1).end()) == want);
    CHECK_THROWS_AS(patchify(cfg, Tensor({3, 4, 5})), Error);
}

TEST_CASE("hand-computed one-layer, one-head, two-token forward") {
    auto cfg = testutil::tiny_config(1, 1, 2, 1, 1, 2);
    auto w = VitWeights::zeros(cfg);
    w.cls_token.data = {1.0f, -1.0f};
    w.patch_b.data = {-1.0f, 1.0f};
    auto& b = w.blocks[0];
    b.q_b.data = {1.0f, 0.0f};
    b.k_w.data = {1, 0, 0, 1};
    b.v_w.data = {1, 0, 0, 1};
    b.out_w.data = {1, 0, 0, 1};
    w.proj.data = {1, 0, 0, 1};

    const double s = 1.0 / std::sqrt(1.0 + 1e-5);  // LN of (1, -1)
    const double l0 = s / std::sqrt(2.0), l1 = -s / std::sqrt(2.0);
    const double a0 = std::exp(l0) / (std::exp(l0) + std::exp(l1)), a1 = 1.0 - a0;
    const double c = 1.0 + (a0 - a1) * s;
    const double f = c / std::sqrt(c * c + 1e-5);

    auto t = forward(w, Tensor({3, 1, 1}), {}, CaptureFlags::all());
    CHECK(t.layers[0].cls_attention.at(0, 0) == doctest::Approx(a0).epsilon(1e-6));
    CHECK(t.layers[0].cls_attention.at(0, 1) == doctest::Approx(a1).epsilon(1e-6));
    CHECK(t.layers[0].cls_post_attn[0] == doctest::Approx(c).epsilon(1e-6));
    CHECK(t.layers[0].cls_post_attn[1] == doctest::Approx(-c).epsilon(1e-6));
    CHECK(t.final_cls_embedding[0] == doctest::Approx(f).epsilon(1e-6));
    CHECK(t.final_cls_embedding[1] == doctest::Approx(-f).epsilon(1e-6));
    // spatial query row: token 1 sees the same query, so its pattern matches the cls row
    CHECK(t.layers[0].attention.at(1, 0) == doctest::Approx(a0).epsilon(1e-6));
}

TEST_CASE("empty intervention and repeated runs are bitwise identical") {
    auto cfg = testutil::tiny_config(2, 2, 8, 2, 3, 5);
    auto w = gen_random_model(cfg, 4);
    auto img = testutil::random_image(cfg, 9);
    auto a = forward(w, img, {}, CaptureFlags::all());
    InterventionSpec none;
    none.alpha.clear();
    auto b = forward(w, img, none, CaptureFlags::all());
    CHECK(traces_bitwise_equal(a, b));
    CHECK(traces_bitwise_equal(a, forward(w, img, {}, CaptureFlags::all())));
}

TEST_CASE("ablating every head of a layer leaves only the output bias on the cls row") {
    auto cfg = testutil::tiny_config(3, 2, 8, 2, 3, 5);
    auto w = gen_random_model(cfg, 5);
    auto img = testutil::random_image(cfg, 2);
    auto base = forward(w, img, {}, CaptureFlags::all());
    for (int l = 0; l < cfg.layers; ++l) {
        InterventionSpec iv;
        for (int h = 0; h < cfg.heads; ++h) iv.ablate.insert({l, h});
        auto t = forward(w, img, iv, CaptureFlags::all());
        const auto& in = cls_entering(t, l);
        const auto& bias = w.blocks[static_cast<std::size_t>(l)].out_b.data;
        for (int j = 0; j < cfg.width; ++j)
            CHECK(t.layers[static_cast<std::size_t>(l)].cls_post_attn[static_cast<std::size_t>(j)] ==
                  in[static_cast<std::size_t>(j)] + bias[static_cast<std::size_t>(j)]);
        // spatial rows of the ablated layer do not see the ablation
        const auto& ra = t.layers[static_cast<std::size_t>(l)].residual_post_attn;
        const auto& rb = base.layers[static_cast<std::size_t>(l)].residual_post_attn;
        for (std::int64_t r = 1; r < ra.rows(); ++r) CHECK(same_floats(ra.row(r), rb.row(r)));
        // and earlier layers are untouched entirely
        for (int k = 0; k < l; ++k)
            CHECK(bitwise_equal(t.layers[static_cast<std::size_t>(k)].residual_post_block,
                                base.layers[static_cast<std::size_t>(k)].residual_post_block));
    }
}

TEST_CASE("per-head cls contributions add up to the attention update") {
    auto cfg = testutil::tiny_config(2, 4, 16, 2, 3, 6);
    auto w = gen_random_model(cfg, 6);
    auto t = forward(w, testutil::random_image(cfg, 3), {}, CaptureFlags::all());
    for (int l = 0; l < cfg.layers; ++l) {
        const auto& lt = t.layers[static_cast<std::size_t>(l)];
        const auto& in = cls_entering(t, l);
        for (int j = 0; j < cfg.width; ++j) {
            double s = w.blocks[static_cast<std::size_t>(l)].out_b.data[static_cast<std::size_t>(j)];
            for (int h = 0; h < cfg.heads; ++h) s += lt.cls_contrib.at(h, j);
            CHECK(lt.cls_post_attn[static_cast<std::size_t>(j)] - in[static_cast<std::size_t>(j)] ==
                  doctest::Approx(s).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("ablating one head removes exactly its cls contribution") {
    auto cfg = testutil::tiny_config(1, 4, 16, 2, 3, 6);
    auto w = gen_random_model(cfg, 7);
    auto img = testutil::random_image(cfg, 4);
    auto base = forward(w, img, {}, CaptureFlags::all());
    InterventionSpec iv;
    iv.ablate.insert({0, 2});
    auto t = forward(w, img, iv, CaptureFlags::all());
    for (int j = 0; j < cfg.width; ++j)
        CHECK(t.layers[0].cls_post_attn[static_cast<std::size_t>(j)] ==
              doctest::Approx(base.layers[0].cls_post_attn[static_cast<std::size_t>(j)] - base.layers[0].cls_contrib.at(2, j))
                  .epsilon(1e-5)
                  .scale(1.0));
    // the attention pattern itself is untouched
    CHECK(bitwise_equal(t.layers[0].attention, base.layers[0].attention));
}

TEST_CASE("alpha pattern") {
    std::vector<float> row{0.2f, 0.5f, 0.3f, 0.0f};
    for (int i = 0; i <= 10; ++i) {
        const double a = i / 10.0;
        auto p = alpha_pattern(row, a);
        CHECK(p[0] == doctest::Approx(a).epsilon(1e-7));
        CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
        // spatial shape is preserved
        CHECK(p[1] * 0.3 == doctest::Approx(p[2] * 0.5).epsilon(1e-6));
    }
    auto u = alpha_pattern(std::vector<float>{1.0f, 0.0f, 0.0f}, 0.5);
    CHECK(u[1] == doctest::Approx(0.25));
    CHECK(u[2] == doctest::Approx(0.25));
    CHECK_THROWS_AS(alpha_pattern(row, 1.5), Error);
    CHECK_THROWS_AS(alpha_pattern(row, -0.1), Error);
}

TEST_CASE("alpha override at the natural value reproduces the baseline") {
    auto cfg = testutil::tiny_config(2, 2, 8, 2, 3, 5);
    auto w = gen_random_model(cfg, 8);
    auto img = testutil::random_image(cfg, 5);
    auto base = forward(w, img, {}, CaptureFlags::all());
    InterventionSpec iv;
    iv.alpha.push_back({{1, 1}, base.layers[1].cls_attention.at(1, 0)});
    auto t = forward(w, img, iv, CaptureFlags::all());
    for (std::size_t j = 0; j < t.final_cls_embedding.size(); ++j)
        CHECK(t.final_cls_embedding[j] == doctest::Approx(base.final_cls_embedding[j]).epsilon(1e-5).scale(1.0));
}

TEST_CASE("alpha override sets the recorded cls attention") {
    auto cfg = testutil::tiny_config(1, 2, 8, 2, 3, 5);
    auto w = gen_random_model(cfg, 9);
    InterventionSpec iv;
    iv.alpha.push_back({{0, 1}, 0.7});
    auto t = forward(w, testutil::random_image(cfg, 6), iv, CaptureFlags::all());
    auto sp = spatial_pattern(t, {0, 1});
    CHECK(sp.a_cls == doctest::Approx(0.7).epsilon(1e-7));
    CHECK(std::accumulate(sp.a_star.begin(), sp.a_star.end(), 0.0) == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("zero query/key model attends uniformly") {
    auto cfg = testutil::tiny_config(2, 2, 8, 2, 4, 5);
    auto w = gen_uniform_model(cfg, 1);
    auto t = forward(w, testutil::random_image(cfg, 7), {}, {.cls_attention = true});
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h) {
            auto sp = spatial_pattern(t, {l, h});
            CHECK(sp.a_cls == doctest::Approx(1.0 / 17).epsilon(1e-7));
            REQUIRE(sp.a_star.size() == 16);
            for (float v : sp.a_star) CHECK(v == doctest::Approx(1.0 / 17).epsilon(1e-7));
        }
}

TEST_CASE("spatial pattern splits the cls row and reassembles to one") {
    auto cfg = testutil::tiny_config(2, 2, 8, 2, 3, 5);
    auto w = gen_random_model(cfg, 10);
    auto full = forward(w, testutil::random_image(cfg, 8), {}, {.attention = true});
    auto cls = forward(w, testutil::random_image(cfg, 8), {}, {.cls_attention = true});
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h) {
            auto a = spatial_pattern(full, {l, h});
            auto b = spatial_pattern(cls, {l, h});
            CHECK(a.a_cls == b.a_cls);
            CHECK(a.a_star == b.a_star);
            CHECK(a.a_cls + std::accumulate(a.a_star.begin(), a.a_star.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
        }
    auto bare = forward(w, testutil::random_image(cfg, 8));
    CHECK_THROWS_AS(spatial_pattern(bare, {0, 0}), Error);
    CHECK_THROWS_AS(spatial_pattern(cls, {2, 0}), Error);
}

TEST_CASE("intervention validation") {
    auto cfg = testutil::tiny_config(2, 2, 8, 2, 3, 5);
    auto w = gen_random_model(cfg, 11);
    auto img = testutil::random_image(cfg, 9);
    InterventionSpec bad;
    bad.ablate.insert({5, 0});
    CHECK_THROWS_AS(forward(w, img, bad), Error);
    InterventionSpec bad_alpha;
    bad_alpha.alpha.push_back({{0, 0}, 2.0});
    CHECK_THROWS_AS(forward(w, img, bad_alpha), Error);
    CHECK_THROWS_AS(forward(w, Tensor({3, 5, 6})), Error);
}
