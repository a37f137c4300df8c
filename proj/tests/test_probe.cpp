#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "typocirc/probe.hpp"

using namespace typocirc;

namespace {

struct Toy {
    Tensor x;
    std::vector<int> y;
};

// Gaussian blobs around well separated class centres.
Toy blobs(int n, int d, int classes, double spread, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Toy t{Tensor({n, d}), {}};
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        t.y.push_back(c);
        for (int j = 0; j < d; ++j)
            t.x.at(i, j) = static_cast<float>((j == c % d ? 10.0 : 0.0) + spread * g(rng));
    }
    return t;
}

ProbeSplit first_80(std::size_t n) {
    ProbeSplit s;
    for (std::size_t i = 0; i < n; ++i) (i % 5 == 4 ? s.eval : s.train).push_back(i);
    return s;
}

std::vector<int> pick(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    for (auto i : idx) out.push_back(y[i]);
    return out;
}

}  // namespace

TEST_CASE("capture point names round trip") {
    ModelConfig cfg = testutil::tiny_config(3, 2, 8, 2, 3, 4);
    auto pts = all_capture_points(cfg);
    REQUIRE(pts.size() == 8);
    CHECK(pts.front().str() == "embed");
    CHECK(pts[1].str() == "post_attn.0");
    CHECK(pts[2].str() == "post_block.0");
    CHECK(pts.back().str() == "final");
    for (const auto& p : pts) CHECK(CapturePoint::parse(p.str()) == p);
    CHECK_THROWS_AS(CapturePoint::parse("post_attn."), Error);
    CHECK_THROWS_AS(CapturePoint::parse("post_block.-1"), Error);
    CHECK_THROWS_AS(CapturePoint::parse("middle"), Error);
    CHECK_THROWS_AS(CapturePoint::post_attn(3).validate(cfg), Error);
    CHECK(parse_probe_target("typo_label") == ProbeTarget::TypoLabel);
    CHECK(to_string(ProbeTarget::ImageLabel) == "image_label");
    CHECK_THROWS_AS(parse_probe_target("label"), Error);
}

TEST_CASE("analytic gradient matches central differences") {
    auto t = blobs(12, 4, 3, 3.0, 1);
    const int C = 3, d = 4;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 0.5);
    std::vector<double> W(C * d), b(C), gW(C * d), gb(C);
    for (auto& v : W) v = g(rng);
    for (auto& v : b) v = g(rng);
    const double l2 = 0.1, h = 1e-5;
    probe_gradient(W, b, t.x, t.y, C, l2, gW, gb);
    double worst = 0.0;
    for (std::size_t k = 0; k < W.size(); ++k) {
        auto Wp = W, Wm = W;
        Wp[k] += h;
        Wm[k] -= h;
        const double fd = (probe_loss(Wp, b, t.x, t.y, C, l2) - probe_loss(Wm, b, t.x, t.y, C, l2)) / (2 * h);
        worst = std::max(worst, std::abs(fd - gW[k]));
    }
    for (std::size_t k = 0; k < b.size(); ++k) {
        auto bp = b, bm = b;
        bp[k] += h;
        bm[k] -= h;
        const double fd = (probe_loss(W, bp, t.x, t.y, C, l2) - probe_loss(W, bm, t.x, t.y, C, l2)) / (2 * h);
        worst = std::max(worst, std::abs(fd - gb[k]));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("loss at zero weights is log C") {
    auto t = blobs(10, 3, 5, 1.0, 3);
    std::vector<double> W(15, 0.0), b(5, 0.0);
    CHECK(probe_loss(W, b, t.x, t.y, 5, 1.0) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("separable data is probed perfectly") {
    auto t = blobs(200, 4, 4, 0.5, 4);
    auto s = first_80(200);
    auto p = train_probe(gather_rows(t.x, s.train), pick(t.y, s.train), 4);
    CHECK(probe_accuracy(p, gather_rows(t.x, s.eval), pick(t.y, s.eval)) == 1.0);
    for (std::size_t i = 1; i < p.loss_history.size(); ++i) CHECK(p.loss_history[i] <= p.loss_history[i - 1]);
}

TEST_CASE("shuffled labels stay near chance") {
    auto t = blobs(2000, 5, 4, 1.0, 5);
    std::mt19937_64 rng(6);
    std::shuffle(t.y.begin(), t.y.end(), rng);
    auto s = first_80(2000);
    auto p = train_probe(gather_rows(t.x, s.train), pick(t.y, s.train), 4);
    const double acc = probe_accuracy(p, gather_rows(t.x, s.eval), pick(t.y, s.eval));
    CHECK(acc >= 0.25 - 0.1);
    CHECK(acc <= 0.25 + 0.1);
}

TEST_CASE("constant features leave only the bias to learn") {
    Tensor x({10, 3});
    std::vector<int> y{0, 0, 0, 0, 0, 0, 1, 1, 1, 2};
    auto p = train_probe(x, y, 3, {.epochs = 2000, .lr = 1.0, .l2 = 0.0, .seed = 0});
    for (int v : probe_predict(p, x)) CHECK(v == 0);
    // optimum is the label entropy
    const double h = -(0.6 * std::log(0.6) + 0.3 * std::log(0.3) + 0.1 * std::log(0.1));
    CHECK(p.loss_history.back() == doctest::Approx(h).epsilon(1e-4));
}

TEST_CASE("probe accuracy recount") {
    auto t = blobs(50, 3, 3, 4.0, 7);
    auto p = train_probe(t.x, t.y, 3, {.epochs = 5});
    auto pred = probe_predict(p, t.x);
    int hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == t.y[i];
    CHECK(probe_accuracy(p, t.x, t.y) == static_cast<double>(hits) / 50.0);
}

TEST_CASE("training is deterministic per seed") {
    auto t = blobs(40, 3, 3, 2.0, 8);
    auto a = train_probe(t.x, t.y, 3), b = train_probe(t.x, t.y, 3);
    CHECK(bitwise_equal(a.W, b.W));
    CHECK(a.loss_history == b.loss_history);
    auto c = train_probe(t.x, t.y, 3, {.seed = 9});
    CHECK(!bitwise_equal(a.W, c.W));
}

TEST_CASE("probe input validation") {
    auto t = blobs(10, 3, 3, 1.0, 9);
    CHECK_THROWS_AS(train_probe(t.x, std::vector<int>(9, 0), 3), Error);
    auto bad = t.y;
    bad[0] = 3;
    CHECK_THROWS_AS(train_probe(t.x, bad, 3), Error);
    CHECK_THROWS_AS(train_probe(gather_rows(t.x, std::vector<std::size_t>{0, 1}), std::vector<int>{0, 1}, 3), Error);
    CHECK_THROWS_AS(train_probe(t.x, t.y, 3, {.lr = 0.0}), Error);
}

TEST_CASE("split is a stable 80/20 partition keyed on ids") {
    SyntheticConfig cfg;
    cfg.n = 500;
    auto ds = testutil::render_dataset(cfg, false);
    auto s = probe_split(ds.manifest, 0);
    CHECK(s.train.size() + s.eval.size() == 500);
    CHECK(std::abs(static_cast<double>(s.train.size()) / 500.0 - 0.8) < 0.06);
    std::vector<std::size_t> order(500);
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    auto r = probe_split(permuted(ds, order).manifest, 0);
    std::set<std::string> a, b;
    for (auto i : s.eval) a.insert(ds.manifest.entries[i].id);
    auto rev = permuted(ds, order);
    for (auto i : r.eval) b.insert(rev.manifest.entries[i].id);
    CHECK(a == b);
}

TEST_CASE("embed capture is the same for every image") {
    testutil::PlantedFixture f(12);
    auto e = extract_embeddings(f.model.weights, f.typo, CapturePoint::embed(), ProbeTarget::TypoLabel);
    for (std::int64_t r = 1; r < e.x.rows(); ++r)
        CHECK(std::equal(e.x.row(r).begin(), e.x.row(r).end(), e.x.row(0).begin()));
    CHECK(e.classes == 6);
    CHECK_THROWS_AS(extract_embeddings(f.model.weights, f.clean, CapturePoint::embed(), ProbeTarget::TypoLabel), Error);
}

TEST_CASE("extracted rows match the trace") {
    testutil::PlantedFixture f(4);
    const auto& w = f.model.weights;
    auto pts = all_capture_points(w.config);
    auto all = extract_all_embeddings(w, f.typo, pts);
    auto tr = forward(w, f.typo.images[2]);
    for (std::size_t k = 0; k < pts.size(); ++k) {
        auto want = cls_at(tr, pts[k]);
        CHECK(std::equal(want.begin(), want.end(), all[k].row(2).begin()));
    }
}

TEST_CASE("probe curve is invariant to dataset order") {
    testutil::PlantedFixture f(60);
    std::vector<std::size_t> order(60);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(1);
    std::shuffle(order.begin(), order.end(), rng);
    ProbeConfig pc;
    pc.epochs = 100;
    auto a = probe_curve(f.model.weights, f.typo, ProbeTarget::TypoLabel, pc);
    auto b = probe_curve(f.model.weights, permuted(f.typo, order), ProbeTarget::TypoLabel, pc);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].point == b[k].point);
        CHECK(a[k].accuracy == doctest::Approx(b[k].accuracy).epsilon(1e-12));
    }
}
