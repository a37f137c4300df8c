#include "typocirc/probe.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "typocirc/parallel.hpp"

namespace typocirc {

std::string CapturePoint::str() const {
    switch (kind) {
        case Kind::Embed: return "embed";
        case Kind::PostAttn: return "post_attn." + std::to_string(layer);
        case Kind::PostBlock: return "post_block." + std::to_string(layer);
        case Kind::Final: return "final";
    }
    return "?";
}

CapturePoint CapturePoint::parse(std::string_view s) {
    if (s == "embed") return embed();
    if (s == "final") return final_ln();
    auto layer_of = [&](std::string_view prefix) -> int {
        const auto rest = std::string(s.substr(prefix.size()));
        std::size_t used = 0;
        int l = -1;
        try {
            l = std::stoi(rest, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != rest.size() || rest.empty() || l < 0) throw Error("invalid capture point '" + std::string(s) + "'");
        return l;
    };
    if (s.starts_with("post_attn.")) return post_attn(layer_of("post_attn."));
    if (s.starts_with("post_block.")) return post_block(layer_of("post_block."));
    throw Error("invalid capture point '" + std::string(s) + "'");
}

void CapturePoint::validate(const ModelConfig& cfg) const {
    if ((kind == Kind::PostAttn || kind == Kind::PostBlock) && (layer < 0 || layer >= cfg.layers))
        throw Error("capture point " + str() + " is invalid for a " + std::to_string(cfg.layers) + "-layer model");
}

std::vector<CapturePoint> all_capture_points(const ModelConfig& cfg) {
    std::vector<CapturePoint> pts{CapturePoint::embed()};
    for (int l = 0; l < cfg.layers; ++l) {
        pts.push_back(CapturePoint::post_attn(l));
        pts.push_back(CapturePoint::post_block(l));
    }
    pts.push_back(CapturePoint::final_ln());
    return pts;
}

std::span<const float> cls_at(const RunTrace& trace, const CapturePoint& p) {
    switch (p.kind) {
        case CapturePoint::Kind::Embed: return trace.cls_embed;
        case CapturePoint::Kind::PostAttn: return trace.layers.at(static_cast<std::size_t>(p.layer)).cls_post_attn;
        case CapturePoint::Kind::PostBlock: return trace.layers.at(static_cast<std::size_t>(p.layer)).cls_post_block;
        case CapturePoint::Kind::Final: return trace.final_ln;
    }
    throw Error("unknown capture point");
}

std::string to_string(ProbeTarget t) { return t == ProbeTarget::ImageLabel ? "image_label" : "typo_label"; }

ProbeTarget parse_probe_target(std::string_view s) {
    if (s == "image_label" || s == "image") return ProbeTarget::ImageLabel;
    if (s == "typo_label" || s == "typo") return ProbeTarget::TypoLabel;
    throw Error("unknown probe target '" + std::string(s) + "' (expected image_label or typo_label)");
}

std::vector<int> target_labels(const DatasetManifest& m, ProbeTarget target) {
    std::vector<int> y;
    y.reserve(m.size());
    for (const auto& e : m.entries) {
        if (target == ProbeTarget::ImageLabel) {
            y.push_back(e.y_image);
        } else {
            if (!e.y_typo) throw Error("sample '" + e.id + "' has no y_typo for a typo_label probe");
            y.push_back(*e.y_typo);
        }
    }
    return y;
}

int target_classes(const DatasetManifest& m, ProbeTarget target) {
    const auto& names = target == ProbeTarget::ImageLabel ? m.class_names : m.typo_class_names;
    if (!names.empty()) return static_cast<int>(names.size());
    int mx = -1;
    for (int v : target_labels(m, target)) mx = std::max(mx, v);
    return mx + 1;
}

std::vector<Tensor> extract_all_embeddings(const VitWeights& w, const Dataset& ds,
                                           std::span<const CapturePoint> points, const InterventionSpec& iv) {
    for (const auto& p : points) p.validate(w.config);
    if (ds.size() == 0) throw Error("cannot extract embeddings from an empty manifest");
    const auto n = static_cast<std::int64_t>(ds.size());
    const std::int64_t d = w.config.width;
    std::vector<Tensor> out(points.size(), Tensor({n, d}));
    parallel_for(ds.size(), [&](std::size_t i) {
        const RunTrace tr = forward(w, ds.images[i], iv);
        for (std::size_t k = 0; k < points.size(); ++k) {
            auto src = cls_at(tr, points[k]);
            std::copy(src.begin(), src.end(), out[k].row(static_cast<std::int64_t>(i)).begin());
        }
    });
    return out;
}

Embeddings extract_embeddings(const VitWeights& w, const Dataset& ds, const CapturePoint& point, ProbeTarget target,
                              const InterventionSpec& iv) {
    Embeddings e;
    const CapturePoint pts[] = {point};
    e.x = std::move(extract_all_embeddings(w, ds, pts, iv)[0]);
    e.labels = target_labels(ds.manifest, target);
    e.classes = target_classes(ds.manifest, target);
    return e;
}

namespace {

void check_probe_inputs(const Tensor& x, std::span<const int> y, int classes) {
    if (x.rank() != 2) throw Error("probe features must be a 2-D [n, d] tensor");
    if (static_cast<std::int64_t>(y.size()) != x.rows()) throw Error("probe label count does not match feature rows");
    for (int v : y)
        if (v < 0 || v >= classes) throw Error("probe label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
}

// Row-wise softmax probabilities of W x + b, in double.
void probe_probs(std::span<const double> W, std::span<const double> b, std::span<const float> xr, int classes,
                 std::vector<double>& p) {
    const std::size_t d = xr.size();
    double mx = -INFINITY;
    for (int c = 0; c < classes; ++c) {
        double s = b[static_cast<std::size_t>(c)];
        const double* wr = W.data() + static_cast<std::size_t>(c) * d;
        for (std::size_t j = 0; j < d; ++j) s += wr[j] * xr[j];
        p[static_cast<std::size_t>(c)] = s;
        mx = std::max(mx, s);
    }
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) sum += (p[static_cast<std::size_t>(c)] = std::exp(p[static_cast<std::size_t>(c)] - mx));
    for (int c = 0; c < classes; ++c) p[static_cast<std::size_t>(c)] /= sum;
}

}  // namespace

double probe_loss(std::span<const double> W, std::span<const double> b, const Tensor& x, std::span<const int> y,
                  int classes, double l2) {
    check_probe_inputs(x, y, classes);
    std::vector<double> p(static_cast<std::size_t>(classes));
    double loss = 0.0;
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        probe_probs(W, b, x.row(i), classes, p);
        loss -= std::log(std::max(p[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])], 1e-300));
    }
    loss /= static_cast<double>(x.rows());
    double reg = 0.0;
    for (double v : W) reg += v * v;
    return loss + 0.5 * l2 * reg;
}

void probe_gradient(std::span<const double> W, std::span<const double> b, const Tensor& x, std::span<const int> y,
                    int classes, double l2, std::span<double> gW, std::span<double> gb) {
    check_probe_inputs(x, y, classes);
    const auto d = static_cast<std::size_t>(x.cols());
    std::fill(gW.begin(), gW.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    std::vector<double> p(static_cast<std::size_t>(classes));
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        const auto xr = x.row(i);
        probe_probs(W, b, xr, classes, p);
        p[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])] -= 1.0;
        for (int c = 0; c < classes; ++c) {
            const double r = p[static_cast<std::size_t>(c)];
            gb[static_cast<std::size_t>(c)] += r;
            double* gr = gW.data() + static_cast<std::size_t>(c) * d;
            for (std::size_t j = 0; j < d; ++j) gr[j] += r * xr[j];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    for (std::size_t k = 0; k < gW.size(); ++k) gW[k] = gW[k] * inv_n + l2 * W[k];
    for (auto& g : gb) g *= inv_n;
}

ProbeModel train_probe(const Tensor& x, std::span<const int> y, int classes, const ProbeConfig& cfg) {
    check_probe_inputs(x, y, classes);
    if (classes < 1) throw Error("probe needs at least one class");
    if (x.rows() < classes)
        throw Error("probe needs at least as many samples (" + std::to_string(x.rows()) + ") as classes (" +
                    std::to_string(classes) + ")");
    if (cfg.epochs < 0 || !(cfg.lr > 0.0) || cfg.l2 < 0.0) throw Error("invalid probe hyperparameters");
    check_finite(x, "probe features");

    const auto d = static_cast<std::size_t>(x.cols());
    const auto C = static_cast<std::size_t>(classes);
    std::vector<double> W(C * d), b(C, 0.0), gW(C * d), gb(C), W2(C * d), b2(C);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> init(0.0, 0.01);
    for (auto& v : W) v = init(rng);

    ProbeModel model;
    model.classes = classes;
    double loss = probe_loss(W, b, x, y, classes, cfg.l2);
    model.loss_history.push_back(loss);
    double lr = cfg.lr;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        probe_gradient(W, b, x, y, classes, cfg.l2, gW, gb);
        double gnorm = 0.0;
        for (double g : gW) gnorm += g * g;
        for (double g : gb) gnorm += g * g;
        if (std::sqrt(gnorm) < 1e-8) {
            model.converged = true;
            break;
        }
        bool stepped = false;
        while (lr > 1e-12) {
            for (std::size_t k = 0; k < W.size(); ++k) W2[k] = W[k] - lr * gW[k];
            for (std::size_t k = 0; k < C; ++k) b2[k] = b[k] - lr * gb[k];
            const double next = probe_loss(W2, b2, x, y, classes, cfg.l2);
            if (next <= loss) {
                W.swap(W2);
                b.swap(b2);
                loss = next;
                stepped = true;
                break;
            }
            lr *= 0.5;
        }
        if (!stepped) {
            // No descent step exists at representable step sizes.
            model.converged = true;
            break;
        }
        model.loss_history.push_back(loss);
        model.epochs_run = epoch + 1;
    }

    model.W = Tensor({classes, static_cast<std::int64_t>(d)});
    model.b = Tensor({classes});
    for (std::size_t k = 0; k < W.size(); ++k) model.W.data[k] = static_cast<float>(W[k]);
    for (std::size_t k = 0; k < C; ++k) model.b.data[k] = static_cast<float>(b[k]);
    check_finite(model.W, "probe weights");
    check_finite(model.b, "probe bias");
    return model;
}

std::vector<int> probe_predict(const ProbeModel& p, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != p.W.cols())
        throw Error("probe input width " + (x.rank() == 2 ? std::to_string(x.cols()) : std::string("?")) +
                    " does not match probe width " + std::to_string(p.W.cols()));
    std::vector<int> pred(static_cast<std::size_t>(x.rows()));
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        const auto xr = x.row(i);
        int best = 0;
        double best_s = -INFINITY;
        for (int c = 0; c < p.classes; ++c) {
            double s = p.b.data[static_cast<std::size_t>(c)];
            const auto wr = p.W.row(c);
            for (std::size_t j = 0; j < xr.size(); ++j) s += static_cast<double>(wr[j]) * xr[j];
            if (s > best_s) {
                best_s = s;
                best = c;
            }
        }
        pred[static_cast<std::size_t>(i)] = best;
    }
    return pred;
}

double probe_accuracy(const ProbeModel& p, const Tensor& x, std::span<const int> y) {
    if (static_cast<std::int64_t>(y.size()) != x.rows()) throw Error("probe label count does not match feature rows");
    if (y.empty()) return 0.0;
    const auto pred = probe_predict(p, x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
    return static_cast<double>(hit) / static_cast<double>(y.size());
}

ProbeSplit probe_split(const DatasetManifest& m, std::uint64_t seed, double train_fraction) {
    ProbeSplit s;
    const auto cut = static_cast<std::uint64_t>(train_fraction * 10000.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (fnv1a64(m.entries[i].id, seed) % 10000 < cut)
            s.train.push_back(i);
        else
            s.eval.push_back(i);
    }
    if (s.eval.empty() && s.train.size() > 1) {
        s.eval.push_back(s.train.back());
        s.train.pop_back();
    }
    return s;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    Tensor out({static_cast<std::int64_t>(rows.size()), x.cols()});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = x.row(static_cast<std::int64_t>(rows[r]));
        std::copy(src.begin(), src.end(), out.row(static_cast<std::int64_t>(r)).begin());
    }
    return out;
}

std::vector<CurvePoint> probe_curve(const VitWeights& w, const Dataset& ds, ProbeTarget target, const ProbeConfig& cfg) {
    const auto points = all_capture_points(w.config);
    const auto labels = target_labels(ds.manifest, target);
    const int classes = target_classes(ds.manifest, target);
    const auto split = probe_split(ds.manifest, cfg.seed);
    std::vector<int> ytr, yev;
    for (auto i : split.train) ytr.push_back(labels[i]);
    for (auto i : split.eval) yev.push_back(labels[i]);

    const auto emb = extract_all_embeddings(w, ds, points);
    std::vector<CurvePoint> curve(points.size());
    parallel_for(points.size(), [&](std::size_t k) {
        ProbeModel p = train_probe(gather_rows(emb[k], split.train), ytr, classes, cfg);
        curve[k] = {points[k], probe_accuracy(p, gather_rows(emb[k], split.eval), yev), p.converged};
    });
    return curve;
}

}  // namespace typocirc
