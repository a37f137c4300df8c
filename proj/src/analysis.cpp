#include "typocirc/analysis.hpp"

#include <algorithm>
#include <numeric>

#include "typocirc/parallel.hpp"

namespace typocirc {

IdResult intrinsic_dimensionality(const Tensor& x, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw Error("ID threshold must lie in (0, 1]");
    IdResult r;
    r.spectrum = pca_spectrum(x);
    const double total = std::accumulate(r.spectrum.begin(), r.spectrum.end(), 0.0);
    if (!(total > 0.0)) {
        r.degenerate = true;
        return r;
    }
    double cum = 0.0;
    for (std::size_t k = 0; k < r.spectrum.size(); ++k) {
        cum += r.spectrum[k];
        // Relative slack absorbs round-off when the threshold is met exactly.
        if (cum / total >= threshold - 1e-12) {
            r.id = static_cast<int>(k + 1);
            return r;
        }
    }
    r.id = static_cast<int>(r.spectrum.size());
    return r;
}

std::vector<IdCurvePoint> id_curve(const VitWeights& w, const Dataset& ds, double threshold) {
    const auto points = all_capture_points(w.config);
    const auto emb = extract_all_embeddings(w, ds, points);
    std::vector<IdCurvePoint> out;
    for (std::size_t k = 0; k < points.size(); ++k) out.push_back({points[k], intrinsic_dimensionality(emb[k], threshold)});
    return out;
}

std::vector<double> spatial_attention_norms(const VitWeights& w, HeadId h, const Dataset& ds) {
    if (h.layer < 0 || h.layer >= w.config.layers || h.head < 0 || h.head >= w.config.heads)
        throw Error("invalid head " + h.str() + " for this model");
    CaptureFlags flags;
    flags.cls_attention = true;
    std::vector<double> out(ds.size());
    parallel_for(ds.size(), [&](std::size_t i) {
        const auto sp = spatial_pattern(forward(w, ds.images[i], {}, flags), h);
        out[i] = std::clamp(1.0 - static_cast<double>(sp.a_cls), 0.0, 1.0);
    });
    return out;
}

SinkStats sink_norm_stats(const VitWeights& w, HeadId h, const Dataset& clean, const Dataset& typo) {
    return {spatial_attention_norms(w, h, clean), spatial_attention_norms(w, h, typo)};
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("roc_auc: scores and labels differ in length");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Average ranks over tie groups, then the Mann-Whitney U of positives.
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]]) {
                pos_rank_sum += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    for (int l : labels)
        if (l != 0 && l != 1) throw Error("roc_auc labels must be 0 or 1");
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("roc_auc needs both positive and negative samples");
    const double u = pos_rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Summary summarize(std::span<const double> v) {
    Summary s;
    s.n = v.size();
    if (v.empty()) return s;
    std::vector<double> sorted(v.begin(), v.end());
    std::sort(sorted.begin(), sorted.end());
    s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(s.n);
    s.median = s.n % 2 ? sorted[s.n / 2] : 0.5 * (sorted[s.n / 2 - 1] + sorted[s.n / 2]);
    s.min = sorted.front();
    s.max = sorted.back();
    return s;
}

nlohmann::ordered_json to_json(const Summary& s) {
    return {{"n", s.n}, {"mean", s.mean}, {"median", s.median}, {"min", s.min}, {"max", s.max}};
}

double linear_probe_auc(const VitWeights& w, const Dataset& clean, const Dataset& typo, const ProbeConfig& cfg) {
    const CapturePoint pts[] = {CapturePoint::final_ln()};
    const Tensor xc = extract_all_embeddings(w, clean, pts)[0];
    const Tensor xt = extract_all_embeddings(w, typo, pts)[0];
    const auto n = xc.rows() + xt.rows();
    Tensor x({n, xc.cols()});
    std::copy(xc.data.begin(), xc.data.end(), x.data.begin());
    std::copy(xt.data.begin(), xt.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(xc.data.size()));
    std::vector<int> y(static_cast<std::size_t>(n), 0);
    std::fill(y.begin() + xc.rows(), y.end(), 1);

    // Split on ids tagged by origin so paired clean/typo ids land independently.
    std::vector<std::size_t> train, eval;
    for (std::int64_t i = 0; i < n; ++i) {
        const bool is_typo = i >= xc.rows();
        const auto& id = is_typo ? typo.manifest.entries[static_cast<std::size_t>(i - xc.rows())].id
                                 : clean.manifest.entries[static_cast<std::size_t>(i)].id;
        (fnv1a64((is_typo ? "typo:" : "clean:") + id, cfg.seed) % 10 < 8 ? train : eval).push_back(static_cast<std::size_t>(i));
    }
    std::vector<int> ytr, yev;
    for (auto i : train) ytr.push_back(y[i]);
    for (auto i : eval) yev.push_back(y[i]);
    const ProbeModel p = train_probe(gather_rows(x, train), ytr, 2, cfg);
    const Tensor xe = gather_rows(x, eval);
    std::vector<double> margin(eval.size());
    for (std::size_t r = 0; r < eval.size(); ++r) {
        const auto xr = xe.row(static_cast<std::int64_t>(r));
        double s = p.b.data[1] - p.b.data[0];
        for (std::size_t j = 0; j < xr.size(); ++j) s += (static_cast<double>(p.W.at(1, static_cast<std::int64_t>(j))) - p.W.at(0, static_cast<std::int64_t>(j))) * xr[j];
        margin[r] = s;
    }
    return roc_auc(margin, yev);
}

}  // namespace typocirc
