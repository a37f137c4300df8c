#include <cmath>

#include "typocirc/datakit.hpp"
#include "typocirc/parallel.hpp"

namespace typocirc {

ZeroShotResult classify_embeddings(const std::vector<std::vector<float>>& embeddings, float logit_scale,
                                   const DatasetManifest& labels, const ClassPrototypes& prototypes) {
    const auto n = static_cast<std::int64_t>(embeddings.size());
    const auto C = prototypes.matrix.rows();
    const auto e = prototypes.matrix.cols();
    if (static_cast<std::size_t>(n) != labels.size()) throw Error("embedding count does not match the manifest");

    ZeroShotResult r;
    r.logits = Tensor({n, C});
    r.predictions.resize(static_cast<std::size_t>(n));
    int hit_image = 0, hit_typo = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& emb = embeddings[static_cast<std::size_t>(i)];
        if (static_cast<std::int64_t>(emb.size()) != e)
            throw Error("embedding width " + std::to_string(emb.size()) + " does not match prototype width " +
                        std::to_string(e));
        const auto u = l2_normalize(emb);
        int best = 0;
        for (std::int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            const auto row = prototypes.matrix.row(c);
            for (std::int64_t j = 0; j < e; ++j) s += static_cast<double>(u[static_cast<std::size_t>(j)]) * row[static_cast<std::size_t>(j)];
            r.logits.at(i, c) = static_cast<float>(logit_scale * s);
            if (r.logits.at(i, c) > r.logits.at(i, best)) best = static_cast<int>(c);
        }
        r.predictions[static_cast<std::size_t>(i)] = best;
        const auto& entry = labels.entries[static_cast<std::size_t>(i)];
        hit_image += best == entry.y_image;
        if (entry.y_typo) {
            ++r.n_typo;
            hit_typo += best == *entry.y_typo;
        }
    }
    r.probs = softmax_rows(r.logits);
    r.acc_image = n ? static_cast<double>(hit_image) / static_cast<double>(n) : 0.0;
    r.acc_typo = r.n_typo ? static_cast<double>(hit_typo) / r.n_typo : 0.0;
    return r;
}

ZeroShotResult zero_shot_classify_each(const VitWeights& w, const std::function<InterventionSpec(std::size_t)>& iv_for,
                                       const Dataset& ds, const ClassPrototypes& prototypes) {
    if (prototypes.matrix.cols() != w.config.embed_dim)
        throw Error("prototype width " + std::to_string(prototypes.matrix.cols()) + " does not match model embed dim " +
                    std::to_string(w.config.embed_dim));
    std::vector<std::vector<float>> emb(ds.size());
    parallel_for(ds.size(), [&](std::size_t i) { emb[i] = encode(w, ds.images[i], iv_for(i)); });
    return classify_embeddings(emb, w.config.logit_scale, ds.manifest, prototypes);
}

ZeroShotResult zero_shot_classify(const VitWeights& w, const InterventionSpec& iv, const Dataset& ds,
                                  const ClassPrototypes& prototypes) {
    iv.validate(w.config);
    return zero_shot_classify_each(w, [&](std::size_t) { return iv; }, ds, prototypes);
}

}  // namespace typocirc
