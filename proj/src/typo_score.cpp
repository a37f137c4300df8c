#include "typocirc/typo_score.hpp"

#include <algorithm>

#include "typocirc/parallel.hpp"

namespace typocirc {

void ScoreMatrix::finalize() {
    if (scores.size() != static_cast<std::size_t>(layers * heads)) throw Error("score matrix size mismatch");
    if (scores.empty()) throw Error("empty score matrix");
    double s = 0.0;
    for (double v : scores) s += v;
    mean = s / static_cast<double>(scores.size());
    per_layer_max.assign(static_cast<std::size_t>(layers), 0.0);
    for (int l = 0; l < layers; ++l)
        per_layer_max[static_cast<std::size_t>(l)] =
            *std::max_element(scores.begin() + l * heads, scores.begin() + (l + 1) * heads);
}

nlohmann::ordered_json ScoreMatrix::to_json() const {
    nlohmann::ordered_json j;
    j["L"] = layers;
    j["I"] = heads;
    j["scores"] = scores;
    j["mean"] = mean;
    j["per_layer_max"] = per_layer_max;
    return j;
}

ScoreMatrix ScoreMatrix::from_json(const nlohmann::ordered_json& j) {
    ScoreMatrix m;
    try {
        m.layers = j.at("L").get<int>();
        m.heads = j.at("I").get<int>();
        m.scores = j.at("scores").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed score matrix: ") + e.what());
    }
    for (double v : m.scores)
        if (!(v >= 0.0 && v <= 1.0)) throw Error("score matrix entry outside [0, 1]");
    m.finalize();
    return m;
}

double typo_mass_ratio(std::span<const float> a_star, const RegionMask& mask) {
    if (a_star.size() != mask.flags.size()) throw Error("mask length does not match the spatial attention length");
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < a_star.size(); ++t) {
        den += a_star[t];
        if (mask.flags[t]) num += a_star[t];
    }
    if (!(den > 0.0)) return static_cast<double>(mask.count()) / static_cast<double>(mask.flags.size());
    return std::clamp(num / den, 0.0, 1.0);
}

ScoreMatrix typo_attention_score(const VitWeights& w, const Dataset& ds, const InterventionSpec& iv) {
    if (ds.size() == 0) throw Error("cannot score an empty manifest");
    const auto& c = w.config;
    for (const auto& e : ds.manifest.entries) {
        if (static_cast<int>(e.mask.flags.size()) != c.tokens)
            throw Error("sample '" + e.id + "' mask does not match the model's " + std::to_string(c.tokens) + " tokens");
        if (!e.mask.any()) throw Error("sample '" + e.id + "' has an all-zero mask; clean samples cannot be scored");
    }
    const auto H = static_cast<std::size_t>(c.total_heads());
    // per_sample[i * H + h]
    std::vector<double> per_sample(ds.size() * H);
    CaptureFlags flags;
    flags.cls_attention = true;
    parallel_for(ds.size(), [&](std::size_t i) {
        const RunTrace tr = forward(w, ds.images[i], iv, flags);
        for (int l = 0; l < c.layers; ++l)
            for (int h = 0; h < c.heads; ++h) {
                const auto row = tr.layers[static_cast<std::size_t>(l)].cls_attention.row(h);
                per_sample[i * H + static_cast<std::size_t>(l * c.heads + h)] =
                    typo_mass_ratio(row.subspan(1), ds.manifest.entries[i].mask);
            }
    });

    ScoreMatrix m;
    m.layers = c.layers;
    m.heads = c.heads;
    m.scores.resize(H);
    std::vector<double> col(ds.size());
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < ds.size(); ++i) col[i] = per_sample[i * H + h];
        // Summing in sorted order makes the mean independent of dataset order.
        std::sort(col.begin(), col.end());
        double s = 0.0;
        for (double v : col) s += v;
        m.scores[h] = s / static_cast<double>(ds.size());
    }
    m.finalize();
    return m;
}

double expected_uniform_score(std::span<const RegionMask> masks) {
    if (masks.empty()) throw Error("no masks given");
    double s = 0.0;
    for (const auto& m : masks) {
        if (m.flags.empty()) throw Error("empty mask");
        s += static_cast<double>(m.count()) / static_cast<double>(m.flags.size());
    }
    return s / static_cast<double>(masks.size());
}

}  // namespace typocirc
