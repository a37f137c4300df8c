#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "typocirc/datakit.hpp"
#include "typocirc/vit.hpp"

namespace typocirc {

/// Typographic attention score per head, row-major [layer][head].
struct ScoreMatrix {
    int layers = 0;
    int heads = 0;
    std::vector<double> scores;
    double mean = 0.0;
    std::vector<double> per_layer_max;

    double at(HeadId h) const { return scores.at(static_cast<std::size_t>(h.layer * heads + h.head)); }

    /// Recomputes mean and per_layer_max from scores.
    void finalize();

    /// {"L", "I", "scores", "mean", "per_layer_max"}
    nlohmann::ordered_json to_json() const;
    static ScoreMatrix from_json(const nlohmann::ordered_json& j);
};

/// Fraction of the spatial cls-attention mass that lands on flagged tokens:
/// sum_t mask(t) a*_t / sum_t a*_t.
double typo_mass_ratio(std::span<const float> a_star, const RegionMask& mask);

/// Dataset mean of typo_mass_ratio for every head. Every sample needs a
/// non-empty mask.
ScoreMatrix typo_attention_score(const VitWeights& w, const Dataset& ds, const InterventionSpec& iv = {});

/// Mean over samples of m_x / T, the score of a uniformly attending head.
double expected_uniform_score(std::span<const RegionMask> masks);

}  // namespace typocirc
