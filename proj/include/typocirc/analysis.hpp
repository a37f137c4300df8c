#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "typocirc/datakit.hpp"
#include "typocirc/probe.hpp"
#include "typocirc/vit.hpp"

namespace typocirc {

struct IdResult {
    int id = 0;
    bool degenerate = false;  // total variance was zero; id reported as 0
    std::vector<double> spectrum;
};

/// Smallest k whose leading PCA eigenvalues explain at least `threshold`
/// of the total variance.
IdResult intrinsic_dimensionality(const Tensor& x, double threshold = 0.95);

struct IdCurvePoint {
    CapturePoint point;
    IdResult id;
};

/// Intrinsic dimensionality of the cls rows at every capture point.
std::vector<IdCurvePoint> id_curve(const VitWeights& w, const Dataset& ds, double threshold = 0.95);

/// Spatial attention mass 1 - A_cls of head h, per sample.
std::vector<double> spatial_attention_norms(const VitWeights& w, HeadId h, const Dataset& ds);

struct SinkStats {
    std::vector<double> clean;
    std::vector<double> typo;
};

SinkStats sink_norm_stats(const VitWeights& w, HeadId h, const Dataset& clean, const Dataset& typo);

/// Mann-Whitney AUC: probability that a random positive outscores a random
/// negative, ties counted as one half.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct Summary {
    std::size_t n = 0;
    double mean = 0.0, median = 0.0, min = 0.0, max = 0.0;
};
Summary summarize(std::span<const double> v);
nlohmann::ordered_json to_json(const Summary& s);

/// Held-out AUC of a linear probe separating clean (0) from typographic (1)
/// samples on final cls embeddings; the probe's logit margin is the score.
double linear_probe_auc(const VitWeights& w, const Dataset& clean, const Dataset& typo, const ProbeConfig& cfg = {});

}  // namespace typocirc
