#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "typocirc/datakit.hpp"
#include "typocirc/tensor.hpp"
#include "typocirc/vit.hpp"

namespace typocirc {

/// Where the cls row is read: before block 0, after a block's attention
/// sublayer, after a whole block, or after the final LayerNorm.
struct CapturePoint {
    enum class Kind { Embed, PostAttn, PostBlock, Final };
    Kind kind = Kind::Embed;
    int layer = -1;

    static CapturePoint embed() { return {Kind::Embed, -1}; }
    static CapturePoint post_attn(int l) { return {Kind::PostAttn, l}; }
    static CapturePoint post_block(int l) { return {Kind::PostBlock, l}; }
    static CapturePoint final_ln() { return {Kind::Final, -1}; }

    /// "embed", "post_attn.<l>", "post_block.<l>" or "final".
    std::string str() const;
    static CapturePoint parse(std::string_view s);
    void validate(const ModelConfig& cfg) const;

    bool operator==(const CapturePoint&) const = default;
};

/// embed, post_attn(0), post_block(0), ..., post_block(L-1), final.
std::vector<CapturePoint> all_capture_points(const ModelConfig& cfg);

/// The cls vector at `point` in a trace.
std::span<const float> cls_at(const RunTrace& trace, const CapturePoint& point);

enum class ProbeTarget { ImageLabel, TypoLabel };
std::string to_string(ProbeTarget t);
ProbeTarget parse_probe_target(std::string_view s);

struct Embeddings {
    Tensor x;                 // [n, d] in manifest order
    std::vector<int> labels;  // per target
    int classes = 0;
};

/// Labels for `target`; typo targets require y_typo on every sample.
std::vector<int> target_labels(const DatasetManifest& m, ProbeTarget target);
int target_classes(const DatasetManifest& m, ProbeTarget target);

Embeddings extract_embeddings(const VitWeights& w, const Dataset& ds, const CapturePoint& point, ProbeTarget target,
                              const InterventionSpec& iv = {});

/// One forward pass per sample, cls rows collected at every capture point.
std::vector<Tensor> extract_all_embeddings(const VitWeights& w, const Dataset& ds,
                                           std::span<const CapturePoint> points, const InterventionSpec& iv = {});

struct ProbeConfig {
    int epochs = 500;
    double lr = 0.1;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
};

struct ProbeModel {
    Tensor W;  // [classes, d]
    Tensor b;  // [classes]
    CapturePoint capture_point;
    ProbeTarget target = ProbeTarget::ImageLabel;
    int classes = 0;

    // Training status.
    bool converged = false;
    int epochs_run = 0;
    std::vector<double> loss_history;
};

/// Mean softmax cross-entropy plus (l2 / 2) * |W|^2; bias is not penalised.
double probe_loss(std::span<const double> W, std::span<const double> b, const Tensor& x, std::span<const int> y,
                  int classes, double l2);

/// Analytic gradient of probe_loss, written into gW [classes * d] and gb.
void probe_gradient(std::span<const double> W, std::span<const double> b, const Tensor& x, std::span<const int> y,
                    int classes, double l2, std::span<double> gW, std::span<double> gb);

/// Multinomial logistic regression by full-batch gradient descent. The step
/// size halves whenever a step would increase the loss, so the loss history
/// is non-increasing. Stops at the epoch cap, on a vanishing gradient, or
/// when the step size underflows.
ProbeModel train_probe(const Tensor& x, std::span<const int> y, int classes, const ProbeConfig& cfg = {});

/// argmax(Wx + b) per row, ties to the lowest class.
std::vector<int> probe_predict(const ProbeModel& p, const Tensor& x);
double probe_accuracy(const ProbeModel& p, const Tensor& x, std::span<const int> y);

/// Deterministic 80/20 split keyed on a hash of each sample id and the seed.
struct ProbeSplit {
    std::vector<std::size_t> train, eval;
};
ProbeSplit probe_split(const DatasetManifest& m, std::uint64_t seed, double train_fraction = 0.8);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

struct CurvePoint {
    CapturePoint point;
    double accuracy = 0.0;
    bool converged = false;
};

/// Held-out probe accuracy at every capture point.
std::vector<CurvePoint> probe_curve(const VitWeights& w, const Dataset& ds, ProbeTarget target,
                                    const ProbeConfig& cfg = {});

}  // namespace typocirc
