#pragma once

#include <compare>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "typocirc/safetensors.hpp"
#include "typocirc/tensor.hpp"

namespace typocirc {

struct ModelConfig {
    int layers = 0;
    int heads = 0;       // per layer
    int width = 0;       // residual width d
    int patch_size = 0;  // P
    int image_size = 0;
    int tokens = 0;      // spatial tokens T = (image_size / P)^2
    int embed_dim = 0;   // output projection width e
    float logit_scale = 100.0f;

    int head_dim() const { return width / heads; }
    int grid() const { return image_size / patch_size; }
    int patch_dim() const { return 3 * patch_size * patch_size; }
    int total_heads() const { return layers * heads; }

    /// Throws if the shape relations do not hold.
    void validate() const;
};

struct HeadId {
    int layer = 0;
    int head = 0;

    auto operator<=>(const HeadId&) const = default;
    std::string str() const;
};

struct BlockWeights {
    Tensor ln1_w, ln1_b;
    Tensor q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
    Tensor ln2_w, ln2_b;
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

/// The frozen encoder. Immutable after construction; safe to share across
/// threads.
struct VitWeights {
    ModelConfig config;
    Tensor cls_token;   // [d]
    Tensor pos_embed;   // [T+1, d]
    Tensor patch_w;     // [d, 3*P*P], patch pixels flattened as (channel, row, col)
    Tensor patch_b;     // [d]
    std::vector<BlockWeights> blocks;
    Tensor ln_final_w, ln_final_b;  // [d]
    Tensor proj;        // [e, d]

    /// Tensors under the container naming contract.
    TensorMap to_tensors() const;

    /// Validates names, shapes and finiteness. `heads` comes from the
    /// container metadata; 0 means "infer as d / 64".
    static VitWeights from_tensors(const TensorMap& tensors, int heads = 0);

    /// Digest of the tensor map; identifies a model in circuit sidecars.
    std::string digest() const;

    /// Zero-initialised weights with every tensor allocated to shape.
    static VitWeights zeros(const ModelConfig& cfg);
};

VitWeights load_weights(const std::filesystem::path& path);
void save_weights(const std::filesystem::path& path, const VitWeights& w);

struct AlphaOverride {
    HeadId head;
    double alpha = 0.0;
};

/// Circuit ablation set plus optional cls-row attention overrides.
struct InterventionSpec {
    std::set<HeadId> ablate;
    std::vector<AlphaOverride> alpha;

    bool empty() const { return ablate.empty() && alpha.empty(); }
    void validate(const ModelConfig& cfg) const;
};

struct CaptureFlags {
    bool attention = false;      // full [I, T+1, T+1] per layer
    bool cls_attention = false;  // cls query rows only, [I, T+1]
    bool cls_contrib = false;    // per-head additive cls update, [I, d]
    bool residuals = false;      // full [T+1, d] residuals per layer

    static CaptureFlags all() { return {true, true, true, true}; }
};

struct LayerTrace {
    Tensor attention;
    Tensor cls_attention;
    Tensor cls_contrib;
    Tensor residual_post_attn;
    Tensor residual_post_block;
    std::vector<float> cls_post_attn;   // always captured
    std::vector<float> cls_post_block;  // always captured
};

struct RunTrace {
    std::vector<LayerTrace> layers;
    Tensor embed_in;                          // [T+1, d], captured with residuals
    std::vector<float> cls_embed;             // cls row entering block 0
    std::vector<float> final_ln;              // ln_final(cls), the projection input
    std::vector<float> final_cls_embedding;   // [e]
};

/// Patch pixels of a [3, H, W] image as rows of a [T, 3*P*P] matrix.
Tensor patchify(const ModelConfig& cfg, const Tensor& image);

/// Pre-norm ViT forward pass with intervention hooks.
///
/// Ablation zeroes a head's aggregated value vector for the cls query row
/// before the output projection, so only its additive cls contribution is
/// removed; spatial query rows and the per-layer output bias are untouched.
/// An alpha override replaces the head's cls attention row by
/// [alpha, A* (1 - alpha) / |A*|_1] before value aggregation.
RunTrace forward(const VitWeights& w, const Tensor& image, const InterventionSpec& iv = {},
                 const CaptureFlags& capture = {});

/// Final image embedding only.
std::vector<float> encode(const VitWeights& w, const Tensor& image, const InterventionSpec& iv = {});

/// Reweights a cls attention row (length T+1, cls first) to
/// [alpha, A* (1 - alpha) / |A*|_1]. If A* carries no mass, the spatial
/// share is spread uniformly.
std::vector<float> alpha_pattern(std::span<const float> cls_row, double alpha);

struct SpatialPattern {
    float a_cls = 0.0f;
    std::vector<float> a_star;  // [T]
};

/// Splits the cls attention row of head h into its cls and spatial parts.
SpatialPattern spatial_pattern(const RunTrace& trace, HeadId h);

}  // namespace typocirc
