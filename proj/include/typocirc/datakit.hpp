#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "typocirc/tensor.hpp"
#include "typocirc/vit.hpp"

namespace typocirc {

/// Indicator over spatial tokens, row-major over the patch grid.
struct RegionMask {
    std::vector<std::uint8_t> flags;

    int count() const;
    bool any() const { return count() > 0; }
};

/// Mask of the bottom `rows` token rows, horizontally centred, `cols` wide
/// (0 = full width).
RegionMask fixed_bottom_mask(int grid, int rows, int cols = 0);

struct ManifestEntry {
    std::string id;
    std::string tensor_path;  // relative to the manifest directory
    int y_image = 0;
    std::optional<int> y_typo;
    RegionMask mask;
};

/// JSON Lines manifest. The first line is a header object
///   {"class_names": [...], "typo_class_names": [...], "tokens": T}
/// and every following line one sample
///   {"id": str, "tensor_path": str, "y_image": int, "y_typo": int|null, "mask": [0|1 x T]}.
/// Image pixels live in the tensor file under the name "img.<id>".
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
    std::vector<std::string> typo_class_names;  // typo label k names class_names[k]
    int tokens = 0;
    std::filesystem::path base_dir;

    std::size_t size() const { return entries.size(); }
    void validate() const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

/// Manifest plus its images held in memory, in entry order.
struct Dataset {
    DatasetManifest manifest;
    std::vector<Tensor> images;

    std::size_t size() const { return images.size(); }
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Reorders entries and images together.
Dataset permuted(const Dataset& ds, std::span<const std::size_t> order);

/// Class-balanced subsample: ceil(fraction * count) samples per y_image
/// class, chosen by a seeded shuffle, returned in original order.
Dataset control_split(const Dataset& ds, double fraction, std::uint64_t seed);

// ---- synthetic data ----------------------------------------------------

enum class RegionMode { FixedBottom, Random };

struct SyntheticConfig {
    int n = 200;
    int classes = 6;
    int typo_classes = 6;
    int image_size = 40;
    int patch_size = 4;
    RegionMode region = RegionMode::FixedBottom;
    int region_rows = 2;
    int region_cols = 0;  // 0: full width for fixed-bottom, grid / 2 for random
    std::uint64_t seed = 0;
    float noise = 0.05f;
    int shard_size = 256;

    int grid() const { return image_size / patch_size; }
    void validate() const;
};

struct RenderedSample {
    Tensor image;  // [3, H, W], already normalised
    int y_image = 0;
    std::optional<int> y_typo;
    RegionMask mask;
};

/// Renders sample `index`. The clean and typographic variants share the
/// same base image; the overlay replaces exactly the masked patches.
RenderedSample render_sample(const SyntheticConfig& cfg, int index, bool typographic);

struct SyntheticDataset {
    DatasetManifest clean;
    DatasetManifest typo;
};

/// Writes clean.jsonl, typo.jsonl and their tensor shards into out_dir.
SyntheticDataset gen_synthetic_dataset(const SyntheticConfig& cfg, const std::filesystem::path& out_dir);

// ---- models -----------------------------------------------------------

/// Zero-shot class embeddings, rows L2-normalised. Stored under the tensor
/// name "prototypes".
struct ClassPrototypes {
    Tensor matrix;  // [classes, e]

    int classes() const { return static_cast<int>(matrix.rows()); }
    void validate() const;
};

ClassPrototypes load_prototypes(const std::filesystem::path& path);
void save_prototypes(const std::filesystem::path& path, const ClassPrototypes& p);

struct PlantedHead {
    HeadId head;
    RegionMask region;  // optional positional preference; empty = content only
};

struct PlantedConfig {
    int layers = 3;
    int heads = 4;
    int width = 32;
    int grid = 10;
    int patch_size = 4;
    int classes = 6;
    std::vector<PlantedHead> planted{{HeadId{1, 2}, {}}};
    HeadId object_head{0, 0};
    float logit_scale = 100.0f;
};

struct PlantedModel {
    VitWeights weights;
    ClassPrototypes prototypes;
};

/// Hand-built encoder with a known typographic reader head (see planted.cpp
/// for the residual layout). Pairs with SyntheticConfig rendering.
PlantedModel gen_planted_model(const PlantedConfig& cfg);

/// Random weights of the given shape, deterministic per seed.
VitWeights gen_random_model(const ModelConfig& cfg, std::uint64_t seed, float scale = 0.3f);

/// Random weights with every query/key weight and bias zero, so every head
/// attends uniformly.
VitWeights gen_uniform_model(const ModelConfig& cfg, std::uint64_t seed);

// ---- zero-shot harness --------------------------------------------------

struct ZeroShotResult {
    Tensor logits;  // [n, classes]
    Tensor probs;   // [n, classes]
    std::vector<int> predictions;
    double acc_image = 0.0;
    double acc_typo = 0.0;  // over samples carrying y_typo
    int n_typo = 0;
};

/// logits = logit_scale * <normalize(embedding), prototype row>; ties in the
/// argmax go to the lower class index.
ZeroShotResult zero_shot_classify(const VitWeights& w, const InterventionSpec& iv, const Dataset& ds,
                                  const ClassPrototypes& prototypes);

/// Variant with a per-sample intervention.
ZeroShotResult zero_shot_classify_each(const VitWeights& w, const std::function<InterventionSpec(std::size_t)>& iv_for,
                                       const Dataset& ds, const ClassPrototypes& prototypes);

/// Classifies precomputed embeddings; shared by both harness entry points.
ZeroShotResult classify_embeddings(const std::vector<std::vector<float>>& embeddings, float logit_scale,
                                   const DatasetManifest& labels, const ClassPrototypes& prototypes);

/// Stable 64-bit FNV-1a hash, used for seeded id-based splits.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0);

}  // namespace typocirc
