#include <cstdio>
#include <map>
#include <random>

#include "patterns.hpp"
#include "typocirc/datakit.hpp"
#include "typocirc/safetensors.hpp"

namespace typocirc {

void SyntheticConfig::validate() const {
    if (n < 1) throw Error("dataset size must be positive");
    if (patch_size < 1 || image_size % patch_size != 0)
        throw Error("image size must be a positive multiple of the patch size");
    if (!patterns::valid_order(patch_size * patch_size))
        throw Error("patch size must be a power of two for the synthetic patterns");
    if (classes < 2 || classes + 1 > patch_size * patch_size)
        throw Error("class count must lie in [2, P*P - 1] for patch size " + std::to_string(patch_size));
    if (typo_classes < 2 || typo_classes > classes) throw Error("typo class count must lie in [2, classes]");
    const int g = grid();
    const int cols = region_cols ? region_cols : (region == RegionMode::FixedBottom ? g : std::max(1, g / 2));
    if (region_rows < 1 || cols < 1 || region_rows > g || cols > g)
        throw Error("region " + std::to_string(region_rows) + "x" + std::to_string(cols) + " is larger than the " +
                    std::to_string(g) + "x" + std::to_string(g) + " token grid");
    if (!(noise >= 0.0f)) throw Error("noise must be non-negative");
    if (shard_size < 1) throw Error("shard size must be positive");
}

RenderedSample render_sample(const SyntheticConfig& cfg, int index, bool typographic) {
    cfg.validate();
    const int s = cfg.image_size, p = cfg.patch_size, g = cfg.grid();
    std::mt19937_64 base_rng(patterns::stream_seed(cfg.seed, static_cast<std::uint64_t>(index), 0));
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    std::uniform_real_distribution<float> amp_dist(0.8f, 1.2f);

    RenderedSample out;
    out.y_image = index % cfg.classes;
    out.image = Tensor({3, s, s});
    out.mask.flags.assign(static_cast<std::size_t>(g * g), 0);
    auto px = [&](int c, int y, int x) -> float& {
        return out.image.data[static_cast<std::size_t>((c * s + y) * s + x)];
    };

    // Base image: the object class texture in every patch, jittered per patch.
    const float amp = amp_dist(base_rng);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            const float jitter = 0.9f + 0.2f * std::uniform_real_distribution<float>(0.0f, 1.0f)(base_rng);
            for (int py = 0; py < p; ++py)
                for (int qx = 0; qx < p; ++qx) {
                    const int y = gy * p + py, x = gx * p + qx;
                    const float tex = patterns::hadamard(out.y_image + 1, py * p + qx);
                    px(patterns::kObjectChannel, y, x) = amp * jitter * tex + cfg.noise * gauss(base_rng);
                    px(patterns::kInkChannel, y, x) = cfg.noise * gauss(base_rng);
                    px(patterns::kTypoChannel, y, x) = cfg.noise * gauss(base_rng);
                }
        }
    if (!typographic) return out;

    std::mt19937_64 rng(patterns::stream_seed(cfg.seed, static_cast<std::uint64_t>(index), 1));
    // y_typo never names the depicted class.
    std::vector<int> choices;
    for (int k = 0; k < cfg.typo_classes; ++k)
        if (k != out.y_image) choices.push_back(k);
    const int y_typo = choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)];
    out.y_typo = y_typo;

    if (cfg.region == RegionMode::FixedBottom) {
        out.mask = fixed_bottom_mask(g, cfg.region_rows, cfg.region_cols);
    } else {
        const int rows = cfg.region_rows, cols = cfg.region_cols ? cfg.region_cols : std::max(1, g / 2);
        const int y0 = std::uniform_int_distribution<int>(0, g - rows)(rng);
        const int x0 = std::uniform_int_distribution<int>(0, g - cols)(rng);
        for (int r = y0; r < y0 + rows; ++r)
            for (int c = x0; c < x0 + cols; ++c) out.mask.flags[static_cast<std::size_t>(r * g + c)] = 1;
    }

    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            if (!out.mask.flags[static_cast<std::size_t>(gy * g + gx)]) continue;
            for (int py = 0; py < p; ++py)
                for (int qx = 0; qx < p; ++qx) {
                    const int y = gy * p + py, x = gx * p + qx;
                    px(patterns::kObjectChannel, y, x) = cfg.noise * gauss(rng);
                    px(patterns::kInkChannel, y, x) = patterns::kInkLevel + cfg.noise * gauss(rng);
                    px(patterns::kTypoChannel, y, x) = patterns::hadamard(y_typo + 1, py * p + qx) + cfg.noise * gauss(rng);
                }
        }
    return out;
}

SyntheticDataset gen_synthetic_dataset(const SyntheticConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    SyntheticDataset out;
    for (auto* m : {&out.clean, &out.typo}) {
        m->tokens = cfg.grid() * cfg.grid();
        for (int c = 0; c < cfg.classes; ++c) m->class_names.push_back("class_" + std::to_string(c));
        for (int k = 0; k < cfg.typo_classes; ++k) m->typo_class_names.push_back("class_" + std::to_string(k));
        m->base_dir = out_dir;
    }
    for (int variant = 0; variant < 2; ++variant) {
        const bool typo = variant == 1;
        DatasetManifest& m = typo ? out.typo : out.clean;
        const std::string prefix = typo ? "typo" : "clean";
        TensorMap shard;
        std::string shard_name;
        for (int i = 0; i < cfg.n; ++i) {
            if (i % cfg.shard_size == 0) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%s_%03d.safetensors", prefix.c_str(), i / cfg.shard_size);
                shard_name = buf;
            }
            char id[32];
            std::snprintf(id, sizeof id, "s%06d", i);
            auto sample = render_sample(cfg, i, typo);
            shard.emplace("img." + std::string(id), std::move(sample.image));
            m.entries.push_back({id, shard_name, sample.y_image, sample.y_typo, std::move(sample.mask)});
            if ((i + 1) % cfg.shard_size == 0 || i + 1 == cfg.n) {
                write_safetensors(out_dir / shard_name, shard);
                shard.clear();
            }
        }
        write_manifest(out_dir / (prefix + ".jsonl"), m);
    }
    return out;
}

}  // namespace typocirc
