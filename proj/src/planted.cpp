// Planted encoder.
//
// Residual coordinates for K classes (d >= 4K + 5):
//
//   [0, K)          OBJ       object texture response of a patch
//   [K, 2K)         TYP       overlay glyph response of a patch
//   2K              INK       overlay ink level of a patch
//   2K + 1          CLS       marker carried only by the cls token
//   2K + 2          REG       positional flag of the preferred region
//   2K + 3, 2K + 4  ANCHOR    +S / -S on every token; pins LayerNorm scale
//   [2K+5, 3K+5)    OBJ_READ  object evidence gathered into a token
//   [3K+5, 4K+5)    TYP_READ  typographic evidence gathered into a token
//
// The object head attends uniformly (zero Q/K) and copies OBJ into
// OBJ_READ. Each planted head has a bias-only query, so every query row sees
// the same logits: high on INK keys, moderate on the cls key (the sink),
// plus a small REG bonus. Its value path copies TYP into TYP_READ with a gain
// large enough that typographic evidence outweighs object evidence after
// projection. All other heads and every MLP are zero.
//
// The projection maps OBJ_READ to embedding block [0, K) and TYP_READ to
// [K, 2K); prototype c is (e_c + e_{K+c}) / sqrt(2), so a class is recognised
// either from its texture or from its written name.

#include <cmath>
#include <random>

#include "patterns.hpp"
#include "typocirc/datakit.hpp"

namespace typocirc {

namespace {

constexpr float kAnchor = 4.0f;
constexpr float kPatchGain = 2.0f;   // OBJ, TYP and INK responses
constexpr float kClsMarker = 2.0f;
constexpr float kRegionFlag = 1.0f;
constexpr float kQueryInk = 25.0f;
constexpr float kQuerySink = 11.0f;
constexpr float kQueryRegion = 3.0f;
constexpr float kObjectGain = 1.0f;
constexpr float kTypoGain = 2.0f;

}  // namespace

PlantedModel gen_planted_model(const PlantedConfig& cfg) {
    const int K = cfg.classes, P = cfg.patch_size;
    if (K < 2) throw Error("planted model needs at least 2 classes");
    if (!patterns::valid_order(P * P) || K + 1 > P * P)
        throw Error("patch size must be a power of two with P*P > classes");
    if (4 * K + 5 > cfg.width)
        throw Error("reserved coordinate blocks need width >= " + std::to_string(4 * K + 5) + ", got " +
                    std::to_string(cfg.width));
    if (cfg.heads < 1 || cfg.width % cfg.heads != 0) throw Error("width must be divisible by the head count");
    const int dh = cfg.width / cfg.heads;
    if (dh < std::max(K, 3))
        throw Error("head dimension " + std::to_string(dh) + " is too small for " + std::to_string(K) + " classes");

    ModelConfig mc;
    mc.layers = cfg.layers;
    mc.heads = cfg.heads;
    mc.width = cfg.width;
    mc.patch_size = P;
    mc.image_size = cfg.grid * P;
    mc.tokens = cfg.grid * cfg.grid;
    mc.embed_dim = 2 * K;
    mc.logit_scale = cfg.logit_scale;
    VitWeights w = VitWeights::zeros(mc);

    auto valid = [&](HeadId h) { return h.layer >= 0 && h.layer < cfg.layers && h.head >= 0 && h.head < cfg.heads; };
    if (!valid(cfg.object_head)) throw Error("object head " + cfg.object_head.str() + " is outside the model");
    for (const auto& ph : cfg.planted) {
        if (!valid(ph.head)) throw Error("planted head " + ph.head.str() + " is outside the model");
        if (ph.head == cfg.object_head) throw Error("planted head " + ph.head.str() + " collides with the object head");
        if (!ph.region.flags.empty() && static_cast<int>(ph.region.flags.size()) != mc.tokens)
            throw Error("planted region for head " + ph.head.str() + " does not match the token grid");
    }

    const int OBJ = 0, TYP = K, INK = 2 * K, CLS = 2 * K + 1, REG = 2 * K + 2, ANCH = 2 * K + 3;
    const int OBJ_READ = 2 * K + 5, TYP_READ = 3 * K + 5;
    const int pp = P * P;

    for (int c = 0; c < K; ++c)
        for (int i = 0; i < pp; ++i) {
            w.patch_w.at(OBJ + c, patterns::kObjectChannel * pp + i) = kPatchGain * patterns::hadamard(c + 1, i) / pp;
            w.patch_w.at(TYP + c, patterns::kTypoChannel * pp + i) = kPatchGain * patterns::hadamard(c + 1, i) / pp;
        }
    for (int i = 0; i < pp; ++i) w.patch_w.at(INK, patterns::kInkChannel * pp + i) = kPatchGain / pp;
    w.patch_b.data[ANCH] = kAnchor;
    w.patch_b.data[ANCH + 1] = -kAnchor;

    w.cls_token.data[CLS] = kClsMarker;
    w.cls_token.data[ANCH] = kAnchor;
    w.cls_token.data[ANCH + 1] = -kAnchor;

    for (const auto& ph : cfg.planted)
        for (int t = 0; t < mc.tokens; ++t)
            if (!ph.region.flags.empty() && ph.region.flags[static_cast<std::size_t>(t)])
                w.pos_embed.at(t + 1, REG) = kRegionFlag;

    {
        auto& b = w.blocks[static_cast<std::size_t>(cfg.object_head.layer)];
        const int off = cfg.object_head.head * dh;
        for (int c = 0; c < K; ++c) {
            b.v_w.at(off + c, OBJ + c) = 1.0f;
            b.out_w.at(OBJ_READ + c, off + c) = kObjectGain;
        }
    }
    for (const auto& ph : cfg.planted) {
        auto& b = w.blocks[static_cast<std::size_t>(ph.head.layer)];
        const int off = ph.head.head * dh;
        b.q_b.data[static_cast<std::size_t>(off + 0)] = kQueryInk;
        b.q_b.data[static_cast<std::size_t>(off + 1)] = kQuerySink;
        b.q_b.data[static_cast<std::size_t>(off + 2)] = kQueryRegion;
        b.k_w.at(off + 0, INK) = 1.0f;
        b.k_w.at(off + 1, CLS) = 1.0f;
        b.k_w.at(off + 2, REG) = 1.0f;
        for (int k = 0; k < K; ++k) {
            b.v_w.at(off + k, TYP + k) = 1.0f;
            b.out_w.at(TYP_READ + k, off + k) = kTypoGain;
        }
    }

    for (int c = 0; c < K; ++c) {
        w.proj.at(c, OBJ_READ + c) = 1.0f;
        w.proj.at(K + c, TYP_READ + c) = 1.0f;
    }

    ClassPrototypes protos{Tensor({K, 2 * K})};
    const float r = static_cast<float>(1.0 / std::sqrt(2.0));
    for (int c = 0; c < K; ++c) {
        protos.matrix.at(c, c) = r;
        protos.matrix.at(c, K + c) = r;
    }
    return {std::move(w), std::move(protos)};
}

VitWeights gen_random_model(const ModelConfig& cfg, std::uint64_t seed, float scale) {
    VitWeights w = VitWeights::zeros(cfg);
    std::mt19937_64 rng(patterns::splitmix64(seed));
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    auto fill = [&](Tensor& t, float mean, float sd) {
        for (auto& v : t.data) v = mean + sd * gauss(rng);
    };
    fill(w.cls_token, 0.0f, 1.0f);
    fill(w.pos_embed, 0.0f, 0.5f);
    fill(w.patch_w, 0.0f, scale);
    fill(w.patch_b, 0.0f, 0.1f);
    for (auto& b : w.blocks) {
        fill(b.ln1_w, 1.0f, 0.1f);
        fill(b.ln1_b, 0.0f, 0.1f);
        for (Tensor* t : {&b.q_w, &b.k_w, &b.v_w, &b.out_w, &b.fc1_w, &b.fc2_w}) fill(*t, 0.0f, scale);
        for (Tensor* t : {&b.q_b, &b.k_b, &b.v_b, &b.out_b, &b.fc1_b, &b.fc2_b}) fill(*t, 0.0f, 0.1f);
        fill(b.ln2_w, 1.0f, 0.1f);
        fill(b.ln2_b, 0.0f, 0.1f);
    }
    fill(w.ln_final_w, 1.0f, 0.1f);
    fill(w.ln_final_b, 0.0f, 0.1f);
    fill(w.proj, 0.0f, scale);
    return w;
}

VitWeights gen_uniform_model(const ModelConfig& cfg, std::uint64_t seed) {
    VitWeights w = gen_random_model(cfg, seed);
    for (auto& b : w.blocks)
        for (Tensor* t : {&b.q_w, &b.q_b, &b.k_w, &b.k_b}) std::fill(t->data.begin(), t->data.end(), 0.0f);
    return w;
}

}  // namespace typocirc
