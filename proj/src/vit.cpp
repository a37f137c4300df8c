#include "typocirc/vit.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace typocirc {

void ModelConfig::validate() const {
    if (layers < 1 || heads < 1 || width < 1 || patch_size < 1 || image_size < 1 || embed_dim < 1)
        throw Error("model config has a non-positive dimension");
    if (width % heads != 0)
        throw Error("width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
    if (image_size % patch_size != 0)
        throw Error("image size " + std::to_string(image_size) + " is not a multiple of patch size " +
                    std::to_string(patch_size));
    if (tokens != grid() * grid())
        throw Error("token count " + std::to_string(tokens) + " does not match a " + std::to_string(grid()) + "x" +
                    std::to_string(grid()) + " grid");
    if (!(logit_scale > 0.0f) || !std::isfinite(logit_scale)) throw Error("logit_scale must be positive");
}

std::string HeadId::str() const { return "(" + std::to_string(layer) + ", " + std::to_string(head) + ")"; }

namespace {

std::string block_name(int l, const char* suffix) { return "blocks." + std::to_string(l) + "." + suffix; }

template <typename Fn>
void for_each_tensor(const VitWeights& w, Fn&& fn) {
    fn("cls_token", w.cls_token);
    fn("pos_embed", w.pos_embed);
    fn("patch_embed.weight", w.patch_w);
    fn("patch_embed.bias", w.patch_b);
    for (int l = 0; l < static_cast<int>(w.blocks.size()); ++l) {
        const auto& b = w.blocks[static_cast<std::size_t>(l)];
        fn(block_name(l, "ln1.weight"), b.ln1_w);
        fn(block_name(l, "ln1.bias"), b.ln1_b);
        fn(block_name(l, "attn.q.weight"), b.q_w);
        fn(block_name(l, "attn.q.bias"), b.q_b);
        fn(block_name(l, "attn.k.weight"), b.k_w);
        fn(block_name(l, "attn.k.bias"), b.k_b);
        fn(block_name(l, "attn.v.weight"), b.v_w);
        fn(block_name(l, "attn.v.bias"), b.v_b);
        fn(block_name(l, "attn.out.weight"), b.out_w);
        fn(block_name(l, "attn.out.bias"), b.out_b);
        fn(block_name(l, "ln2.weight"), b.ln2_w);
        fn(block_name(l, "ln2.bias"), b.ln2_b);
        fn(block_name(l, "mlp.fc1.weight"), b.fc1_w);
        fn(block_name(l, "mlp.fc1.bias"), b.fc1_b);
        fn(block_name(l, "mlp.fc2.weight"), b.fc2_w);
        fn(block_name(l, "mlp.fc2.bias"), b.fc2_b);
    }
    fn("ln_final.weight", w.ln_final_w);
    fn("ln_final.bias", w.ln_final_b);
    fn("proj", w.proj);
}

template <typename Fn>
void for_each_tensor_mut(VitWeights& w, Fn&& fn) {
    for_each_tensor(static_cast<const VitWeights&>(w),
                    [&](const std::string& name, const Tensor& t) { fn(name, const_cast<Tensor&>(t)); });
}

std::map<std::string, std::vector<std::int64_t>> expected_shapes(const ModelConfig& c) {
    const std::int64_t d = c.width, t1 = c.tokens + 1, pd = c.patch_dim(), e = c.embed_dim;
    std::map<std::string, std::vector<std::int64_t>> s;
    s["cls_token"] = {d};
    s["pos_embed"] = {t1, d};
    s["patch_embed.weight"] = {d, pd};
    s["patch_embed.bias"] = {d};
    for (int l = 0; l < c.layers; ++l) {
        for (const char* n : {"ln1.weight", "ln1.bias", "ln2.weight", "ln2.bias", "attn.q.bias", "attn.k.bias",
                              "attn.v.bias", "attn.out.bias", "mlp.fc2.bias"})
            s[block_name(l, n)] = {d};
        for (const char* n : {"attn.q.weight", "attn.k.weight", "attn.v.weight", "attn.out.weight"})
            s[block_name(l, n)] = {d, d};
        s[block_name(l, "mlp.fc1.weight")] = {4 * d, d};
        s[block_name(l, "mlp.fc1.bias")] = {4 * d};
        s[block_name(l, "mlp.fc2.weight")] = {d, 4 * d};
    }
    s["ln_final.weight"] = {d};
    s["ln_final.bias"] = {d};
    s["proj"] = {e, d};
    return s;
}

const Tensor& require(const TensorMap& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw Error("missing tensor '" + name + "'");
    return it->second;
}

int isqrt_exact(std::int64_t v) {
    auto r = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(v))));
    return r * r == v ? static_cast<int>(r) : -1;
}

}  // namespace

TensorMap VitWeights::to_tensors() const {
    TensorMap m;
    for_each_tensor(*this, [&](const std::string& n, const Tensor& t) { m.emplace(n, t); });
    m.emplace("logit_scale", Tensor::scalar(config.logit_scale));
    return m;
}

std::string VitWeights::digest() const { return tensor_map_digest(to_tensors()); }

VitWeights VitWeights::zeros(const ModelConfig& cfg) {
    cfg.validate();
    VitWeights w;
    w.config = cfg;
    w.blocks.resize(static_cast<std::size_t>(cfg.layers));
    const auto shapes = expected_shapes(cfg);
    for_each_tensor_mut(w, [&](const std::string& n, Tensor& t) { t = Tensor(shapes.at(n)); });
    for (auto& b : w.blocks) {
        std::fill(b.ln1_w.data.begin(), b.ln1_w.data.end(), 1.0f);
        std::fill(b.ln2_w.data.begin(), b.ln2_w.data.end(), 1.0f);
    }
    std::fill(w.ln_final_w.data.begin(), w.ln_final_w.data.end(), 1.0f);
    return w;
}

VitWeights VitWeights::from_tensors(const TensorMap& m, int heads) {
    const Tensor& cls = require(m, "cls_token");
    const Tensor& pos = require(m, "pos_embed");
    const Tensor& pw = require(m, "patch_embed.weight");
    const Tensor& proj = require(m, "proj");

    ModelConfig c;
    c.width = static_cast<int>(cls.numel());
    if (pos.rank() != 2 || pos.dim(1) != c.width)
        throw Error("tensor 'pos_embed' has shape " + shape_str(pos.shape) + ", expected [T+1, " +
                    std::to_string(c.width) + "]");
    c.tokens = static_cast<int>(pos.dim(0)) - 1;
    const int grid = isqrt_exact(c.tokens);
    if (c.tokens < 1 || grid < 0)
        throw Error("tensor 'pos_embed' row count " + std::to_string(pos.dim(0)) + " is not a square grid plus cls");
    if (pw.rank() != 2 || pw.dim(1) % 3 != 0) throw Error("tensor 'patch_embed.weight' has shape " + shape_str(pw.shape));
    const int p = isqrt_exact(pw.dim(1) / 3);
    if (p < 1) throw Error("tensor 'patch_embed.weight' width is not 3*P*P");
    c.patch_size = p;
    c.image_size = grid * p;
    if (proj.rank() != 2) throw Error("tensor 'proj' has shape " + shape_str(proj.shape) + ", expected [e, d]");
    c.embed_dim = static_cast<int>(proj.dim(0));
    while (m.count(block_name(c.layers, "ln1.weight"))) ++c.layers;
    if (c.layers == 0) throw Error("missing tensor 'blocks.0.ln1.weight'");
    if (heads <= 0) {
        if (c.width % 64 != 0)
            throw Error("head count absent from metadata and width " + std::to_string(c.width) +
                        " is not a multiple of 64");
        heads = c.width / 64;
    }
    c.heads = heads;
    if (auto it = m.find("logit_scale"); it != m.end()) {
        if (it->second.numel() != 1) throw Error("tensor 'logit_scale' must be a scalar");
        c.logit_scale = it->second.data[0];
    }
    c.validate();

    VitWeights w;
    w.config = c;
    w.blocks.resize(static_cast<std::size_t>(c.layers));
    const auto shapes = expected_shapes(c);
    for_each_tensor_mut(w, [&](const std::string& name, Tensor& t) {
        const Tensor& src = require(m, name);
        const auto& want = shapes.at(name);
        if (src.shape != want)
            throw Error("tensor '" + name + "' has shape " + shape_str(src.shape) + ", expected " + shape_str(want));
        check_finite(src, "tensor '" + name + "'");
        t = src;
    });
    return w;
}

VitWeights load_weights(const std::filesystem::path& path) {
    auto file = read_safetensors(path);
    int heads = 0;
    if (auto it = file.metadata.find("heads"); it != file.metadata.end()) {
        try {
            heads = std::stoi(it->second);
        } catch (const std::exception&) {
            throw Error("invalid 'heads' metadata in " + path.string());
        }
    }
    return VitWeights::from_tensors(file.tensors, heads);
}

void save_weights(const std::filesystem::path& path, const VitWeights& w) {
    write_safetensors(path, w.to_tensors(), {{"heads", std::to_string(w.config.heads)}});
}

void InterventionSpec::validate(const ModelConfig& cfg) const {
    auto check = [&](HeadId h) {
        if (h.layer < 0 || h.layer >= cfg.layers || h.head < 0 || h.head >= cfg.heads)
            throw Error("invalid head " + h.str() + " for a model with " + std::to_string(cfg.layers) +
                        " layers and " + std::to_string(cfg.heads) + " heads");
    };
    for (auto h : ablate) check(h);
    for (const auto& a : alpha) {
        check(a.head);
        if (!(a.alpha >= 0.0 && a.alpha <= 1.0))
            throw Error("alpha " + std::to_string(a.alpha) + " for head " + a.head.str() + " is outside [0, 1]");
    }
}

Tensor patchify(const ModelConfig& cfg, const Tensor& image) {
    const std::int64_t s = cfg.image_size;
    if (image.shape != std::vector<std::int64_t>{3, s, s})
        throw Error("image shape " + shape_str(image.shape) + " does not match model input [3, " + std::to_string(s) +
                    ", " + std::to_string(s) + "]");
    const int p = cfg.patch_size, g = cfg.grid();
    Tensor out({cfg.tokens, cfg.patch_dim()});
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            auto row = out.row(gy * g + gx);
            std::size_t k = 0;
            for (int c = 0; c < 3; ++c)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        row[k++] = image.data[static_cast<std::size_t>((c * s + gy * p + py) * s + gx * p + px)];
        }
    return out;
}

std::vector<float> alpha_pattern(std::span<const float> cls_row, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha " + std::to_string(alpha) + " is outside [0, 1]");
    if (cls_row.size() < 2) throw Error("attention row too short for an alpha override");
    double spatial = 0.0;
    for (std::size_t j = 1; j < cls_row.size(); ++j) spatial += cls_row[j];
    std::vector<float> out(cls_row.size());
    out[0] = static_cast<float>(alpha);
    const double rest = 1.0 - alpha;
    if (spatial > 0.0) {
        const double scale = rest / spatial;
        for (std::size_t j = 1; j < cls_row.size(); ++j) out[j] = static_cast<float>(cls_row[j] * scale);
    } else {
        const double u = rest / static_cast<double>(cls_row.size() - 1);
        for (std::size_t j = 1; j < cls_row.size(); ++j) out[j] = static_cast<float>(u);
    }
    return out;
}

RunTrace forward(const VitWeights& w, const Tensor& image, const InterventionSpec& iv, const CaptureFlags& capture) {
    const ModelConfig& c = w.config;
    iv.validate(c);
    const std::int64_t d = c.width, n_tok = c.tokens + 1;
    const int dh = c.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // Embedding: cls row then patch rows, plus positions.
    Tensor x({n_tok, d});
    {
        Tensor patches = linear(patchify(c, image), w.patch_w, w.patch_b);
        for (std::int64_t j = 0; j < d; ++j) x.at(0, j) = w.cls_token.data[static_cast<std::size_t>(j)] + w.pos_embed.at(0, j);
        for (std::int64_t t = 0; t < c.tokens; ++t)
            for (std::int64_t j = 0; j < d; ++j) x.at(t + 1, j) = patches.at(t, j) + w.pos_embed.at(t + 1, j);
    }

    RunTrace trace;
    trace.layers.resize(static_cast<std::size_t>(c.layers));
    trace.cls_embed.assign(x.row(0).begin(), x.row(0).end());
    if (capture.residuals) trace.embed_in = x;

    std::vector<double> acc(static_cast<std::size_t>(dh));
    const auto udh = static_cast<std::size_t>(dh);
    std::vector<float> logits(static_cast<std::size_t>(n_tok));
    for (int l = 0; l < c.layers; ++l) {
        const BlockWeights& b = w.blocks[static_cast<std::size_t>(l)];
        LayerTrace& lt = trace.layers[static_cast<std::size_t>(l)];

        Tensor h = layer_norm(x, b.ln1_w, b.ln1_b);
        Tensor q = linear(h, b.q_w, b.q_b);
        Tensor k = linear(h, b.k_w, b.k_b);
        Tensor v = linear(h, b.v_w, b.v_b);

        if (capture.attention) lt.attention = Tensor({c.heads, n_tok, n_tok});
        if (capture.cls_attention) lt.cls_attention = Tensor({c.heads, n_tok});

        Tensor z({n_tok, d});
        for (int i = 0; i < c.heads; ++i) {
            const HeadId hid{l, i};
            const std::int64_t off = static_cast<std::int64_t>(i) * dh;
            const AlphaOverride* ov = nullptr;
            for (const auto& a : iv.alpha)
                if (a.head == hid) ov = &a;

            for (std::int64_t r = 0; r < n_tok; ++r) {
                const float* qr = q.row(r).data() + off;
                for (std::int64_t j = 0; j < n_tok; ++j) {
                    const float* kj = k.row(j).data() + off;
                    logits[static_cast<std::size_t>(j)] = static_cast<float>(dot(qr, kj, udh) * scale);
                }
                softmax_inplace(logits, r);
                if (r == 0 && ov) logits = alpha_pattern(logits, ov->alpha);

                if (capture.attention)
                    std::copy(logits.begin(), logits.end(),
                              lt.attention.data.begin() + static_cast<std::ptrdiff_t>((i * n_tok + r) * n_tok));
                if (r == 0 && capture.cls_attention)
                    std::copy(logits.begin(), logits.end(), lt.cls_attention.row(i).begin());

                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::int64_t j = 0; j < n_tok; ++j) {
                    const double a = logits[static_cast<std::size_t>(j)];
                    const float* vj = v.row(j).data() + off;
                    for (int u = 0; u < dh; ++u) acc[static_cast<std::size_t>(u)] += a * vj[u];
                }
                float* zr = z.row(r).data() + off;
                for (int u = 0; u < dh; ++u) zr[u] = static_cast<float>(acc[static_cast<std::size_t>(u)]);
            }
            if (iv.ablate.count(hid)) std::fill_n(z.row(0).data() + off, dh, 0.0f);
        }

        if (capture.cls_contrib) {
            lt.cls_contrib = Tensor({c.heads, d});
            for (int i = 0; i < c.heads; ++i) {
                const std::int64_t off = static_cast<std::int64_t>(i) * dh;
                const float* zr = z.row(0).data() + off;
                for (std::int64_t o = 0; o < d; ++o) {
                    const float* wr = b.out_w.row(o).data() + off;
                    lt.cls_contrib.at(i, o) = static_cast<float>(dot(wr, zr, udh));
                }
            }
        }

        Tensor attn_out = linear(z, b.out_w, b.out_b);
        for (std::size_t u = 0; u < x.data.size(); ++u) x.data[u] += attn_out.data[u];
        check_finite(x, "residual after attention in layer " + std::to_string(l));
        lt.cls_post_attn.assign(x.row(0).begin(), x.row(0).end());
        if (capture.residuals) lt.residual_post_attn = x;

        Tensor m = linear(gelu(linear(layer_norm(x, b.ln2_w, b.ln2_b), b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
        for (std::size_t u = 0; u < x.data.size(); ++u) x.data[u] += m.data[u];
        check_finite(x, "residual after MLP in layer " + std::to_string(l));
        lt.cls_post_block.assign(x.row(0).begin(), x.row(0).end());
        if (capture.residuals) lt.residual_post_block = x;
    }

    Tensor cls_row({1, d}, std::vector<float>(x.row(0).begin(), x.row(0).end()));
    Tensor fin = layer_norm(cls_row, w.ln_final_w, w.ln_final_b);
    trace.final_ln = fin.data;
    trace.final_cls_embedding = linear(fin, w.proj).data;
    return trace;
}

std::vector<float> encode(const VitWeights& w, const Tensor& image, const InterventionSpec& iv) {
    return forward(w, image, iv).final_cls_embedding;
}

SpatialPattern spatial_pattern(const RunTrace& trace, HeadId h) {
    if (h.layer < 0 || h.layer >= static_cast<int>(trace.layers.size()))
        throw Error("trace has no layer for head " + h.str());
    const LayerTrace& lt = trace.layers[static_cast<std::size_t>(h.layer)];
    std::span<const float> row;
    if (!lt.cls_attention.empty()) {
        if (h.head >= lt.cls_attention.rows()) throw Error("trace has no head " + h.str());
        row = lt.cls_attention.row(h.head);
    } else if (!lt.attention.empty()) {
        if (h.head >= lt.attention.dim(0)) throw Error("trace has no head " + h.str());
        const auto n = static_cast<std::size_t>(lt.attention.dim(1));
        row = std::span<const float>(lt.attention.data).subspan(static_cast<std::size_t>(h.head) * n * n, n);
    } else {
        throw Error("attention for head " + h.str() + " was not captured");
    }
    SpatialPattern sp;
    sp.a_cls = row[0];
    sp.a_star.assign(row.begin() + 1, row.end());
    return sp;
}

}  // namespace typocirc
