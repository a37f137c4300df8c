// typocirc command-line driver.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "typocirc/analysis.hpp"
#include "typocirc/circuit.hpp"
#include "typocirc/datakit.hpp"
#include "typocirc/parallel.hpp"
#include "typocirc/probe.hpp"
#include "typocirc/typo_score.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace typocirc;

namespace {

struct Common {
    std::string out;
    unsigned threads = 0;
    std::uint64_t seed = 0;
};

std::string default_out_dir() {
    const char* env = std::getenv("TYPOCIRC_OUT");
    return env && *env ? env : "typocirc_out";
}

void add_common(CLI::App* cmd, Common& c, bool with_seed = true) {
    cmd->add_option("--out", c.out, "Output directory (default: $TYPOCIRC_OUT or ./typocirc_out)");
    cmd->add_option("--threads", c.threads, "Worker threads (default: all cores)");
    if (with_seed) cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

HeadId parse_head(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw CLI::ValidationError("head", "expected LAYER:HEAD, got '" + s + "'");
    try {
        std::size_t a = 0, b = 0;
        const int l = std::stoi(s.substr(0, colon), &a);
        const int h = std::stoi(s.substr(colon + 1), &b);
        if (a != colon || b != s.size() - colon - 1) throw std::invalid_argument(s);
        return {l, h};
    } catch (const std::logic_error&) {
        throw CLI::ValidationError("head", "expected LAYER:HEAD, got '" + s + "'");
    }
}

fs::path out_dir(const Common& c) {
    fs::path p = c.out.empty() ? default_out_dir() : c.out;
    fs::create_directories(p);
    return p;
}

void write_json(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void write_csv(const fs::path& path, const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
        out << '\n';
    }
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ordered_json metrics_json(const AlphaRow& r) {
    return {{"acc_image", r.acc_image}, {"acc_typo", r.acc_typo}, {"mean_p_image", r.mean_p_image}, {"mean_p_typo", r.mean_p_typo}};
}

ordered_json heads_json(const Circuit& c) {
    ordered_json a = ordered_json::array();
    for (const auto& h : c.heads) a.push_back({{"layer", h.head.layer}, {"head", h.head.head}, {"score", h.score}});
    return a;
}

/// Circuit from an explicit file, else the weights' sidecar, else empty.
Circuit resolve_circuit(const std::string& circuit_path, const std::string& weights_path, const VitWeights& w) {
    if (!circuit_path.empty()) return read_circuit(circuit_path, w);
    const auto side = sidecar_path(weights_path);
    if (fs::exists(side)) return read_circuit(side, w);
    return {};
}

// ---- commands -------------------------------------------------------------

struct GenData {
    Common common;
    SyntheticConfig cfg;
    std::string region = "fixed";

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("gen-data", "Render a synthetic clean/typographic dataset pair");
        add_common(cmd, common);
        cmd->add_option("--n", cfg.n, "Samples per set")->capture_default_str();
        cmd->add_option("--classes", cfg.classes, "Object classes")->capture_default_str();
        cmd->add_option("--typo-classes", cfg.typo_classes, "Typographic classes")->capture_default_str();
        cmd->add_option("--image-size", cfg.image_size, "Image side in pixels")->capture_default_str();
        cmd->add_option("--patch-size", cfg.patch_size, "Patch side in pixels (power of two)")->capture_default_str();
        cmd->add_option("--region", region, "Overlay placement")->check(CLI::IsMember({"fixed", "random"}))->capture_default_str();
        cmd->add_option("--region-rows", cfg.region_rows, "Overlay height in tokens")->capture_default_str();
        cmd->add_option("--region-cols", cfg.region_cols, "Overlay width in tokens (0: full width / half grid)")->capture_default_str();
        cmd->add_option("--noise", cfg.noise, "Pixel noise standard deviation")->capture_default_str();
        cmd->add_option("--shard-size", cfg.shard_size, "Images per tensor shard")->capture_default_str();
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        cfg.seed = common.seed;
        cfg.region = region == "random" ? RegionMode::Random : RegionMode::FixedBottom;
        const auto dir = out_dir(common);
        const auto ds = gen_synthetic_dataset(cfg, dir);
        ordered_json j{{"n", cfg.n},
                       {"classes", cfg.classes},
                       {"typo_classes", cfg.typo_classes},
                       {"image_size", cfg.image_size},
                       {"patch_size", cfg.patch_size},
                       {"tokens", ds.typo.tokens},
                       {"region", region},
                       {"region_rows", cfg.region_rows},
                       {"region_cols", cfg.region_cols},
                       {"noise", cfg.noise},
                       {"seed", cfg.seed},
                       {"clean_manifest", "clean.jsonl"},
                       {"typo_manifest", "typo.jsonl"}};
        write_json(dir / "gen_data.json", j);
        std::printf("wrote %d clean and %d typographic samples to %s\n", cfg.n, cfg.n, dir.string().c_str());
    }
};

struct GenPlanted {
    Common common;
    PlantedConfig cfg;
    std::vector<std::string> planted{"1:2"};
    std::string object_head = "0:0";
    int region_rows = 2;

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("gen-planted", "Build a model with a known typographic circuit");
        add_common(cmd, common, false);
        cmd->add_option("--layers", cfg.layers)->capture_default_str();
        cmd->add_option("--heads", cfg.heads, "Heads per layer")->capture_default_str();
        cmd->add_option("--width", cfg.width, "Residual width")->capture_default_str();
        cmd->add_option("--grid", cfg.grid, "Token grid side")->capture_default_str();
        cmd->add_option("--patch-size", cfg.patch_size)->capture_default_str();
        cmd->add_option("--classes", cfg.classes)->capture_default_str();
        cmd->add_option("--planted", planted, "Planted head(s) as LAYER:HEAD")->capture_default_str();
        cmd->add_option("--object-head", object_head, "Head carrying object evidence, LAYER:HEAD")->capture_default_str();
        cmd->add_option("--region-rows", region_rows,
                        "Bottom rows given a positional bonus in the planted heads (0: content only)")
            ->capture_default_str();
        cmd->add_option("--logit-scale", cfg.logit_scale)->capture_default_str();
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        cfg.object_head = parse_head(object_head);
        cfg.planted.clear();
        for (const auto& s : planted)
            cfg.planted.push_back({parse_head(s), region_rows > 0 ? fixed_bottom_mask(cfg.grid, region_rows) : RegionMask{}});
        const auto dir = out_dir(common);
        const auto m = gen_planted_model(cfg);
        save_weights(dir / "planted.safetensors", m.weights);
        save_prototypes(dir / "prototypes.safetensors", m.prototypes);
        ordered_json heads = ordered_json::array();
        for (const auto& p : cfg.planted) heads.push_back({{"layer", p.head.layer}, {"head", p.head.head}});
        ordered_json j{{"weights", "planted.safetensors"},
                       {"prototypes", "prototypes.safetensors"},
                       {"model_hash", m.weights.digest()},
                       {"layers", cfg.layers},
                       {"heads", cfg.heads},
                       {"width", cfg.width},
                       {"grid", cfg.grid},
                       {"patch_size", cfg.patch_size},
                       {"classes", cfg.classes},
                       {"planted", heads},
                       {"object_head", {{"layer", cfg.object_head.layer}, {"head", cfg.object_head.head}}},
                       {"region_rows", region_rows}};
        write_json(dir / "gen_planted.json", j);
        std::printf("wrote planted model (%dx%d heads, planted %s) to %s\n", cfg.layers, cfg.heads,
                    planted.front().c_str(), dir.string().c_str());
    }
};

struct Score {
    Common common;
    std::string weights, manifest;

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("score", "Typographic attention score of every head");
        add_common(cmd, common, false);
        cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
        cmd->add_option("--manifest", manifest, "Typographic manifest (every sample masked)")->required()->check(CLI::ExistingFile);
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        const auto w = load_weights(weights);
        const auto ds = load_dataset(manifest);
        const auto sm = typo_attention_score(w, ds);
        std::vector<RegionMask> masks;
        for (const auto& e : ds.manifest.entries) masks.push_back(e.mask);
        auto j = sm.to_json();
        j["expected_uniform"] = expected_uniform_score(masks);
        j["ranking"] = ordered_json::array();
        std::vector<std::vector<std::string>> rows;
        for (const auto& h : rank_heads(sm)) {
            j["ranking"].push_back({{"layer", h.head.layer}, {"head", h.head.head}, {"score", h.score}});
            rows.push_back({std::to_string(h.head.layer), std::to_string(h.head.head), num(h.score)});
        }
        const auto dir = out_dir(common);
        write_json(dir / "score_matrix.json", j);
        write_csv(dir / "score_matrix.csv", {"layer", "head", "score"}, rows);
        const auto top = rank_heads(sm).front();
        std::printf("%zu heads scored on %zu samples; mean T %.4f (uniform %.4f); top head %s T %.4f\n", sm.scores.size(),
                    ds.size(), sm.mean, j["expected_uniform"].get<double>(), top.head.str().c_str(), top.score);
    }
};

struct Probe {
    Common common;
    std::string weights, manifest, target = "typo_label", scores;
    ProbeConfig pc;

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("probe", "Linear probe accuracy at every capture point");
        add_common(cmd, common);
        cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
        cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
        cmd->add_option("--target", target)->check(CLI::IsMember({"image_label", "typo_label"}))->capture_default_str();
        cmd->add_option("--epochs", pc.epochs)->capture_default_str();
        cmd->add_option("--lr", pc.lr)->capture_default_str();
        cmd->add_option("--l2", pc.l2)->capture_default_str();
        cmd->add_option("--scores", scores, "score_matrix.json to overlay per-layer max T")->check(CLI::ExistingFile);
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        pc.seed = common.seed;
        const auto w = load_weights(weights);
        const auto ds = load_dataset(manifest);
        std::optional<ScoreMatrix> sm;
        if (!scores.empty()) {
            std::ifstream in(scores);
            try {
                sm = ScoreMatrix::from_json(ordered_json::parse(in));
            } catch (const nlohmann::json::exception& e) {
                throw Error("malformed score matrix " + scores + ": " + e.what());
            }
            if (sm->layers != w.config.layers) throw Error("score matrix layer count does not match the model");
        }
        const auto curve = probe_curve(w, ds, parse_probe_target(target), pc);
        ordered_json j{{"target", target}, {"epochs", pc.epochs}, {"lr", pc.lr}, {"l2", pc.l2}, {"seed", pc.seed}};
        j["points"] = ordered_json::array();
        std::vector<std::vector<std::string>> rows;
        for (const auto& c : curve) {
            ordered_json p{{"point", c.point.str()}, {"accuracy", c.accuracy}, {"converged", c.converged}};
            std::string overlay;
            if (sm && c.point.layer >= 0) {
                const double t = sm->per_layer_max[static_cast<std::size_t>(c.point.layer)];
                p["max_typo_score"] = t;
                overlay = num(t);
            }
            j["points"].push_back(p);
            rows.push_back({c.point.str(), num(c.accuracy), c.converged ? "true" : "false", overlay});
        }
        const auto dir = out_dir(common);
        write_json(dir / "probe_curve.json", j);
        write_csv(dir / "probe_curve.csv", {"point", "accuracy", "converged", "max_typo_score"}, rows);
        for (const auto& c : curve) std::printf("%-14s %.4f\n", c.point.str().c_str(), c.accuracy);
    }
};

struct BuildCircuit {
    Common common;
    std::string weights, scores, control, prototypes;
    double epsilon = 0.01, fraction = 0.05;

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("build-circuit", "Greedy typographic circuit search");
        add_common(cmd, common);
        cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
        cmd->add_option("--scores", scores, "score_matrix.json from the score command")->required()->check(CLI::ExistingFile);
        cmd->add_option("--control", control, "Clean manifest; a class-balanced subset is the control set")
            ->required()
            ->check(CLI::ExistingFile);
        cmd->add_option("--prototypes", prototypes)->required()->check(CLI::ExistingFile);
        cmd->add_option("--epsilon", epsilon, "Maximum control accuracy drop")->capture_default_str();
        cmd->add_option("--control-fraction", fraction, "Share of each class used as control")->capture_default_str();
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        const auto w = load_weights(weights);
        std::ifstream in(scores);
        ScoreMatrix sm;
        try {
            sm = ScoreMatrix::from_json(ordered_json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw Error("malformed score matrix " + scores + ": " + e.what());
        }
        const auto ctl = control_split(load_dataset(control), fraction, common.seed);
        const auto c = build_circuit(w, sm, ctl, load_prototypes(prototypes), epsilon);
        auto j = circuit_to_json(c, true);
        j["control_size"] = ctl.size();
        j["control_drop"] = c.control_acc_base - c.control_acc_final;
        std::vector<std::vector<std::string>> rows;
        for (const auto& s : c.steps)
            rows.push_back({std::to_string(s.head.layer), std::to_string(s.head.head), num(s.score), num(s.control_acc),
                            num(s.delta), s.accepted ? "true" : "false"});
        const auto dir = out_dir(common);
        write_json(dir / "circuit.json", j);
        write_csv(dir / "circuit_steps.csv", {"layer", "head", "score", "control_acc", "delta", "accepted"}, rows);
        std::printf("circuit of %zu heads; control accuracy %.4f -> %.4f (epsilon %g, %zu control samples)\n",
                    c.heads.size(), c.control_acc_base, c.control_acc_final, epsilon, ctl.size());
        for (const auto& h : c.heads) std::printf("  %s T %.4f\n", h.head.str().c_str(), h.score);
    }
};

struct AblateEval {
    Common common;
    std::string weights, prototypes, circuit;
    std::vector<std::string> manifests;

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("ablate-eval", "Zero-shot accuracy with and without the circuit ablated");
        add_common(cmd, common, false);
        cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
        cmd->add_option("--prototypes", prototypes)->required()->check(CLI::ExistingFile);
        cmd->add_option("--manifest", manifests, "One or more manifests")->required()->check(CLI::ExistingFile);
        cmd->add_option("--circuit", circuit, "Circuit JSON (default: the weights' sidecar, else empty)")
            ->check(CLI::ExistingFile);
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        const auto w = load_weights(weights);
        const auto protos = load_prototypes(prototypes);
        const auto c = resolve_circuit(circuit, weights, w);
        const auto iv = c.ablation();
        ordered_json j{{"circuit", heads_json(c)}, {"sets", ordered_json::array()}};
        std::vector<std::vector<std::string>> rows;
        for (const auto& path : manifests) {
            const auto ds = load_dataset(path);
            const auto base = summarize_zero_shot(zero_shot_classify(w, {}, ds, protos), ds.manifest);
            const auto abl = summarize_zero_shot(zero_shot_classify(w, iv, ds, protos), ds.manifest);
            const std::string name = fs::path(path).filename().string();
            j["sets"].push_back({{"manifest", name},
                                 {"n", ds.size()},
                                 {"base", metrics_json(base)},
                                 {"ablated", metrics_json(abl)},
                                 {"delta_acc_image", abl.acc_image - base.acc_image}});
            for (const auto& [label, r] : {std::pair{"base", base}, std::pair{"ablated", abl}})
                rows.push_back({name, label, num(r.acc_image), num(r.acc_typo), num(r.mean_p_image), num(r.mean_p_typo)});
            std::printf("%-20s acc_image %.4f -> %.4f   acc_typo %.4f -> %.4f\n", name.c_str(), base.acc_image,
                        abl.acc_image, base.acc_typo, abl.acc_typo);
        }
        const auto dir = out_dir(common);
        write_json(dir / "ablate_eval.json", j);
        write_csv(dir / "ablate_eval.csv", {"manifest", "model", "acc_image", "acc_typo", "mean_p_image", "mean_p_typo"}, rows);
    }
};

struct AlphaSweep {
    Common common;
    std::string weights, prototypes, manifest, circuit;
    std::vector<double> alphas = default_alpha_grid();

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("alpha-sweep", "Zero-shot metrics with circuit heads forced to cls attention alpha");
        add_common(cmd, common, false);
        cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
        cmd->add_option("--prototypes", prototypes)->required()->check(CLI::ExistingFile);
        cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
        cmd->add_option("--circuit", circuit, "Circuit JSON (default: the weights' sidecar)")->check(CLI::ExistingFile);
        cmd->add_option("--alphas", alphas, "Alpha grid")->delimiter(',')->capture_default_str();
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        const auto w = load_weights(weights);
        const auto c = resolve_circuit(circuit, weights, w);
        const auto ds = load_dataset(manifest);
        const auto rows = alpha_sweep(w, c, ds, load_prototypes(prototypes), alphas);
        ordered_json j{{"circuit", heads_json(c)}, {"rows", ordered_json::array()}};
        std::vector<std::vector<std::string>> csv;
        for (const auto& r : rows) {
            auto m = metrics_json(r);
            ordered_json row{{"alpha", r.alpha}};
            row.update(m);
            j["rows"].push_back(row);
            csv.push_back({num(r.alpha), num(r.mean_p_image), num(r.mean_p_typo), num(r.acc_image), num(r.acc_typo)});
            std::printf("alpha %.2f  p(y_image) %.4f  p(y_typo) %.4f\n", r.alpha, r.mean_p_image, r.mean_p_typo);
        }
        const auto dir = out_dir(common);
        write_json(dir / "alpha_sweep.json", j);
        write_csv(dir / "alpha_sweep.csv", {"alpha", "mean_p_image", "mean_p_typo", "acc_image", "acc_typo"}, csv);
    }
};

struct Id {
    Common common;
    std::string weights, manifest;
    double threshold = 0.95;

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("id", "Intrinsic dimensionality of cls representations per capture point");
        add_common(cmd, common, false);
        cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
        cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
        cmd->add_option("--threshold", threshold, "Explained variance share")->capture_default_str();
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        const auto curve = id_curve(load_weights(weights), load_dataset(manifest), threshold);
        ordered_json j{{"threshold", threshold}, {"points", ordered_json::array()}};
        std::vector<std::vector<std::string>> rows;
        for (const auto& p : curve) {
            j["points"].push_back({{"point", p.point.str()}, {"id", p.id.id}, {"degenerate", p.id.degenerate}, {"spectrum", p.id.spectrum}});
            rows.push_back({p.point.str(), std::to_string(p.id.id), p.id.degenerate ? "true" : "false"});
            std::printf("%-14s ID %d%s\n", p.point.str().c_str(), p.id.id, p.id.degenerate ? " (degenerate)" : "");
        }
        const auto dir = out_dir(common);
        write_json(dir / "id_curve.json", j);
        write_csv(dir / "id_curve.csv", {"point", "id", "degenerate"}, rows);
    }
};

struct SinkRoc {
    Common common;
    std::string weights, clean, typo, head, circuit;
    bool with_probe = false;
    int epochs = 500;

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("sink-roc", "Clean-vs-typographic separation by a head's spatial attention mass");
        add_common(cmd, common);
        cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
        cmd->add_option("--clean", clean)->required()->check(CLI::ExistingFile);
        cmd->add_option("--typo", typo)->required()->check(CLI::ExistingFile);
        auto* h = cmd->add_option("--head", head, "Head as LAYER:HEAD");
        cmd->add_option("--circuit", circuit, "Use the top head of this circuit")->check(CLI::ExistingFile)->excludes(h);
        cmd->add_flag("--with-probe", with_probe, "Also report a linear-probe AUC on final embeddings");
        cmd->add_option("--epochs", epochs, "Probe epochs")->capture_default_str();
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        const auto w = load_weights(weights);
        HeadId h;
        if (!head.empty()) {
            h = parse_head(head);
        } else {
            const auto c = resolve_circuit(circuit, weights, w);
            if (c.heads.empty()) throw Error("sink-roc needs --head or a non-empty circuit");
            h = c.heads.front().head;
        }
        const auto dc = load_dataset(clean), dt = load_dataset(typo);
        const auto st = sink_norm_stats(w, h, dc, dt);
        std::vector<double> scores = st.clean;
        scores.insert(scores.end(), st.typo.begin(), st.typo.end());
        std::vector<int> labels(st.clean.size(), 0);
        labels.resize(scores.size(), 1);
        const double auc = roc_auc(scores, labels);
        ordered_json j{{"head", {{"layer", h.layer}, {"head", h.head}}},
                       {"clean", to_json(summarize(st.clean))},
                       {"typo", to_json(summarize(st.typo))},
                       {"auc", auc}};
        std::printf("head %s spatial mass: clean median %.4f, typo median %.4f, AUC %.4f\n", h.str().c_str(),
                    summarize(st.clean).median, summarize(st.typo).median, auc);
        if (with_probe) {
            ProbeConfig pc;
            pc.seed = common.seed;
            pc.epochs = epochs;
            const double pa = linear_probe_auc(w, dc, dt, pc);
            j["probe_auc"] = pa;
            std::printf("linear probe AUC %.4f\n", pa);
        }
        std::vector<std::vector<std::string>> rows;
        for (double v : st.clean) rows.push_back({"clean", num(v)});
        for (double v : st.typo) rows.push_back({"typo", num(v)});
        const auto dir = out_dir(common);
        write_json(dir / "sink_roc.json", j);
        write_csv(dir / "sink_norms.csv", {"set", "spatial_mass"}, rows);
    }
};

struct ExportDyslexic {
    Common common;
    std::string weights, circuit, output;

    void add(CLI::App& app, std::function<void()>& run) {
        auto* cmd = app.add_subcommand("export-dyslexic", "Write weights plus a circuit sidecar");
        add_common(cmd, common, false);
        cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
        cmd->add_option("--circuit", circuit)->required()->check(CLI::ExistingFile);
        cmd->add_option("--output", output, "Weight file to write; the sidecar goes next to it")->required();
        cmd->callback([&run, this] { run = [this] { exec(); }; });
    }

    void exec() {
        const auto w = load_weights(weights);
        const auto c = read_circuit(circuit, w);
        export_dyslexic(w, c, output);
        ordered_json j{{"weights", output},
                       {"sidecar", sidecar_path(output).string()},
                       {"model_hash", w.digest()},
                       {"circuit", heads_json(c)}};
        write_json(out_dir(common) / "export_dyslexic.json", j);
        std::printf("wrote %s and %s (%zu heads)\n", output.c_str(), sidecar_path(output).string().c_str(), c.heads.size());
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"typocirc: typographic circuits in ViT encoders"};
    app.require_subcommand(1);
    std::function<void()> run;

    GenData gen_data;
    GenPlanted gen_planted;
    Score score;
    Probe probe;
    BuildCircuit build;
    AblateEval ablate;
    AlphaSweep sweep;
    Id id;
    SinkRoc sink;
    ExportDyslexic exporter;
    gen_data.add(app, run);
    gen_planted.add(app, run);
    score.add(app, run);
    probe.add(app, run);
    build.add(app, run);
    ablate.add(app, run);
    sweep.add(app, run);
    id.add(app, run);
    sink.add(app, run);
    exporter.add(app, run);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const auto* sub = app.get_subcommands().front();
    const Common* common = nullptr;
    for (const auto& [name, c] : std::initializer_list<std::pair<const char*, const Common*>>{
             {"gen-data", &gen_data.common}, {"gen-planted", &gen_planted.common}, {"score", &score.common},
             {"probe", &probe.common}, {"build-circuit", &build.common}, {"ablate-eval", &ablate.common},
             {"alpha-sweep", &sweep.common}, {"id", &id.common}, {"sink-roc", &sink.common},
             {"export-dyslexic", &exporter.common}})
        if (sub->get_name() == name) common = c;

    try {
        set_num_threads(common->threads);
        const std::string started = iso_now();
        run();
        write_json(out_dir(*common) / (sub->get_name() + ".meta.json"),
                   {{"command", sub->get_name()}, {"started", started}, {"finished", iso_now()}, {"threads", num_threads()}});
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "typocirc %s: %s\n", sub->get_name().c_str(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "typocirc %s: error: %s\n", sub->get_name().c_str(), e.what());
        return 1;
    }
    return 0;
}
