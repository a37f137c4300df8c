#include "typocirc/circuit.hpp"

#include <algorithm>
#include <fstream>

namespace typocirc {

using nlohmann::ordered_json;

InterventionSpec Circuit::ablation() const { return prefix_ablation(heads.size()); }

InterventionSpec Circuit::prefix_ablation(std::size_t k) const {
    InterventionSpec iv;
    for (std::size_t i = 0; i < std::min(k, heads.size()); ++i) iv.ablate.insert(heads[i].head);
    return iv;
}

std::vector<ScoredHead> rank_heads(const ScoreMatrix& scores) {
    if (scores.scores.empty()) throw Error("empty score matrix");
    std::vector<ScoredHead> r;
    for (int l = 0; l < scores.layers; ++l)
        for (int h = 0; h < scores.heads; ++h) r.push_back({{l, h}, scores.at({l, h})});
    std::stable_sort(r.begin(), r.end(), [](const ScoredHead& a, const ScoredHead& b) { return a.score > b.score; });
    return r;
}

Circuit build_circuit(const VitWeights& w, const ScoreMatrix& scores, const Dataset& control,
                      const ClassPrototypes& prototypes, double epsilon) {
    if (!(epsilon > 0.0)) throw Error("epsilon must be positive");
    if (control.size() == 0) throw Error("control set is empty");
    if (scores.layers != w.config.layers || scores.heads != w.config.heads)
        throw Error("score matrix shape " + std::to_string(scores.layers) + "x" + std::to_string(scores.heads) +
                    " does not match the model");

    Circuit c;
    c.epsilon = epsilon;
    c.model_hash = w.digest();
    c.control_acc_base = zero_shot_classify(w, InterventionSpec{}, control, prototypes).acc_image;
    c.control_acc_final = c.control_acc_base;

    InterventionSpec iv;
    for (const auto& cand : rank_heads(scores)) {
        iv.ablate.insert(cand.head);
        const double acc = zero_shot_classify(w, iv, control, prototypes).acc_image;
        const double delta = c.control_acc_base - acc;
        const bool keep = delta < epsilon;
        c.steps.push_back({cand.head, cand.score, acc, delta, keep});
        if (!keep) {
            iv.ablate.erase(cand.head);
            break;
        }
        c.heads.push_back(cand);
        c.control_acc_final = acc;
    }
    return c;
}

std::vector<double> default_alpha_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
    return g;
}

AlphaRow summarize_zero_shot(const ZeroShotResult& r, const DatasetManifest& m) {
    AlphaRow row;
    double p_img = 0.0, p_typo = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& e = m.entries[i];
        const auto probs = r.probs.row(static_cast<std::int64_t>(i));
        p_img += probs[static_cast<std::size_t>(e.y_image)];
        if (e.y_typo) {
            if (*e.y_typo >= static_cast<int>(probs.size())) throw Error("y_typo outside the prototype classes");
            p_typo += probs[static_cast<std::size_t>(*e.y_typo)];
        }
    }
    row.mean_p_image = m.size() ? p_img / static_cast<double>(m.size()) : 0.0;
    row.mean_p_typo = r.n_typo ? p_typo / r.n_typo : 0.0;
    row.acc_image = r.acc_image;
    row.acc_typo = r.acc_typo;
    return row;
}

std::vector<AlphaRow> alpha_sweep(const VitWeights& w, const Circuit& circuit, const Dataset& ds,
                                  const ClassPrototypes& prototypes, std::span<const double> grid) {
    if (circuit.heads.empty()) throw Error("alpha sweep needs a non-empty circuit");
    std::vector<AlphaRow> rows;
    for (double a : grid) {
        if (!(a >= 0.0 && a <= 1.0)) throw Error("alpha " + std::to_string(a) + " is outside [0, 1]");
        InterventionSpec iv;
        for (const auto& h : circuit.heads) iv.alpha.push_back({h.head, a});
        AlphaRow row = summarize_zero_shot(zero_shot_classify(w, iv, ds, prototypes), ds.manifest);
        row.alpha = a;
        rows.push_back(row);
    }
    return rows;
}

ordered_json circuit_to_json(const Circuit& c, bool with_steps) {
    ordered_json j;
    j["model_hash"] = c.model_hash;
    j["epsilon"] = c.epsilon;
    j["heads"] = ordered_json::array();
    for (const auto& h : c.heads) j["heads"].push_back({{"layer", h.head.layer}, {"head", h.head.head}, {"score", h.score}});
    j["control_acc_base"] = c.control_acc_base;
    j["control_acc_final"] = c.control_acc_final;
    if (with_steps) {
        j["steps"] = ordered_json::array();
        for (const auto& s : c.steps)
            j["steps"].push_back({{"layer", s.head.layer},
                                  {"head", s.head.head},
                                  {"score", s.score},
                                  {"control_acc", s.control_acc},
                                  {"delta", s.delta},
                                  {"accepted", s.accepted}});
    }
    return j;
}

Circuit circuit_from_json(const ordered_json& j, const ModelConfig& cfg, const std::string& expected_hash) {
    Circuit c;
    try {
        c.model_hash = j.value("model_hash", std::string{});
        c.epsilon = j.value("epsilon", 0.0);
        c.control_acc_base = j.value("control_acc_base", 0.0);
        c.control_acc_final = j.value("control_acc_final", 0.0);
        if (j.contains("heads"))
            for (const auto& h : j.at("heads"))
                c.heads.push_back({{h.at("layer").get<int>(), h.at("head").get<int>()}, h.value("score", 0.0)});
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed circuit sidecar: ") + e.what());
    }
    for (const auto& h : c.heads)
        if (h.head.layer < 0 || h.head.layer >= cfg.layers || h.head.head < 0 || h.head.head >= cfg.heads)
            throw Error("circuit references invalid head " + h.head.str() + " for a model with " +
                        std::to_string(cfg.layers) + " layers and " + std::to_string(cfg.heads) + " heads");
    if (!c.model_hash.empty() && !expected_hash.empty() && c.model_hash != expected_hash)
        throw Error("circuit model_hash " + c.model_hash + " does not match the loaded weights (" + expected_hash + ")");
    return c;
}

Circuit read_circuit(const std::filesystem::path& path, const VitWeights& w) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open circuit file " + path.string());
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed circuit file " + path.string() + ": " + e.what());
    }
    return circuit_from_json(j, w.config, w.digest());
}

void write_circuit(const std::filesystem::path& path, const Circuit& c, bool with_steps) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write circuit file " + path.string());
    out << circuit_to_json(c, with_steps).dump(2) << '\n';
    if (!out) throw Error("failed while writing circuit file " + path.string());
}

std::filesystem::path sidecar_path(const std::filesystem::path& weights_path) {
    auto p = weights_path;
    p.replace_extension(".circuit.json");
    return p;
}

void export_dyslexic(const VitWeights& w, const Circuit& circuit, const std::filesystem::path& weights_path) {
    InterventionSpec iv = circuit.ablation();
    iv.validate(w.config);
    Circuit c = circuit;
    c.model_hash = w.digest();
    save_weights(weights_path, w);
    write_circuit(sidecar_path(weights_path), c);
}

DyslexicModel load_dyslexic(const std::filesystem::path& weights_path) {
    DyslexicModel m{load_weights(weights_path), {}};
    const auto side = sidecar_path(weights_path);
    if (std::filesystem::exists(side)) m.circuit = read_circuit(side, m.weights);
    return m;
}

}  // namespace typocirc
