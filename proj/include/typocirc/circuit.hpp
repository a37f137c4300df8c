#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "typocirc/datakit.hpp"
#include "typocirc/typo_score.hpp"
#include "typocirc/vit.hpp"

namespace typocirc {

struct ScoredHead {
    HeadId head;
    double score = 0.0;
};

/// One iteration of the greedy loop.
struct CircuitStep {
    HeadId head;
    double score = 0.0;
    double control_acc = 0.0;  // accuracy with the tentative circuit
    double delta = 0.0;        // control_acc_base - control_acc
    bool accepted = false;
};

struct Circuit {
    std::vector<ScoredHead> heads;  // descending score
    double epsilon = 0.0;
    double control_acc_base = 0.0;
    double control_acc_final = 0.0;
    std::string model_hash;
    std::vector<CircuitStep> steps;  // audit trail, not part of the sidecar

    InterventionSpec ablation() const;
    /// Ablation intervention covering the first k members.
    InterventionSpec prefix_ablation(std::size_t k) const;
};

/// All heads by descending score; equal scores in (layer, head) order.
std::vector<ScoredHead> rank_heads(const ScoreMatrix& scores);

/// Greedy construction: walk heads by descending score, tentatively add each
/// to the circuit, and keep it while the control-set accuracy drop of the
/// cumulative circuit stays below epsilon; the first head that breaks the
/// guard is dropped and the search stops.
Circuit build_circuit(const VitWeights& w, const ScoreMatrix& scores, const Dataset& control,
                      const ClassPrototypes& prototypes, double epsilon);

struct AlphaRow {
    double alpha = 0.0;
    double mean_p_image = 0.0;
    double mean_p_typo = 0.0;  // over samples carrying y_typo
    double acc_image = 0.0;
    double acc_typo = 0.0;
};

/// {0.0, 0.1, ..., 1.0}
std::vector<double> default_alpha_grid();

/// Zero-shot metrics with the cls attention of every circuit head forced to
/// alpha, one row per grid value in the order given.
std::vector<AlphaRow> alpha_sweep(const VitWeights& w, const Circuit& circuit, const Dataset& ds,
                                  const ClassPrototypes& prototypes, std::span<const double> grid);

/// Metrics of a zero-shot result reduced to one row (alpha left at 0).
AlphaRow summarize_zero_shot(const ZeroShotResult& r, const DatasetManifest& m);

/// Sidecar JSON: {model_hash, epsilon, heads: [{layer, head, score}],
/// control_acc_base, control_acc_final}.
nlohmann::ordered_json circuit_to_json(const Circuit& c, bool with_steps = false);

/// Parses a sidecar. Heads are checked against cfg; a non-empty model_hash
/// must match expected_hash when that is non-empty.
Circuit circuit_from_json(const nlohmann::ordered_json& j, const ModelConfig& cfg, const std::string& expected_hash = {});

Circuit read_circuit(const std::filesystem::path& path, const VitWeights& w);
void write_circuit(const std::filesystem::path& path, const Circuit& c, bool with_steps = false);

/// "<dir>/<stem>.circuit.json" next to a weight file.
std::filesystem::path sidecar_path(const std::filesystem::path& weights_path);

/// Writes the weights plus the circuit sidecar. Ablation acts on
/// activations, so the dyslexic model is the original weights with the
/// sidecar applied at load time.
void export_dyslexic(const VitWeights& w, const Circuit& circuit, const std::filesystem::path& weights_path);

struct DyslexicModel {
    VitWeights weights;
    Circuit circuit;  // empty when no sidecar exists
    InterventionSpec ablation() const { return circuit.ablation(); }
};

/// Loads weights and, when present, their sidecar.
DyslexicModel load_dyslexic(const std::filesystem::path& weights_path);

}  // namespace typocirc
