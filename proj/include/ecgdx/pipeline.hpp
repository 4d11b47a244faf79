#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/gbdt.hpp"
#include "ecgdx/splits.hpp"
#include "ecgdx/tabular.hpp"

namespace ecgdx {

struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExplainConfig {
    std::string dataset = "test";    // "test" | "val" | "train" | "all"
    std::size_t max_samples = 0;     // 0 = no cap
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::filesystem::path internal_cohort;
    std::optional<std::filesystem::path> external_cohort;
    std::vector<TargetCode> targets = canonical_targets();
    TrainParams train;
    FoldPlan folds;
    int bootstrap_iterations = 1000;
    double bootstrap_level = 0.95;
    ExplainConfig explain;

    std::string to_json() const;
    static PipelineConfig from_json(const std::string& text);
    static PipelineConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

struct ArtifactRef {
    std::string path;    // relative to the output directory
    std::string digest;  // fnv1a64 of the file bytes
};

struct TargetOutcome {
    TargetCode target;
    bool ok = false;
    std::string error;
    int boosting_rounds = 0;
    int best_round = -1;
    double val_auroc = 0.0;
    double internal_auroc = 0.0;
    double external_auroc = 0.0;
    bool has_external = false;
    std::vector<ArtifactRef> artifacts;
    double seconds = 0.0;
};

struct RunManifest {
    std::string tool_version;
    std::string config_digest;
    std::uint64_t seed = 0;
    std::string internal_cohort;
    std::string external_cohort;
    std::size_t internal_samples = 0;
    std::size_t external_samples = 0;
    std::vector<ArtifactRef> shared_artifacts;  // fold assignment etc.
    std::vector<TargetOutcome> outcomes;
    double total_seconds = 0.0;

    std::string to_json() const;
};

// Walks the whole experiment: ingest -> folds -> per-target train / evaluate
// (internal test fold, full external cohort) / explain. Per-target failures
// are recorded and do not disturb other targets.
// Returns 0 when every target succeeded, 2 on partial failure.
int run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir, int jobs,
                 RunManifest& manifest);

// Verifies that every artifact referenced by the manifest exists and its
// digest matches. Throws PipelineError otherwise.
void verify_manifest(const RunManifest& manifest, const std::filesystem::path& out_dir);

}  // namespace ecgdx
