#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/ingest.hpp"
#include "ecgdx/tabular.hpp"

namespace ecgdx {

struct SynthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Two-parameter logistic marginal pinned by its median and IQR, truncated to
// the schema's plausible range at draw time.
struct MarginalSpec {
    double median = 0.0;
    double iqr = 1.0;

    double scale() const;  // iqr / (2 ln 3)
};

// One planted disease model. The logit applies to standardized features
// (continuous: (x - median)/scale, sex: centered by the male fraction).
// Targets with a parent are conditional-on-parent models: a sample can only
// be positive when its parent is, which makes prefix-consistent labels by
// construction. Intercepts are solved during calibration so realized
// prevalence matches `prevalence`.
struct PlantedTarget {
    TargetCode code;
    int parent = -1;  // index into SynthSpec::targets, -1 for a root
    double prevalence = 0.01;
    std::array<double, kNumFeatures> coef{};  // per standardized feature
};

struct SynthSpec {
    std::size_t n_samples = 100000;
    std::uint64_t seed = 20260801;
    std::string id_prefix = "syn";
    double male_fraction = 0.5;
    std::array<MarginalSpec, kNumEcgFeatures> ecg{};
    MarginalSpec age{60.0, 25.0};
    std::array<double, kNumEcgFeatures> missing_rate{};  // in [0, 1)
    std::vector<PlantedTarget> targets;                  // parents precede children

    // Admission-cohort profile: wide QTc / RR spread, older median age,
    // higher target prevalences.
    static SynthSpec internal_default();
    // External-validation profile: tighter marginals, younger median age,
    // much lower prevalences.
    static SynthSpec external_default();

    std::string to_json() const;
    static SynthSpec from_json(const std::string& text);
    static SynthSpec load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

// Validates structure and solves per-target intercepts on a deterministic
// calibration draw. Throws SynthError when a child's prevalence exceeds its
// parent's (infeasible hierarchy) or targets are not in parent-first order.
struct CalibratedSynth {
    SynthSpec spec;
    std::vector<double> intercepts;
};
CalibratedSynth calibrate(const SynthSpec& spec);

struct SynthCohort {
    std::vector<RawRecord> records;           // ready for write_cohort_csv
    std::vector<std::uint8_t> true_labels;    // row-major samples x targets
    std::vector<double> true_scores;          // row-major; chain log-probability
    std::vector<TargetCode> target_codes;

    std::uint8_t label(std::size_t i, std::size_t t) const {
        return true_labels[i * target_codes.size() + t];
    }
    double score(std::size_t i, std::size_t t) const {
        return true_scores[i * target_codes.size() + t];
    }
};

// Deterministic given spec.seed; generation runs block-wise with per-block
// generator streams, so output is identical for any block schedule.
SynthCohort generate_records(const SynthSpec& spec);

// generate + write the standard cohort file.
void generate(const SynthSpec& spec, const std::filesystem::path& out_path);

// AUROC of the true generator logit on a fresh draw of n samples: the ceiling
// any learned model should approach but not systematically exceed.
double oracle_bayes_auroc(const SynthSpec& spec, std::size_t n, const std::string& target_code,
                          std::optional<std::uint64_t> draw_seed = std::nullopt);

}  // namespace ecgdx
