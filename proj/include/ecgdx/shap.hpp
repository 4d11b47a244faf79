#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/gbdt.hpp"
#include "ecgdx/tabular.hpp"

namespace ecgdx {

struct ModelIntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Attribution {
    std::vector<double> phi;  // one entry per feature, margin units
    double base_value = 0.0;  // base_score + cover-weighted ensemble expectation
};

// Exact path-dependent attributions: absent features are marginalized by
// node cover ratios; a missing value in x routes by the default direction
// and is attributed like a present one. phi sums with base_value to
// predict_margin(x). Throws ModelIntegrityError on non-positive covers.
Attribution tree_shap(const TreeEnsemble& e, std::span<const double> x);

// Cover-weighted expectation of one tree (the value of the empty coalition).
double tree_expectation(const Tree& t);

// Exact Shapley values by full subset enumeration; test oracle for
// tree_shap. Refuses more than 15 features.
std::vector<double> brute_force_shap(const TreeEnsemble& e, std::span<const double> x);

struct AttributionMatrix {
    double base_value = 0.0;
    std::size_t rows = 0;
    int cols = 0;
    std::vector<double> values;  // row-major, samples x features
    std::uint64_t schema_fingerprint = 0;
    TargetCode target;

    double at(std::size_t r, int c) const {
        return values[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }
};

// Per-sample attributions for every row of X; parallel across samples.
AttributionMatrix attribute_matrix(const TreeEnsemble& e, const FeatureMatrix& X,
                                   const TargetCode& target, int jobs = 1);

struct ShapSummary {
    std::vector<int> ranking;      // feature indices by mean |phi| desc, ties by index
    std::vector<double> mean_abs;  // per feature
    std::vector<int> rank_of;      // inverse of ranking: rank_of[feature] in [0, cols)
};

ShapSummary shap_summary(const AttributionMatrix& m);

struct BeeswarmRow {
    std::size_t sample = 0;
    int feature = -1;
    int rank = 0;  // 1-based rank by mean |phi|
    double shap_value = 0.0;
    std::optional<double> feature_value;
    std::optional<double> feature_percentile;  // mid-rank percentile in [0, 100]
};

// One row per (sample, feature); percentile is computed within the cohort's
// present values of that feature.
std::vector<BeeswarmRow> beeswarm_rows(const AttributionMatrix& m, const FeatureMatrix& X);

void write_beeswarm_csv(std::ostream& out, const AttributionMatrix& m, const FeatureMatrix& X,
                        const FeatureSchema& schema, std::span<const std::string> record_ids);
void write_beeswarm_csv(const std::filesystem::path& path, const AttributionMatrix& m,
                        const FeatureMatrix& X, const FeatureSchema& schema,
                        std::span<const std::string> record_ids);

}  // namespace ecgdx
