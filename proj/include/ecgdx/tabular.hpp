#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ecgdx {

inline constexpr int kNumFeatures = 10;
inline constexpr int kNumEcgFeatures = 8;
inline constexpr int kAgeIndex = 8;
inline constexpr int kSexIndex = 9;

enum class FeatureKind { continuous, binary };
enum class FeatureUnit { milliseconds, degrees, years, dimensionless };

struct FeatureDescriptor {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    FeatureUnit unit = FeatureUnit::dimensionless;
    double range_lo = 0.0;  // plausible range, closed interval
    double range_hi = 0.0;
};

// The canonical 10-feature schema: 5 interval durations (ms), 3 wave axes
// (degrees), age (years), sex (binary, 0 = female, 1 = male).
class FeatureSchema {
public:
    static const FeatureSchema& canonical();

    const std::vector<FeatureDescriptor>& fields() const { return fields_; }
    const FeatureDescriptor& field(int i) const { return fields_[static_cast<std::size_t>(i)]; }
    int size() const { return static_cast<int>(fields_.size()); }
    int index_of(std::string_view name) const;  // -1 if absent
    std::uint64_t fingerprint() const { return fingerprint_; }

private:
    explicit FeatureSchema(std::vector<FeatureDescriptor> fields);
    std::vector<FeatureDescriptor> fields_;
    std::uint64_t fingerprint_ = 0;
};

// One record, aligned to FeatureSchema order. nullopt = missing.
using FeatureVector = std::array<std::optional<double>, kNumFeatures>;

struct TargetCode {
    std::string code;  // normalized ICD-10-CM: uppercase, dot stripped
    std::string description;

    bool operator==(const TargetCode& o) const { return code == o.code; }
};

// The six codes the experiment grid runs over.
const std::vector<TargetCode>& canonical_targets();

struct Violation {
    int feature_index = -1;
    std::string feature;
    std::optional<double> value;  // nullopt when the rule is a missing required field
    std::string rule;
};

// Pure check: empty result iff all present values are in range and the
// required fields (age, sex) are present.
std::vector<Violation> validate_vector(const FeatureVector& v, const FeatureSchema& s);

struct LabeledCohort {
    FeatureSchema schema = FeatureSchema::canonical();
    std::string dataset_tag;  // "internal", "external", ...
    std::vector<std::string> record_ids;
    std::vector<FeatureVector> samples;
    std::vector<TargetCode> targets;
    std::vector<std::uint8_t> labels;  // row-major, samples x targets
    std::vector<int> fold_of;          // empty until folds assigned

    std::size_t size() const { return samples.size(); }
    int n_targets() const { return static_cast<int>(targets.size()); }
    std::uint8_t label(std::size_t i, int t) const {
        return labels[i * targets.size() + static_cast<std::size_t>(t)];
    }
    double prevalence(int t) const;
};

// (ancestor, descendant) index pairs: targets[a].code is a proper prefix of
// targets[d].code.
std::vector<std::pair<int, int>> prefix_pairs(const std::vector<TargetCode>& targets);

// Prefix labeling consistency: every descendant-positive sample is also
// ancestor-positive.
bool labels_hierarchy_consistent(const LabeledCohort& c);

// Structural invariants: labels / fold_of sizes, fold indices in range.
void validate_cohort(const LabeledCohort& c);

// Dense column-major view used by the learner and the explainer.
// NaN encodes a missing value.
struct FeatureMatrix {
    std::size_t rows = 0;
    int cols = 0;
    std::vector<double> data;  // column-major

    double at(std::size_t r, int c) const { return data[static_cast<std::size_t>(c) * rows + r]; }
    double& at(std::size_t r, int c) { return data[static_cast<std::size_t>(c) * rows + r]; }
    std::span<const double> column(int c) const {
        return {data.data() + static_cast<std::size_t>(c) * rows, rows};
    }
    void get_row(std::size_t r, std::span<double> out) const {
        for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c)] = at(r, c);
    }
};

FeatureMatrix to_matrix(const LabeledCohort& c);
FeatureMatrix gather_rows(const FeatureMatrix& m, std::span<const std::size_t> rows);

}  // namespace ecgdx
